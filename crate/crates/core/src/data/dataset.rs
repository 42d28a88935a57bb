//! Labeled image collections and the split/imbalance manipulations.
//!
//! On disk a dataset is `<root>/<class>/<index>.ppm` plus `manifest.csv`
//! with columns `path,label,provenance,split`.

use std::fs::{self, File};
use std::ops::{Index, IndexMut};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lesion::{generate_lesion, LesionParams};
use super::ppm::{load_ppm, ppm_files, save_ppm};
use super::{ClassLabel, Provenance, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::zoo::GanModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub benign: usize,
    pub melanoma: usize,
    pub keratosis: usize,
}

impl ClassCounts {
    pub fn new(benign: usize, melanoma: usize, keratosis: usize) -> Self {
        Self {
            benign,
            melanoma,
            keratosis,
        }
    }

    pub fn total(&self) -> usize {
        self.benign + self.melanoma + self.keratosis
    }
}

impl Index<ClassLabel> for ClassCounts {
    type Output = usize;

    fn index(&self, label: ClassLabel) -> &usize {
        match label {
            ClassLabel::Benign => &self.benign,
            ClassLabel::Melanoma => &self.melanoma,
            ClassLabel::Keratosis => &self.keratosis,
        }
    }
}

impl IndexMut<ClassLabel> for ClassCounts {
    fn index_mut(&mut self, label: ClassLabel) -> &mut usize {
        match label {
            ClassLabel::Benign => &mut self.benign,
            ClassLabel::Melanoma => &mut self.melanoma,
            ClassLabel::Keratosis => &mut self.keratosis,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, 3, R, R]` in [-1, 1].
    pub image: Tensor,
    pub label: ClassLabel,
    pub provenance: Provenance,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentDataset {
    pub resolution: usize,
    pub samples: Vec<Sample>,
}

impl ExperimentDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    pub fn synthetic_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.provenance == Provenance::Synthetic)
            .count()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }

    /// All images stacked into `[N, 3, R, R]`.
    pub fn images(&self) -> Result<Tensor> {
        let parts: Vec<Tensor> = self.samples.iter().map(|s| s.image.clone()).collect();
        Tensor::stack_outer(&parts)
    }

    /// Images of one class stacked into `[N, 3, R, R]`.
    pub fn class_images(&self, label: ClassLabel) -> Result<Tensor> {
        let parts: Vec<Tensor> = self
            .samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.image.clone())
            .collect();
        if parts.is_empty() {
            return Err(Error::Dataset(format!("no {label} images")));
        }
        Tensor::stack_outer(&parts)
    }

    /// Stable content hash of the labels, provenance and pixels (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for s in &self.samples {
            eat(&[s.label as u8, s.provenance as u8, s.split as u8]);
            for v in s.image.data() {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            resolution: self.resolution,
            samples,
        }
    }
}

/// Generates exactly `counts` real images; sample `i` draws from its own
/// stream of the seed taken from `rng`.
pub fn build_dataset(rng: &mut Rng, counts: ClassCounts, resolution: usize, params: &LesionParams) -> Result<ExperimentDataset> {
    if counts.total() == 0 {
        return Err(Error::Dataset("all class counts are zero".into()));
    }
    let seed = rng.next_u64();
    let mut samples = Vec::with_capacity(counts.total());
    for label in ClassLabel::ALL {
        for _ in 0..counts[label] {
            let mut sample_rng = Rng::with_stream(seed, samples.len() as u64 + 1);
            samples.push(Sample {
                image: generate_lesion(&mut sample_rng, label, resolution, params)?.image,
                label,
                provenance: Provenance::Real,
                split: Split::Train,
            });
        }
    }
    Ok(ExperimentDataset { resolution, samples })
}

fn indices_of(ds: &ExperimentDataset, label: ClassLabel) -> Vec<usize> {
    (0..ds.len()).filter(|&i| ds.samples[i].label == label).collect()
}

/// Stratified split: each class contributes `round(n·train_fraction)`
/// randomly chosen samples to train and the rest to validation.
pub fn split_dataset(ds: &ExperimentDataset, train_fraction: f64, rng: &mut Rng) -> Result<(ExperimentDataset, ExperimentDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Dataset(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut is_train = vec![false; ds.len()];
    for label in ClassLabel::ALL {
        let mut idx = indices_of(ds, label);
        if idx.is_empty() {
            continue;
        }
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::Dataset(format!(
                "cannot stratify {} {label} samples at fraction {train_fraction}",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        for &i in &idx[..n_train] {
            is_train[i] = true;
        }
    }
    let tagged = |want: bool, split: Split| {
        ds.samples
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(s, _)| Sample { split, ..s.clone() })
            .collect::<Vec<_>>()
    };
    Ok((ds.with_samples(tagged(true, Split::Train)), ds.with_samples(tagged(false, Split::Val))))
}

/// Keeps `target_count` uniformly chosen samples of `label`.
pub fn reduce_class(ds: &ExperimentDataset, label: ClassLabel, target_count: usize, rng: &mut Rng) -> Result<ExperimentDataset> {
    let mut idx = indices_of(ds, label);
    if target_count > idx.len() {
        return Err(Error::Dataset(format!(
            "cannot reduce {label} from {} to {target_count}",
            idx.len()
        )));
    }
    rng.shuffle(&mut idx);
    let mut drop = vec![false; ds.len()];
    for &i in &idx[target_count..] {
        drop[i] = true;
    }
    let kept = ds
        .samples
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(ds.with_samples(kept))
}

/// Anything that can synthesize images at a given resolution.
pub trait SampleSource {
    fn resolution(&self) -> usize;
    /// `n` images as `[n, 3, R, R]`.
    fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor>;
}

impl SampleSource for GanModel {
    fn resolution(&self) -> usize {
        self.top_resolution()
    }

    fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        self.sample_n(n, rng, 64)
    }
}

/// Tops `label` up to `target_count` with synthetic training samples.
pub fn restore_with_synthetic(
    ds: &ExperimentDataset,
    label: ClassLabel,
    target_count: usize,
    source: &dyn SampleSource,
    rng: &mut Rng,
) -> Result<ExperimentDataset> {
    if source.resolution() != ds.resolution {
        return Err(Error::dim("restore_with_synthetic", "resolution", ds.resolution, source.resolution()));
    }
    let have = ds.counts()[label];
    if target_count < have {
        return Err(Error::Dataset(format!("{label} already has {have} > {target_count} samples")));
    }
    let mut out = ds.clone();
    let missing = target_count - have;
    if missing > 0 {
        let images = source.generate(missing, rng)?;
        for i in 0..missing {
            out.samples.push(Sample {
                image: images.slice_outer(i, i + 1)?,
                label,
                provenance: Provenance::Synthetic,
                split: Split::Train,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    label: ClassLabel,
    provenance: Provenance,
    split: Split,
}

impl ExperimentDataset {
    pub fn save_dir(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for label in ClassLabel::ALL {
            let dir = root.join(label.as_str());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let manifest = root.join("manifest.csv");
        let file = File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut w = csv::Writer::from_writer(file);
        for (i, s) in self.samples.iter().enumerate() {
            let rel = format!("{}/{i:06}.ppm", s.label);
            save_ppm(&s.image, root.join(&rel))?;
            w.serialize(ManifestRow {
                path: rel,
                label: s.label,
                provenance: s.provenance,
                split: s.split,
            })?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))
    }
}

/// Loads a dataset directory. Without a manifest every `<class>/*.ppm` is
/// taken as a real training sample.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> Result<ExperimentDataset> {
    let root = root.as_ref();
    let manifest = root.join("manifest.csv");
    let mut samples = Vec::new();
    if manifest.exists() {
        let mut r = csv::Reader::from_path(&manifest)?;
        for row in r.deserialize() {
            let row: ManifestRow = row?;
            samples.push(Sample {
                image: load_ppm(root.join(&row.path))?,
                label: row.label,
                provenance: row.provenance,
                split: row.split,
            });
        }
    } else {
        for label in ClassLabel::ALL {
            let dir = root.join(label.as_str());
            if !dir.is_dir() {
                continue;
            }
            for path in ppm_files(&dir)? {
                samples.push(Sample {
                    image: load_ppm(path)?,
                    label,
                    provenance: Provenance::Real,
                    split: Split::Train,
                });
            }
        }
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset(format!("no images under {}", root.display())))?;
    let resolution = first.image.shape()[2];
    if samples.iter().any(|s| s.image.shape() != [1, 3, resolution, resolution]) {
        return Err(Error::Dataset("images differ in size or are not square".into()));
    }
    Ok(ExperimentDataset { resolution, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(counts: ClassCounts) -> ExperimentDataset {
        build_dataset(&mut Rng::new(1), counts, 8, &LesionParams::default()).unwrap()
    }

    struct Flat(usize);

    impl SampleSource for Flat {
        fn resolution(&self) -> usize {
            self.0
        }

        fn generate(&self, n: usize, _: &mut Rng) -> Result<Tensor> {
            Ok(Tensor::zeros([n, 3, self.0, self.0]))
        }
    }

    #[test]
    fn build_counts_exact() {
        let ds = small(ClassCounts::new(5, 3, 2));
        assert_eq!(ds.counts(), ClassCounts::new(5, 3, 2));
        assert_eq!(ds.len(), 10);
        assert!(build_dataset(&mut Rng::new(1), ClassCounts::default(), 8, &LesionParams::default()).is_err());
    }

    #[test]
    fn reduce_then_restore() {
        let ds = small(ClassCounts::new(100, 20, 0));
        let mut rng = Rng::new(2);
        let reduced = reduce_class(&ds, ClassLabel::Melanoma, 5, &mut rng).unwrap();
        assert_eq!(reduced.counts(), ClassCounts::new(100, 5, 0));
        let restored = restore_with_synthetic(&reduced, ClassLabel::Melanoma, 20, &Flat(8), &mut rng).unwrap();
        assert_eq!(restored.counts(), ClassCounts::new(100, 20, 0));
        assert_eq!(restored.synthetic_count(), 15);
        assert!(reduce_class(&ds, ClassLabel::Melanoma, 21, &mut rng).is_err());
        assert!(restore_with_synthetic(&reduced, ClassLabel::Melanoma, 20, &Flat(16), &mut rng).is_err());
    }

    #[test]
    fn stratified_split_sizes() {
        let ds = small(ClassCounts::new(500, 0, 0));
        let (tr, va) = split_dataset(&ds, 0.6, &mut Rng::new(3)).unwrap();
        assert_eq!((tr.len(), va.len()), (300, 200));
        assert!(va.samples.iter().all(|s| s.split == Split::Val));
        let tiny = small(ClassCounts::new(1, 0, 0));
        assert!(split_dataset(&tiny, 0.6, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let ds = small(ClassCounts::new(2, 1, 1));
        let dir = tempfile::tempdir().unwrap();
        ds.save_dir(dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.counts(), ds.counts());
        // PPM quantization makes a second save byte-stable.
        let dir2 = tempfile::tempdir().unwrap();
        back.save_dir(dir2.path()).unwrap();
        let again = load_dataset_dir(dir2.path()).unwrap();
        assert_eq!(again, back);
        assert!(dir.path().join("benign/000000.ppm").exists());
    }
}
