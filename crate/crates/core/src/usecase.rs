//! Class-imbalance experiment: a small classifier trained on the full,
//! the minority-reduced, and the synthetically restored training sets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{
    build_dataset, reduce_class, restore_with_synthetic, split_dataset, ClassCounts, ClassLabel, ExperimentDataset,
    LesionParams,
};
use crate::error::{Error, Result};
use crate::nn::{apply_stat_updates, BatchNorm, Conv2d, Dense, Mode, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{self, AdamConfig, OptimizerState, TrainConfig};
use crate::zoo::{GanModel, ModelKind, PyramidSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    /// One stride-2 `conv3×3 → BN → relu` block per entry.
    pub widths: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32],
            batch_size: 16,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub store: ParamStore,
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm>,
    head: Dense,
}

impl Classifier {
    pub fn new(spec: &ClassifierSpec, seed: u64) -> Result<Self> {
        if spec.widths.is_empty() || spec.widths.contains(&0) || spec.batch_size == 0 {
            return Err(Error::Config("classifier needs positive widths and batch_size".into()));
        }
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut ch = 3;
        for (i, &w) in spec.widths.iter().enumerate() {
            convs.push(Conv2d::new(format!("c.conv{i}"), ch, w, 3, 2, 1));
            bns.push(BatchNorm::new(format!("c.bn{i}"), w));
            ch = w;
        }
        let head = Dense::new("c.head", ch, ClassLabel::COUNT);
        let mut store = ParamStore::new();
        let mut rng = Rng::with_stream(seed, 0xc1a5);
        for conv in &convs {
            conv.init(&mut store, &mut rng);
        }
        for bn in &bns {
            bn.init(&mut store, &mut rng);
        }
        head.init(&mut store, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            store,
            convs,
            bns,
            head,
        })
    }

    fn forward(&self, s: &mut Session, x: crate::graph::Var) -> Result<crate::graph::Var> {
        let mut h = x;
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = conv.forward(s, h)?;
            h = bn.forward(s, h)?;
            h = s.graph.relu(h);
        }
        let pooled = s.graph.global_avg_pool(h)?;
        self.head.forward(s, pooled)
    }

    /// `[N, 3]` logits using running batch-norm statistics.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.store, Mode::Eval, &[]);
        let x = s.input(images.clone());
        let y = self.forward(&mut s, x)?;
        Ok(s.graph.value(y).clone())
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let mut preds = Vec::with_capacity(n);
        for start in (0..n).step_by(64) {
            let logits = self.logits(&images.slice_outer(start, (start + 64).min(n))?)?;
            preds.extend(logits.data().chunks_exact(ClassLabel::COUNT).map(argmax));
        }
        Ok(preds)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_of(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

pub fn accuracy(clf: &Classifier, ds: &ExperimentDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch("accuracy"));
    }
    Ok(accuracy_of(&clf.predict(&ds.images()?)?, &ds.labels()))
}

/// Softmax cross-entropy training with Adam; deterministic in `seed`.
pub fn train_classifier(ds: &ExperimentDataset, spec: &ClassifierSpec, epochs: usize, seed: u64) -> Result<Classifier> {
    let counts = ds.counts();
    if let Some(missing) = ClassLabel::ALL.into_iter().find(|&l| counts[l] == 0) {
        return Err(Error::Dataset(format!("training set has no {missing} samples")));
    }
    let mut clf = Classifier::new(spec, seed)?;
    let images = ds.images()?;
    let labels = ds.labels();
    let mut opt = OptimizerState::new(AdamConfig {
        lr: spec.lr,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let names = clf.store.trainable_names("c.");
    let mut rng = Rng::with_stream(seed, 0xc1a6);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(spec.batch_size) {
            let batch = images.select_outer(chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (grads, stats) = {
                let mut s = Session::new(&clf.store, Mode::Train, &["c."]);
                let x = s.input(batch);
                let logits = clf.forward(&mut s, x)?;
                let loss = s.graph.softmax_cross_entropy(logits, &batch_labels)?;
                s.graph.backward(loss)?;
                let stats: Vec<_> = s.stat_updates("c.").cloned().collect();
                (s.grads(), stats)
            };
            opt.adam_step(&mut clf.store, &names, &grads)?;
            apply_stat_updates(&mut clf.store, &stats)?;
        }
    }
    Ok(clf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UseCaseConfig {
    pub counts: ClassCounts,
    pub resolution: usize,
    pub minority: ClassLabel,
    /// Fraction of the minority's training count kept in the imbalanced arm.
    pub reduce_to: f64,
    pub train_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `full`, `imbalanced`, or a generator kind for a restored arm.
    pub arms: Vec<String>,
    /// Restored arm `k` reads `<checkpoint_dir>/<k>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// When positive, restored arms without a checkpoint train their
    /// generator in-process for this many steps on the minority training
    /// images.
    pub generator_steps: usize,
    pub classifier: ClassifierSpec,
}

impl Default for UseCaseConfig {
    fn default() -> Self {
        Self {
            counts: ClassCounts::new(500, 150, 100),
            resolution: 64,
            minority: ClassLabel::Melanoma,
            reduce_to: 0.12,
            train_fraction: 0.6,
            epochs: 30,
            seed: 0,
            arms: ["full", "imbalanced", "lapgan", "ddgan-up", "ddgan-deconv"]
                .map(String::from)
                .to_vec(),
            checkpoint_dir: None,
            generator_steps: 0,
            classifier: ClassifierSpec::default(),
        }
    }
}

impl UseCaseConfig {
    pub fn validate(&self) -> Result<()> {
        for arm in &self.arms {
            if arm != "full" && arm != "imbalanced" {
                arm.parse::<ModelKind>()?;
            }
        }
        if !(self.reduce_to > 0.0 && self.reduce_to <= 1.0) {
            return Err(Error::Config("reduce_to must lie in (0, 1]".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("usecase epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub train_counts: ClassCounts,
    pub synthetic_added: usize,
    /// Why the arm did not run.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UseCaseReport {
    pub seed: u64,
    /// Fingerprint of the validation set every arm is scored on.
    pub val_hash: String,
    pub val_counts: ClassCounts,
    pub arms: Vec<ArmReport>,
}

impl UseCaseReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["arm", "train_acc", "val_acc", "benign", "melanoma", "keratosis", "synthetic_added", "skipped"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for a in &self.arms {
            w.write_record([
                a.arm.clone(),
                opt(a.train_acc),
                opt(a.val_acc),
                a.train_counts.benign.to_string(),
                a.train_counts.melanoma.to_string(),
                a.train_counts.keratosis.to_string(),
                a.synthetic_added.to_string(),
                a.skipped.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

/// Generator for a restored arm: a checkpoint if present, otherwise an
/// in-process training run when enabled.
fn arm_generator(
    kind: ModelKind,
    cfg: &UseCaseConfig,
    gan_spec: &PyramidSpec,
    gan_train: &TrainConfig,
    minority: &Tensor,
    out: Option<&Path>,
) -> Result<std::result::Result<GanModel, String>> {
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join(format!("{kind}.ckpt"));
        if path.exists() {
            let model = GanModel::from_checkpoint(&Checkpoint::load(&path)?)?;
            return Ok(Ok(model));
        }
    }
    if cfg.generator_steps == 0 {
        return Ok(Err(format!("no checkpoint for {kind}")));
    }
    if gan_spec.top_resolution() != cfg.resolution {
        return Err(Error::Config(format!(
            "generator top resolution {} differs from usecase resolution {}",
            gan_spec.top_resolution(),
            cfg.resolution
        )));
    }
    let mut model = GanModel::build(kind, gan_spec, cfg.seed)?;
    let tc = TrainConfig {
        steps: cfg.generator_steps,
        epochs: usize::MAX / 2,
        seed: cfg.seed,
        checkpoint_every: 0,
        log_every: cfg.generator_steps,
        ..gan_train.clone()
    };
    let run_dir = out.map(|d| d.join(format!("gan_{kind}")));
    train::train(&mut model, minority, &tc, run_dir.as_deref())?;
    Ok(Ok(model))
}

/// Runs every configured arm on one stratified split.
pub fn run_use_case(cfg: &UseCaseConfig, gan_spec: &PyramidSpec, gan_train: &TrainConfig, out: Option<&Path>) -> Result<UseCaseReport> {
    cfg.validate()?;
    let seed = cfg.seed;
    let ds = build_dataset(&mut Rng::with_stream(seed, 10), cfg.counts, cfg.resolution, &LesionParams::default())?;
    let (train_set, val_set) = split_dataset(&ds, cfg.train_fraction, &mut Rng::with_stream(seed, 11))?;
    let full_counts = train_set.counts();
    let full_minority = full_counts[cfg.minority];
    let target = ((full_minority as f64 * cfg.reduce_to).round() as usize).clamp(1, full_minority.max(1));
    let imbalanced = reduce_class(&train_set, cfg.minority, target, &mut Rng::with_stream(seed, 12))?;
    let clf_seed = seed ^ 0x5eed;

    let mut arms = Vec::new();
    for (i, name) in cfg.arms.iter().enumerate() {
        let arm_train = match name.as_str() {
            "full" => train_set.clone(),
            "imbalanced" => imbalanced.clone(),
            other => {
                let kind: ModelKind = other.parse()?;
                let minority = train_set.class_images(cfg.minority)?;
                match arm_generator(kind, cfg, gan_spec, gan_train, &minority, out)? {
                    Ok(model) => restore_with_synthetic(
                        &imbalanced,
                        cfg.minority,
                        full_minority,
                        &model,
                        &mut Rng::with_stream(seed, 20 + i as u64),
                    )?,
                    Err(reason) => {
                        arms.push(ArmReport {
                            arm: name.clone(),
                            train_acc: None,
                            val_acc: None,
                            train_counts: imbalanced.counts(),
                            synthetic_added: 0,
                            skipped: Some(reason),
                        });
                        continue;
                    }
                }
            }
        };
        let clf = train_classifier(&arm_train, &cfg.classifier, cfg.epochs, clf_seed)?;
        arms.push(ArmReport {
            arm: name.clone(),
            train_acc: Some(accuracy(&clf, &arm_train)?),
            val_acc: Some(accuracy(&clf, &val_set)?),
            train_counts: arm_train.counts(),
            synthetic_added: arm_train.synthetic_count(),
            skipped: None,
        });
    }
    let report = UseCaseReport {
        seed,
        val_hash: format!("{:016x}", val_set.fingerprint()),
        val_counts: val_set.counts(),
        arms,
    };
    if let Some(dir) = out {
        report.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[-1.0, -2.0, 3.0]), 2);
    }

    #[test]
    fn accuracy_counts() {
        assert!((accuracy_of(&[1, 1, 0], &[1, 0, 0]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(accuracy_of(&[2, 0], &[2, 0]), 1.0);
    }

    #[test]
    fn missing_class_is_an_error() {
        let ds = build_dataset(&mut Rng::new(0), ClassCounts::new(3, 0, 2), 8, &LesionParams::default()).unwrap();
        assert!(train_classifier(&ds, &ClassifierSpec::default(), 1, 0).is_err());
    }

    #[test]
    fn unknown_arm_rejected() {
        let cfg = UseCaseConfig {
            arms: vec!["full".into(), "vae".into()],
            ..UseCaseConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
