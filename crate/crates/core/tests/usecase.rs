use lesiongan::data::{ClassLabel, ExperimentDataset, Provenance, Sample, Split};
use lesiongan::usecase::{accuracy, accuracy_of, train_classifier, ClassifierSpec};
use lesiongan::{Rng, Tensor};

/// Solid-color images: class `i` is saturated in channel `i`, with small
/// per-image brightness jitter. Linearly separable by mean color.
fn color_dataset(per_class: usize, seed: u64) -> ExperimentDataset {
    let mut rng = Rng::new(seed);
    let mut samples = Vec::new();
    for label in ClassLabel::ALL {
        for _ in 0..per_class {
            let level = rng.uniform_range(0.5, 0.9) as f32;
            let mut img = Tensor::full([1, 3, 16, 16], -0.5f32);
            let plane = 256;
            img.data_mut()[label.index() * plane..(label.index() + 1) * plane].fill(level);
            samples.push(Sample {
                image: img,
                label,
                provenance: Provenance::Real,
                split: Split::Train,
            });
        }
    }
    ExperimentDataset {
        resolution: 16,
        samples,
    }
}

#[test]
fn classifier_separates_solid_colors() {
    let ds = color_dataset(12, 0);
    let spec = ClassifierSpec {
        batch_size: 12,
        ..ClassifierSpec::default()
    };
    let clf = train_classifier(&ds, &spec, 50, 1).unwrap();
    assert_eq!(accuracy(&clf, &ds).unwrap(), 1.0);
}

#[test]
fn classifier_training_is_deterministic() {
    let ds = color_dataset(4, 3);
    let spec = ClassifierSpec::default();
    let a = train_classifier(&ds, &spec, 3, 7).unwrap();
    let b = train_classifier(&ds, &spec, 3, 7).unwrap();
    let images = ds.images().unwrap();
    assert_eq!(a.logits(&images).unwrap(), b.logits(&images).unwrap());
}

#[test]
fn accuracy_matches_a_counting_loop() {
    let mut rng = Rng::new(4);
    for _ in 0..200 {
        let n = 1 + rng.below(30);
        let preds: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let mut hits = 0;
        for i in 0..n {
            if preds[i] == labels[i] {
                hits += 1;
            }
        }
        assert_eq!(accuracy_of(&preds, &labels), hits as f64 / n as f64);
    }
    assert_eq!(accuracy_of(&[1, 1, 0], &[1, 0, 0]), 2.0 / 3.0);
}
