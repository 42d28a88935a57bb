use lesiongan::data::{real_pyramid, Interpolation};
use lesiongan::graph;
use lesiongan::rng::sample_uniform;
use lesiongan::{Rng, Tensor};

fn random_images(seed: u64, n: usize, res: usize) -> Tensor {
    sample_uniform(&mut Rng::new(seed), &[n, 3, res, res], -1.0, 1.0)
}

#[test]
fn thousand_images_reconstruct_bitwise() {
    for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
        let mut checked = 0;
        for chunk in 0..10u64 {
            let batch = random_images(chunk, 100, 32);
            let pyr = real_pyramid(&batch, 3, interp).unwrap();
            for k in 1..pyr.levels() {
                let recon = pyr.reconstruct(k).unwrap();
                let image = pyr.image(k);
                assert_eq!(recon.shape(), image.shape());
                for (a, b) in recon.data().iter().zip(image.data()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "{interp} level {k}");
                }
            }
            checked += batch.shape()[0];
        }
        assert_eq!(checked, 1000);
    }
}

#[test]
fn levels_are_average_pooled_images() {
    let batch = random_images(7, 4, 16);
    let pyr = real_pyramid(&batch, 3, Interpolation::Nearest).unwrap();
    assert_eq!(pyr.image(2), &batch);
    assert_eq!(pyr.image(1), &graph::downsample_avg(&batch, 2).unwrap());
    assert_eq!(pyr.image(0).shape(), &[4, 3, 4, 4]);
    assert!(pyr.residual(0).is_none());
}

#[test]
fn residual_matches_difference_oracle() {
    // independent oracle: nearest upsample by hand, subtract in f64
    let batch = random_images(3, 2, 8);
    let pyr = real_pyramid(&batch, 2, Interpolation::Nearest).unwrap();
    let low = pyr.image(0);
    let r = pyr.residual(1).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let hi = batch.data()[((n * 3 + c) * 8 + y) * 8 + x] as f64;
                    let lo = low.data()[((n * 3 + c) * 4 + y / 2) * 4 + x / 2] as f64;
                    assert_eq!(r.data()[((n * 3 + c) * 8 + y) * 8 + x], hi - lo);
                }
            }
        }
    }
}
