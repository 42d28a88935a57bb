//! Laplacian pyramids of real image batches.
//!
//! `I[k-1] = downsample_avg(I[k], 2)` and `R[k] = I[k] - up(I[k-1])`.
//! Residuals are held in `f64`: the difference of two `f32` values is exact
//! in `f64` (barring exponent gaps beyond 29 bits), so rounding
//! `up(I[k-1]) + R[k]` back to `f32` reproduces `I[k]` bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Graph, Var};
use crate::tensor::Tensor;

/// Non-parametric 2× upsampling used between pyramid levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Nearest,
    Bilinear,
}

impl Interpolation {
    pub fn upsample(self, t: &Tensor) -> Result<Tensor> {
        match self {
            Interpolation::Nearest => graph::upsample_nearest(t, 2),
            Interpolation::Bilinear => graph::upsample_bilinear(t, 2),
        }
    }

    pub fn upsample_var(self, g: &mut Graph<f32>, v: Var) -> Result<Var> {
        match self {
            Interpolation::Nearest => g.upsample_nearest(v, 2),
            Interpolation::Bilinear => g.upsample_bilinear(v, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            _ => Err(Error::Config(format!("unknown interpolation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    /// Level images, lowest resolution first.
    images: Vec<Tensor>,
    /// `residuals[k - 1]` is the residual of level `k`.
    residuals: Vec<Tensor<f64>>,
    upsampled: Vec<Tensor>,
}

/// Decomposes a top-resolution batch into `levels` pyramid levels.
pub fn real_pyramid(batch: &Tensor, levels: usize, interp: Interpolation) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    let (_, _, h, w) = batch.dims4("real_pyramid")?;
    let factor = 1usize << (levels - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(
            "real_pyramid",
            "resolution",
            format!("multiple of {factor}"),
            format!("{h}x{w}"),
        ));
    }
    let mut images = vec![batch.clone()];
    for _ in 1..levels {
        let lower = graph::downsample_avg(images.last().expect("non-empty"), 2)?;
        images.push(lower);
    }
    images.reverse();

    let mut residuals = Vec::with_capacity(levels - 1);
    let mut upsampled = Vec::with_capacity(levels - 1);
    for k in 1..levels {
        let up = interp.upsample(&images[k - 1])?;
        let data = images[k]
            .data()
            .iter()
            .zip(up.data())
            .map(|(&i, &u)| i as f64 - u as f64)
            .collect();
        residuals.push(Tensor::new(images[k].shape().to_vec(), data)?);
        upsampled.push(up);
    }
    Ok(Pyramid {
        images,
        residuals,
        upsampled,
    })
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.images.len()
    }

    pub fn image(&self, level: usize) -> &Tensor {
        &self.images[level]
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    /// Residual of `level`; `None` for the base level.
    pub fn residual(&self, level: usize) -> Option<&Tensor<f64>> {
        level.checked_sub(1).map(|k| &self.residuals[k])
    }

    pub fn residual_f32(&self, level: usize) -> Option<Tensor> {
        self.residual(level).map(|r| r.cast())
    }

    /// `up(I[level - 1])`; `None` for the base level.
    pub fn upsampled(&self, level: usize) -> Option<&Tensor> {
        level.checked_sub(1).map(|k| &self.upsampled[k])
    }

    /// `up(I[level - 1]) + R[level]`, rounded to `f32`.
    pub fn reconstruct(&self, level: usize) -> Option<Tensor> {
        let (up, res) = (self.upsampled(level)?, self.residual(level)?);
        let data = up
            .data()
            .iter()
            .zip(res.data())
            .map(|(&u, &r)| (u as f64 + r) as f32)
            .collect();
        Tensor::new(up.shape().to_vec(), data).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_uniform, Rng};

    #[test]
    fn constant_image_has_zero_residuals() {
        let t = Tensor::full([2, 3, 8, 8], 0.3);
        let p = real_pyramid(&t, 3, Interpolation::Nearest).unwrap();
        assert_eq!(p.image(0).shape(), &[2, 3, 2, 2]);
        for k in 1..3 {
            assert!(p.residual(k).unwrap().data().iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn checkerboard_hand_computation() {
        // 4×4, 2×2-period checkerboard of a and b.
        let (a, b) = (0.75f32, -0.25f32);
        let img = Tensor::from_fn([1, 1, 4, 4], |i| if (i / 4 + i % 4) % 2 == 0 { a } else { b });
        let p = real_pyramid(&img, 2, Interpolation::Nearest).unwrap();
        let mid = 0.5 * (a + b);
        assert!(p.image(0).data().iter().all(|&v| v == mid));
        let r = p.residual(1).unwrap();
        for (i, &v) in r.data().iter().enumerate() {
            let want = if (i / 4 + i % 4) % 2 == 0 { (a - b) / 2.0 } else { -(a - b) / 2.0 };
            assert_eq!(v, want as f64);
        }
    }

    #[test]
    fn reconstruction_is_bitwise_for_both_interpolations() {
        let mut rng = Rng::new(9);
        for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
            let t: Tensor = sample_uniform(&mut rng, &[3, 3, 16, 16], -1.0, 1.0);
            let p = real_pyramid(&t, 3, interp).unwrap();
            for k in 1..3 {
                let rec = p.reconstruct(k).unwrap();
                let same = rec.data().iter().zip(p.image(k).data()).all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "{interp} level {k}");
            }
        }
    }

    #[test]
    fn indivisible_resolution_is_an_error() {
        let t = Tensor::zeros([1, 3, 10, 10]);
        assert!(real_pyramid(&t, 3, Interpolation::Nearest).is_err());
        assert!(real_pyramid(&t, 2, Interpolation::Nearest).is_ok());
    }
}
