//! Procedural lesion-like images: a skin-toned background with one shaded
//! ellipse whose boundary carries a sinusoidal perturbation, plus speckle.
//!
//! Colors are specified in [0, 1] and mapped to [-1, 1] at the end.

use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-class appearance ranges; every `[lo, hi]` pair is sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub blob_color: [f64; 3],
    pub color_jitter: f64,
    /// Semi-major axis as a fraction of the resolution.
    pub radius: [f64; 2],
    /// Minor over major axis.
    pub eccentricity: [f64; 2],
    /// Boundary perturbation amplitude relative to the radius.
    pub irregularity: [f64; 2],
    pub lobes: [usize; 2],
    /// Speckle standard deviation in [0, 1] units.
    pub noise: [f64; 2],
    /// Darkening towards the lesion center.
    pub shading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionParams {
    pub skin_tone: [f64; 3],
    pub skin_jitter: f64,
    pub benign: ClassParams,
    pub melanoma: ClassParams,
    pub keratosis: ClassParams,
    /// Scales every class's irregularity; 0 gives perfect ellipses.
    pub irregularity_gain: f64,
    /// Scales every class's speckle; 0 gives noise-free images.
    pub noise_gain: f64,
}

impl Default for LesionParams {
    fn default() -> Self {
        Self {
            skin_tone: [0.86, 0.68, 0.58],
            skin_jitter: 0.06,
            benign: ClassParams {
                blob_color: [0.58, 0.40, 0.30],
                color_jitter: 0.10,
                radius: [0.18, 0.32],
                eccentricity: [0.7, 1.0],
                irregularity: [0.0, 0.08],
                lobes: [3, 5],
                noise: [0.01, 0.03],
                shading: 0.15,
            },
            melanoma: ClassParams {
                blob_color: [0.40, 0.26, 0.24],
                color_jitter: 0.10,
                radius: [0.20, 0.36],
                eccentricity: [0.55, 0.95],
                irregularity: [0.06, 0.22],
                lobes: [4, 8],
                noise: [0.02, 0.05],
                shading: 0.35,
            },
            keratosis: ClassParams {
                blob_color: [0.55, 0.45, 0.32],
                color_jitter: 0.10,
                radius: [0.16, 0.30],
                eccentricity: [0.45, 0.85],
                irregularity: [0.03, 0.12],
                lobes: [5, 9],
                noise: [0.04, 0.08],
                shading: 0.10,
            },
            irregularity_gain: 1.0,
            noise_gain: 1.0,
        }
    }
}

impl LesionParams {
    pub fn class(&self, label: ClassLabel) -> &ClassParams {
        match label {
            ClassLabel::Benign => &self.benign,
            ClassLabel::Melanoma => &self.melanoma,
            ClassLabel::Keratosis => &self.keratosis,
        }
    }
}

/// Geometry of one rendered lesion, in pixel units with pixel centers at
/// half-integers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LesionShape {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub amplitude: f64,
    pub lobes: usize,
    pub phase: f64,
}

impl LesionShape {
    /// Normalized radius of `(x, y)` and the perturbed boundary radius along
    /// its direction; the point is inside when the first is at most the
    /// second.
    pub fn radii(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        let r = u.hypot(v);
        let boundary = 1.0 + self.amplitude * (self.lobes as f64 * v.atan2(u) + self.phase).sin();
        (r, boundary)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (r, b) = self.radii(x, y);
        r <= b
    }
}

#[derive(Clone, Debug)]
pub struct Lesion {
    /// `[1, 3, R, R]` in [-1, 1].
    pub image: Tensor,
    pub shape: LesionShape,
}

fn pick(rng: &mut Rng, range: [f64; 2]) -> f64 {
    rng.uniform_range(range[0], range[1])
}

pub fn generate_lesion(rng: &mut Rng, label: ClassLabel, resolution: usize, params: &LesionParams) -> Result<Lesion> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!("lesion resolution {resolution} is below 8")));
    }
    let cp = params.class(label);
    let res = resolution as f64;
    let skin: [f64; 3] = std::array::from_fn(|c| params.skin_tone[c] + params.skin_jitter * (2.0 * rng.uniform() - 1.0));
    let tint = cp.color_jitter * (2.0 * rng.uniform() - 1.0);
    let blob: [f64; 3] = std::array::from_fn(|c| {
        cp.blob_color[c] + tint + 0.3 * cp.color_jitter * (2.0 * rng.uniform() - 1.0)
    });
    let semi_major = pick(rng, cp.radius) * res;
    let shape = LesionShape {
        cx: res / 2.0 + 0.08 * res * (2.0 * rng.uniform() - 1.0),
        cy: res / 2.0 + 0.08 * res * (2.0 * rng.uniform() - 1.0),
        semi_major,
        semi_minor: semi_major * pick(rng, cp.eccentricity),
        angle: std::f64::consts::PI * rng.uniform(),
        amplitude: params.irregularity_gain * pick(rng, cp.irregularity),
        lobes: cp.lobes[0] + rng.below(cp.lobes[1] - cp.lobes[0] + 1),
        phase: std::f64::consts::TAU * rng.uniform(),
    };
    let noise = params.noise_gain * pick(rng, cp.noise);

    let plane = resolution * resolution;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..resolution {
        for x in 0..resolution {
            let (r, boundary) = shape.radii(x as f64 + 0.5, y as f64 + 0.5);
            let base = if r <= boundary {
                let depth = 1.0 - cp.shading * (1.0 - r / boundary);
                blob.map(|c| c * depth)
            } else {
                skin
            };
            for c in 0..3 {
                let speckle = if noise > 0.0 { noise * rng.normal() } else { 0.0 };
                let v = (2.0 * (base[c] + speckle) - 1.0).clamp(-1.0, 1.0);
                data[c * plane + y * resolution + x] = v as f32;
            }
        }
    }
    Ok(Lesion {
        image: Tensor::new([1, 3, resolution, resolution], data)?,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let p = LesionParams::default();
        let a = generate_lesion(&mut Rng::new(3), ClassLabel::Melanoma, 32, &p).unwrap();
        let b = generate_lesion(&mut Rng::new(3), ClassLabel::Melanoma, 32, &p).unwrap();
        assert_eq!(a.image, b.image);
        let (lo, hi) = a.image.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
        assert!(generate_lesion(&mut Rng::new(3), ClassLabel::Benign, 4, &p).is_err());
    }

    #[test]
    fn center_is_inside() {
        let p = LesionParams::default();
        let l = generate_lesion(&mut Rng::new(5), ClassLabel::Keratosis, 64, &p).unwrap();
        assert!(l.shape.contains(l.shape.cx, l.shape.cy));
        assert!(!l.shape.contains(0.5, 0.5));
    }
}
