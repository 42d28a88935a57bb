//! Central finite-difference checks of the analytic gradients.
//!
//! Every check runs in `f64`. The loss is `Σ wᵢ·yᵢ` for fixed random weights
//! `w`, so every output element contributes a distinct cotangent. Numerical
//! derivatives only call the forward pass.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::{sample_normal, sample_uniform, Rng};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
/// Denominator floor: gradients whose magnitudes are both below this are
/// compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub op: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= REL_TOL
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

type Builder<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn weighted_loss(build: &Builder<'_>, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).dot(weights))
}

/// Compares analytic and central-difference gradients of `build` w.r.t. all
/// of `inputs`.
pub fn check(
    op: &str,
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    build: &Builder<'_>,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = Rng::with_stream(seed, 0xfd);
    let weights: Tensor<f64> = sample_normal(&mut rng, g.shape(out));
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod);
    g.backward(loss)?;

    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = match g.grad(*var) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (weighted_loss(build, &plus, &weights)?
                - weighted_loss(build, &minus, &weights)?)
                / (2.0 * STEP);
            max_rel_error = max_rel_error.max(rel_error(analytic[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        op: op.to_string(),
        seed,
        checked,
        max_rel_error,
    })
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    sample_normal(rng, shape)
}

/// Normal draws pushed at least `gap` away from every point in `kinks`, so a
/// ±STEP perturbation never straddles a non-differentiable point.
fn away_from(rng: &mut Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor<f64> {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = if *v >= k { k + gap } else { k - gap };
            }
        }
    }
    t
}

/// Every differentiable graph operation and the composite losses, each on
/// random inputs drawn from `seed`.
pub fn suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let r = &mut rng;

    out.push(check(
        "conv2d",
        seed,
        vec![normal(r, &[2, 3, 8, 8]), normal(r, &[4, 3, 3, 3]), normal(r, &[4])],
        &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
    )?);
    out.push(check(
        "conv2d_s1",
        seed,
        vec![normal(r, &[1, 2, 5, 6]), normal(r, &[3, 2, 3, 3]), normal(r, &[3])],
        &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    )?);
    out.push(check(
        "deconv2d",
        seed,
        vec![normal(r, &[2, 3, 4, 4]), normal(r, &[3, 2, 4, 4]), normal(r, &[2])],
        &|g, v| g.deconv2d(v[0], v[1], Some(v[2]), 2, 1),
    )?);
    out.push(check(
        "dense",
        seed,
        vec![normal(r, &[3, 5]), normal(r, &[5, 4]), normal(r, &[4])],
        &|g, v| g.dense(v[0], v[1], Some(v[2])),
    )?);
    out.push(check(
        "upsample_nearest",
        seed,
        vec![normal(r, &[2, 2, 3, 3])],
        &|g, v| g.upsample_nearest(v[0], 2),
    )?);
    out.push(check(
        "upsample_bilinear",
        seed,
        vec![normal(r, &[1, 2, 3, 4])],
        &|g, v| g.upsample_bilinear(v[0], 2),
    )?);
    out.push(check(
        "downsample_avg",
        seed,
        vec![normal(r, &[2, 2, 4, 4])],
        &|g, v| g.downsample_avg(v[0], 2),
    )?);
    out.push(check(
        "leaky_relu",
        seed,
        vec![away_from(r, &[3, 7], &[0.0], 0.05)],
        &|g, v| Ok(g.leaky_relu(v[0], 0.2)),
    )?);
    out.push(check("tanh", seed, vec![normal(r, &[4, 5])], &|g, v| Ok(g.tanh(v[0])))?);
    out.push(check("sigmoid", seed, vec![normal(r, &[4, 5])], &|g, v| {
        Ok(g.sigmoid(v[0]))
    })?);
    out.push(check(
        "ln",
        seed,
        vec![sample_uniform(r, &[10], 0.5, 2.0)],
        &|g, v| Ok(g.ln(v[0])),
    )?);
    out.push(check(
        "clamp",
        seed,
        vec![away_from(r, &[12], &[-0.5, 0.5], 0.05)],
        &|g, v| Ok(g.clamp(v[0], -0.5, 0.5)),
    )?);
    out.push(check(
        "abs",
        seed,
        vec![away_from(r, &[12], &[0.0], 0.05)],
        &|g, v| Ok(g.abs(v[0])),
    )?);
    out.push(check(
        "add_sub_mul_scale",
        seed,
        vec![normal(r, &[2, 6]), normal(r, &[2, 6])],
        &|g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(v[0], v[1])?;
            let p = g.mul(s, d)?;
            let q = g.mul(v[0], v[0])?;
            let p = g.add(p, q)?;
            let p = g.scale(p, 0.7);
            Ok(g.add_scalar(p, -1.5))
        },
    )?);
    out.push(check(
        "sum_mean_reshape",
        seed,
        vec![normal(r, &[2, 3, 2, 2])],
        &|g, v| {
            let flat = g.reshape(v[0], &[4, 6])?;
            let t = g.tanh(flat);
            let s = g.sum(t);
            let m = g.mean(v[0]);
            let m = g.scale(m, 3.0);
            g.add(s, m)
        },
    )?);
    out.push(check(
        "batch_norm",
        seed,
        vec![normal(r, &[4, 3, 2, 2]), normal(r, &[3]), normal(r, &[3])],
        &|g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5)?.0),
    )?);
    out.push(check(
        "batch_norm_dense",
        seed,
        vec![normal(r, &[5, 4]), normal(r, &[4]), normal(r, &[4])],
        &|g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5)?.0),
    )?);
    let stats_mean = normal(r, &[3]).into_data();
    let stats_var: Vec<f64> = sample_uniform::<f64>(r, &[3], 0.5, 2.0).into_data();
    out.push(check(
        "batch_norm_inference",
        seed,
        vec![normal(r, &[2, 3, 2, 3]), normal(r, &[3]), normal(r, &[3])],
        &|g, v| g.batch_norm_inference(v[0], v[1], v[2], &stats_mean, &stats_var, 1e-5),
    )?);
    out.push(check(
        "concat_channels",
        seed,
        vec![normal(r, &[2, 3, 3, 3]), normal(r, &[2, 1, 3, 3])],
        &|g, v| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            Ok(g.tanh(c))
        },
    )?);
    out.push(check(
        "global_avg_pool",
        seed,
        vec![normal(r, &[2, 3, 4, 4])],
        &|g, v| g.global_avg_pool(v[0]),
    )?);
    let labels: Vec<usize> = (0..4).map(|_| r.below(3)).collect();
    out.push(check(
        "softmax_cross_entropy",
        seed,
        vec![normal(r, &[4, 3])],
        &|g, v| g.softmax_cross_entropy(v[0], &labels),
    )?);

    // Composite losses and the bounded residual update used by the generators.
    let probs = |r: &mut Rng| sample_uniform::<f64>(r, &[6], 0.05, 0.95);
    out.push(check(
        "vanilla_losses",
        seed,
        vec![probs(r), probs(r)],
        &|g, v| {
            let d = crate::train::vanilla_d_loss(g, v[0], v[1])?;
            let gl = crate::train::vanilla_g_loss(g, v[1])?;
            g.add(d, gl)
        },
    )?);
    out.push(check(
        "lsgan_losses",
        seed,
        vec![normal(r, &[6]), normal(r, &[6])],
        &|g, v| {
            let (d, gl) = crate::train::lsgan_losses(g, v[0], v[1])?;
            g.add(d, gl)
        },
    )?);
    out.push(check(
        "bounded_residual",
        seed,
        vec![
            sample_uniform(r, &[2, 3, 2, 2], -0.9, 0.9),
            away_from(r, &[2, 3, 2, 2], &[0.0], 0.05),
        ],
        &|g, v| crate::zoo::bounded_residual(g, v[0], v[1]).map(|(img, _)| img),
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // A detached path has zero analytic gradient but a non-zero numeric one.
        let report = check("detached", 1, vec![Tensor::from_fn([3], |i| i as f64 + 1.0)], &|g, v| {
            let d = g.detach(v[0]);
            g.mul(d, d)
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn quadratic_is_exact() {
        let report = check("square", 3, vec![Tensor::from_fn([4], |i| i as f64 - 1.5)], &|g, v| {
            g.mul(v[0], v[0])
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 4);
    }
}
