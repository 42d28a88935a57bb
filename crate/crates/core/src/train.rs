//! Adversarial objectives, Adam, and the alternating multi-level loop.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ppm;
use crate::data::pyramid::real_pyramid;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::{self, ColorHistogram};
use crate::nn::{apply_stat_updates, Mode, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};
use crate::zoo::{GanModel, ModelKind, Noise};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Vanilla,
    #[default]
    LeastSquares,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Vanilla => "vanilla",
            LossKind::LeastSquares => "least_squares",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(LossKind::Vanilla),
            "least_squares" => Ok(LossKind::LeastSquares),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

fn half_mean_sq_dist<T: Float>(g: &mut Graph<T>, x: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(x, T::from_f64(-target));
    let sq = g.mul(d, d)?;
    let m = g.mean(sq);
    Ok(g.scale(m, T::from_f64(0.5)))
}

/// `½E[(D(x) − 1)²] + ½E[D(G(z))²]`.
pub fn lsgan_d_loss<T: Float>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let a = half_mean_sq_dist(g, real, 1.0)?;
    let b = half_mean_sq_dist(g, fake, 0.0)?;
    g.add(a, b)
}

/// `½E[(D(G(z)) − 1)²]`.
pub fn lsgan_g_loss<T: Float>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    half_mean_sq_dist(g, fake, 1.0)
}

pub fn lsgan_losses<T: Float>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<(Var, Var)> {
    Ok((lsgan_d_loss(g, real, fake)?, lsgan_g_loss(g, fake)?))
}

fn mean_log<T: Float>(g: &mut Graph<T>, p: Var) -> Var {
    let c = g.clamp(p, T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
    let l = g.ln(c);
    g.mean(l)
}

/// `−V = −(E[log D(x)] + E[log(1 − D(G(z)))])`, minimized by the
/// discriminator.
pub fn vanilla_d_loss<T: Float>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let a = mean_log(g, real);
    let neg = g.scale(fake, T::from_f64(-1.0));
    let one_minus = g.add_scalar(neg, T::one());
    let b = mean_log(g, one_minus);
    let v = g.add(a, b)?;
    Ok(g.scale(v, T::from_f64(-1.0)))
}

/// Non-saturating generator loss `−E[log D(G(z))]`.
pub fn vanilla_g_loss<T: Float>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    let m = mean_log(g, fake);
    Ok(g.scale(m, T::from_f64(-1.0)))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// The minimax value `E[log D(x)] + E[log(1 − D(G(z)))]`.
pub fn vanilla_value(real_probs: &[f64], fake_probs: &[f64]) -> Result<f64> {
    if real_probs.is_empty() || fake_probs.is_empty() {
        return Err(Error::EmptyBatch("vanilla_value"));
    }
    let a = mean(real_probs.iter().map(|&p| clamp_prob(p).ln()));
    let b = mean(fake_probs.iter().map(|&p| (1.0 - clamp_prob(p)).ln()));
    Ok(a + b)
}

/// `(L_D, L_G)` of the least-squares objective on raw scores.
pub fn lsgan_values(real_scores: &[f64], fake_scores: &[f64]) -> Result<(f64, f64)> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::EmptyBatch("lsgan_losses"));
    }
    let d = 0.5 * mean(real_scores.iter().map(|&s| (s - 1.0) * (s - 1.0)))
        + 0.5 * mean(fake_scores.iter().map(|&s| s * s));
    let g = 0.5 * mean(fake_scores.iter().map(|&s| (s - 1.0) * (s - 1.0)));
    Ok((d, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one group of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `names`. Every name needs a gradient;
    /// nothing is modified otherwise.
    pub fn adam_step(&mut self, store: &mut ParamStore, names: &[String], grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in names {
            let grad = grads.get(name).ok_or_else(|| Error::MissingGrad(name.clone()))?;
            if grad.shape() != store.value(name)?.shape() {
                return Err(Error::dim("adam_step", "grad", format!("{:?}", store.value(name)?.shape()), format!("{:?}", grad.shape())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for name in names {
            let grad = grads[name].data();
            let theta = store.value_mut(name)?.data_mut();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                let g = grad[i] as f64;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                theta[i] = (theta[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training stops after this many epochs or `steps` steps, whichever
    /// comes first.
    pub epochs: usize,
    /// Step cap; 0 disables it.
    pub steps: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Per-level weights of the joint generator loss; empty means all ones.
    pub level_weights: Vec<f64>,
    pub log_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Generated images behind the per-row histogram divergences.
    pub metric_samples: usize,
    pub metric_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            steps: 1000,
            batch_size: 8,
            loss: LossKind::LeastSquares,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            level_weights: Vec::new(),
            log_every: 100,
            checkpoint_every: 500,
            metric_samples: 64,
            metric_bins: metrics::DEFAULT_BINS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.log_every == 0 {
            return fail("log_every must be at least 1");
        }
        if self.metric_samples == 0 || self.metric_bins == 0 {
            return fail("metric_samples and metric_bins must be positive");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Discriminator(usize),
    Generator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
    /// Updates in the order they were applied.
    pub phases: Vec<Phase>,
}

impl StepReport {
    pub fn is_finite(&self) -> bool {
        self.d_losses.iter().chain(&self.g_losses).all(|l| l.is_finite())
    }
}

fn d_prefix(level: usize) -> String {
    format!("d{level}.")
}

const G_PREFIX: &str = "g.";

/// Optimizer state for one model plus the step logic.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    weights: Vec<f64>,
    g_opt: OptimizerState,
    d_opts: Vec<OptimizerState>,
}

impl Trainer {
    pub fn new(model: &GanModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let levels = model.levels();
        let weights = if config.level_weights.is_empty() {
            vec![1.0; levels]
        } else if config.level_weights.len() == levels {
            config.level_weights.clone()
        } else {
            return Err(Error::Config(format!(
                "level_weights has {} entries, model has {levels} levels",
                config.level_weights.len()
            )));
        };
        Ok(Self {
            g_opt: OptimizerState::new(config.adam(config.lr_g)),
            d_opts: (0..levels).map(|_| OptimizerState::new(config.adam(config.lr_d))).collect(),
            weights,
            config,
        })
    }

    /// One discriminator update per level on detached fakes, then one joint
    /// generator update through the whole stack.
    pub fn step(&mut self, model: &mut GanModel, batch: &Tensor, rng: &mut Rng) -> Result<StepReport> {
        let targets = model.real_targets(batch)?;
        let noise = model.sample_noise(batch.shape()[0], rng);
        let fakes = detached_fakes(model, &noise)?;
        let mut phases = Vec::new();
        let mut d_losses = Vec::new();
        for level in 0..model.levels() {
            d_losses.push(self.discriminator_step(model, level, &targets[level], &fakes[level])?);
            phases.push(Phase::Discriminator(level));
        }
        let g_losses = self.generator_step(model, &noise)?;
        phases.push(Phase::Generator);
        Ok(StepReport {
            d_losses,
            g_losses,
            phases,
        })
    }

    /// Updates discriminator `level` on a real and a fake batch; returns its
    /// loss before the update.
    pub fn discriminator_step(&mut self, model: &mut GanModel, level: usize, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let prefix = d_prefix(level);
        let loss_kind = self.config.loss;
        let (value, grads, stats) = {
            let mut s = Session::new(&model.store, Mode::Train, &[prefix.as_str()]);
            let r = s.input(real.clone());
            let f = s.input(fake.clone());
            let dr = model.discriminate(&mut s, level, r, loss_kind)?;
            let df = model.discriminate(&mut s, level, f, loss_kind)?;
            let loss = match loss_kind {
                LossKind::LeastSquares => lsgan_d_loss(&mut s.graph, dr, df)?,
                LossKind::Vanilla => vanilla_d_loss(&mut s.graph, dr, df)?,
            };
            s.graph.backward(loss)?;
            let value = s.graph.value(loss).item() as f64;
            let stats: Vec<_> = s.stat_updates(&prefix).cloned().collect();
            (value, s.grads(), stats)
        };
        let names = model.store.trainable_names(&prefix);
        self.d_opts[level].adam_step(&mut model.store, &names, &grads)?;
        apply_stat_updates(&mut model.store, &stats)?;
        Ok(value)
    }

    /// Joint generator update on the weighted sum of per-level losses;
    /// returns the per-level losses before the update.
    pub fn generator_step(&mut self, model: &mut GanModel, noise: &Noise) -> Result<Vec<f64>> {
        let loss_kind = self.config.loss;
        let (values, grads, stats) = {
            let mut s = Session::new(&model.store, Mode::Train, &[G_PREFIX]);
            let out = model.generate(&mut s, noise)?;
            let mut values = Vec::new();
            let mut total: Option<Var> = None;
            for level in 0..model.levels() {
                let x = model.disc_input(&out, level);
                let score = model.discriminate(&mut s, level, x, loss_kind)?;
                let loss = match loss_kind {
                    LossKind::LeastSquares => lsgan_g_loss(&mut s.graph, score)?,
                    LossKind::Vanilla => vanilla_g_loss(&mut s.graph, score)?,
                };
                values.push(s.graph.value(loss).item() as f64);
                let weighted = s.graph.scale(loss, self.weights[level] as f32);
                total = Some(match total {
                    Some(t) => s.graph.add(t, weighted)?,
                    None => weighted,
                });
            }
            s.graph.backward(total.expect("at least one level"))?;
            let stats: Vec<_> = s.stat_updates(G_PREFIX).cloned().collect();
            (values, s.grads(), stats)
        };
        let names = model.store.trainable_names(G_PREFIX);
        self.g_opt.adam_step(&mut model.store, &names, &grads)?;
        apply_stat_updates(&mut model.store, &stats)?;
        Ok(values)
    }
}

/// Per-level discriminator inputs of a generated batch, as plain values.
pub fn detached_fakes(model: &GanModel, noise: &Noise) -> Result<Vec<Tensor>> {
    let mut s = Session::new(&model.store, Mode::Train, &[]);
    let out = model.generate(&mut s, noise)?;
    Ok((0..model.levels())
        .map(|k| s.graph.value(model.disc_input(&out, k)).clone())
        .collect())
}

/// Per-level `(d_loss, g_loss)` without updating anything.
pub fn evaluate_losses(model: &GanModel, batch: &Tensor, noise: &Noise, loss_kind: LossKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let targets = model.real_targets(batch)?;
    let mut s = Session::new(&model.store, Mode::Train, &[]);
    let out = model.generate(&mut s, noise)?;
    let (mut d, mut g) = (Vec::new(), Vec::new());
    for level in 0..model.levels() {
        let r = s.input(targets[level].clone());
        let f = model.disc_input(&out, level);
        let dr = model.discriminate(&mut s, level, r, loss_kind)?;
        let df = model.discriminate(&mut s, level, f, loss_kind)?;
        let (dl, gl) = match loss_kind {
            LossKind::LeastSquares => lsgan_losses(&mut s.graph, dr, df)?,
            LossKind::Vanilla => (vanilla_d_loss(&mut s.graph, dr, df)?, vanilla_g_loss(&mut s.graph, df)?),
        };
        d.push(s.graph.value(dl).item() as f64);
        g.push(s.graph.value(gl).item() as f64);
    }
    Ok((d, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub level: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub js: f64,
    pub emd: f64,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub rows: Vec<MetricRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainSummary {
    /// Rows of `level` in step order.
    pub fn level_rows(&self, level: usize) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.level == level)
    }
}

/// Real per-level images of the whole dataset, for histogram references.
fn level_images(model: &GanModel, data: &Tensor) -> Result<Vec<Tensor>> {
    if model.kind == ModelKind::Dcgan {
        return Ok(vec![data.clone()]);
    }
    Ok(real_pyramid(data, model.levels(), model.spec.interpolation)?.images().to_vec())
}

struct RunFiles {
    dir: PathBuf,
    metrics: csv::Writer<File>,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: csv::Writer::from_writer(file),
        })
    }

    fn rows(&mut self, rows: &[MetricRow]) -> Result<()> {
        for row in rows {
            self.metrics.serialize(row)?;
        }
        let path = self.dir.join("metrics.csv");
        self.metrics.flush().map_err(|e| Error::io(path, e))
    }

    fn checkpoint(&self, model: &GanModel, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        model.to_checkpoint().save(&path)?;
        Ok(path)
    }

    fn samples(&self, model: &GanModel, noise: &Noise, step: usize) -> Result<()> {
        let grid = ppm::tile(&model.sample(noise)?, 4)?;
        ppm::save_ppm(&grid, self.dir.join(format!("samples_{step:06}.ppm")))
    }
}

/// Trains `model` on `data` (`[N, 3, H, W]` at the top resolution).
///
/// With `out`, writes `metrics.csv`, periodic checkpoints
/// (`step_NNNNNN.ckpt`), sample grids and `final.ckpt`. Metric rows are
/// logged at step 0, every `log_every` steps and at the last step. A
/// non-finite loss aborts with [`Error::Divergence`], leaving earlier files
/// in place.
pub fn train(model: &mut GanModel, data: &Tensor, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let (n, _, _, _) = data.dims4("train")?;
    if n < cfg.batch_size {
        return Err(Error::Dataset(format!("{n} images is fewer than batch_size {}", cfg.batch_size)));
    }
    let batches_per_epoch = n / cfg.batch_size;
    let mut total = cfg.epochs.saturating_mul(batches_per_epoch);
    if cfg.steps > 0 {
        total = total.min(cfg.steps);
    }

    let mut step_rng = Rng::with_stream(cfg.seed, 1);
    let mut order_rng = Rng::with_stream(cfg.seed, 2);
    let metric_noise = model.sample_noise(cfg.metric_samples, &mut Rng::with_stream(cfg.seed, 3));
    let grid_noise = model.sample_noise(16, &mut Rng::with_stream(cfg.seed, 4));
    let real_hists = level_images(model, data)?
        .iter()
        .map(|t| metrics::histogram(&[t], cfg.metric_bins))
        .collect::<Result<Vec<_>>>()?;

    let mut files = out.map(RunFiles::create).transpose()?;
    let mut summary = TrainSummary {
        steps: 0,
        rows: Vec::new(),
        checkpoints: Vec::new(),
    };

    let probe = data.slice_outer(0, cfg.batch_size)?;
    let probe_noise = model.sample_noise(cfg.batch_size, &mut Rng::with_stream(cfg.seed, 5));
    let (d0, g0) = evaluate_losses(model, &probe, &probe_noise, cfg.loss)?;
    let rows = metric_rows(model, 0, &d0, &g0, &metric_noise, &real_hists)?;
    if let Some(f) = files.as_mut() {
        f.rows(&rows)?;
    }
    summary.rows.extend(rows);

    let mut step = 0;
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for _ in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for b in 0..batches_per_epoch {
            if step == total {
                break 'epochs;
            }
            let batch = data.select_outer(&order[b * cfg.batch_size..(b + 1) * cfg.batch_size])?;
            let report = trainer.step(model, &batch, &mut step_rng)?;
            step += 1;
            if !report.is_finite() {
                return Err(Error::Divergence { step });
            }
            if step % cfg.log_every == 0 || step == total {
                let rows = metric_rows(model, step, &report.d_losses, &report.g_losses, &metric_noise, &real_hists)?;
                if let Some(f) = files.as_mut() {
                    f.rows(&rows)?;
                }
                summary.rows.extend(rows);
            }
            let periodic = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
            if let (Some(f), true) = (files.as_ref(), periodic) {
                summary.checkpoints.push(f.checkpoint(model, &format!("step_{step:06}.ckpt"))?);
                f.samples(model, &grid_noise, step)?;
            }
        }
    }
    summary.steps = step;
    if let Some(f) = files.as_ref() {
        summary.checkpoints.push(f.checkpoint(model, "final.ckpt")?);
        f.samples(model, &grid_noise, step)?;
    }
    Ok(summary)
}

fn metric_rows(
    model: &GanModel,
    step: usize,
    d_losses: &[f64],
    g_losses: &[f64],
    noise: &Noise,
    real_hists: &[ColorHistogram],
) -> Result<Vec<MetricRow>> {
    let levels = model.sample_levels(noise)?;
    let bins = real_hists[0].bins();
    (0..model.levels())
        .map(|k| {
            let fake = metrics::histogram(&[&levels[k]], bins)?;
            Ok(MetricRow {
                step,
                level: k,
                d_loss: d_losses[k],
                g_loss: g_losses[k],
                js: metrics::js_divergence(&fake, &real_hists[k])?,
                emd: metrics::emd(&fake, &real_hists[k])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_value_hand_cases() {
        let v = vanilla_value(&[0.5], &[0.5]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let v = vanilla_value(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        let want = 0.5 * (0.3f64.ln() + 0.7f64.ln()) + 0.5 * (0.7f64.ln() + 0.3f64.ln());
        assert!((v - want).abs() < 1e-12);
        let v = vanilla_value(&[1.0], &[0.0]).unwrap();
        assert!(v.abs() < 1e-6);
        assert!(vanilla_value(&[], &[0.5]).is_err());
    }

    #[test]
    fn lsgan_hand_cases() {
        assert_eq!(lsgan_values(&[1.0], &[0.0]).unwrap(), (0.0, 0.5));
        assert_eq!(lsgan_values(&[0.0, 0.0], &[0.0]).unwrap(), (0.5, 0.5));
        assert_eq!(lsgan_values(&[0.0], &[1.0]).unwrap().1, 0.0);
        assert!(lsgan_values(&[1.0], &[]).is_err());
    }

    #[test]
    fn graph_losses_match_slices() {
        let real = [0.2, 0.9, -0.4];
        let fake = [0.1, 0.6, 0.3];
        let mut g: Graph<f64> = Graph::new();
        let r = g.constant(Tensor::new([3], real.to_vec()).unwrap());
        let f = g.constant(Tensor::new([3], fake.to_vec()).unwrap());
        let (d, gl) = lsgan_losses(&mut g, r, f).unwrap();
        let (dw, gw) = lsgan_values(&real, &fake).unwrap();
        assert!((g.value(d).item() - dw).abs() < 1e-12);
        assert!((g.value(gl).item() - gw).abs() < 1e-12);

        let probs = [0.2, 0.9, 0.4];
        let p = g.constant(Tensor::new([3], probs.to_vec()).unwrap());
        let d = vanilla_d_loss(&mut g, p, f).unwrap();
        assert!((g.value(d).item() + vanilla_value(&probs, &fake).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_and_missing_grad() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros([2]), crate::nn::ParamKind::Trainable);
        let mut opt = OptimizerState::new(AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        });
        let names = vec!["w".to_string()];
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new([2], vec![1.0, 0.0]).unwrap());
        opt.adam_step(&mut store, &names, &grads).unwrap();
        let w = store.value("w").unwrap().data();
        assert!((w[0] + 1e-3).abs() < 1e-9);
        assert_eq!(w[1], 0.0);
        assert_eq!(opt.steps(), 1);

        let err = opt.adam_step(&mut store, &["v".to_string()], &grads).unwrap_err();
        assert!(err.to_string().contains('v'));
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
