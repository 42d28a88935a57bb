//! Per-channel color histograms and the divergences between them.
//!
//! Pixel values in [-1, 1] map to `u = (v + 1) / 2`; bin `i` covers
//! `[i/B, (i+1)/B)`, with `u = 1` folded into the last bin. JS divergence
//! uses the natural log; EMD places bin `i` at `i/(B−1)` so both metrics are
//! bounded (`ln 2` and `1`). Channel values are averaged.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::zoo::GanModel;

pub const DEFAULT_BINS: usize = 256;
/// Samples drawn per evaluation by default.
pub const DEFAULT_SAMPLES: usize = 2000;
const CHANNELS: usize = 3;

#[inline]
pub fn bin_index(v: f32, bins: usize) -> usize {
    let u = ((v as f64).clamp(-1.0, 1.0) + 1.0) * 0.5;
    ((u * bins as f64) as usize).min(bins - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorHistogram {
    bins: usize,
    counts: [Vec<u64>; CHANNELS],
}

impl ColorHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        Ok(Self {
            bins,
            counts: std::array::from_fn(|_| vec![0; bins]),
        })
    }

    /// Adds every pixel of a `[N, 3, H, W]` batch.
    pub fn accumulate(&mut self, batch: &Tensor) -> Result<()> {
        let (n, c, h, w) = batch.dims4("histogram")?;
        if c != CHANNELS {
            return Err(Error::dim("histogram", "channels", CHANNELS, c));
        }
        let plane = h * w;
        for (i, chunk) in batch.data().chunks_exact(plane).enumerate().take(n * c) {
            let counts = &mut self.counts[i % CHANNELS];
            for &v in chunk {
                counts[bin_index(v, self.bins)] += 1;
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self, channel: usize) -> &[u64] {
        &self.counts[channel]
    }

    /// Pixels counted per channel.
    pub fn total(&self) -> u64 {
        self.counts[0].iter().sum()
    }

    /// Channel `c` normalized to unit mass.
    pub fn normalized(&self, channel: usize) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts[channel].iter().map(|&k| k as f64 / total).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["bin", "r", "g", "b"])?;
        let cols: Vec<Vec<f64>> = (0..CHANNELS).map(|c| self.normalized(c)).collect();
        for i in 0..self.bins {
            w.write_record([
                i.to_string(),
                cols[0][i].to_string(),
                cols[1][i].to_string(),
                cols[2][i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pooled histogram over every image of every batch.
pub fn histogram(batches: &[&Tensor], bins: usize) -> Result<ColorHistogram> {
    if batches.is_empty() {
        return Err(Error::EmptyBatch("histogram"));
    }
    let mut h = ColorHistogram::new(bins)?;
    for b in batches {
        h.accumulate(b)?;
    }
    Ok(h)
}

/// Jensen–Shannon divergence of two normalized vectors, natural log.
///
/// Each bin contributes `p·ln(p/m) + q·ln(q/m)`; both orders of that sum are
/// the same float, so the result is exactly symmetric.
pub fn js_1d(p: &[f64], q: &[f64]) -> f64 {
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            term(a, m) + term(b, m)
        })
        .sum();
    (0.5 * total).clamp(0.0, std::f64::consts::LN_2)
}

/// Wasserstein-1 distance of two normalized vectors on bin positions
/// `i/(B−1)`.
pub fn emd_1d(p: &[f64], q: &[f64]) -> f64 {
    let b = p.len();
    if b < 2 {
        return 0.0;
    }
    let delta = 1.0 / (b - 1) as f64;
    let (mut fp, mut fq, mut acc) = (0.0, 0.0, 0.0);
    for i in 0..b - 1 {
        fp += p[i];
        fq += q[i];
        acc += (fp - fq).abs();
    }
    (acc * delta).clamp(0.0, 1.0)
}

fn check_bins(p: &ColorHistogram, q: &ColorHistogram) -> Result<()> {
    if p.bins != q.bins {
        return Err(Error::dim("histogram divergence", "bins", p.bins, q.bins));
    }
    Ok(())
}

pub fn js_channels(p: &ColorHistogram, q: &ColorHistogram) -> Result<[f64; CHANNELS]> {
    check_bins(p, q)?;
    Ok(std::array::from_fn(|c| js_1d(&p.normalized(c), &q.normalized(c))))
}

pub fn emd_channels(p: &ColorHistogram, q: &ColorHistogram) -> Result<[f64; CHANNELS]> {
    check_bins(p, q)?;
    Ok(std::array::from_fn(|c| emd_1d(&p.normalized(c), &q.normalized(c))))
}

fn mean3(v: [f64; CHANNELS]) -> f64 {
    (v[0] + v[1] + v[2]) / 3.0
}

pub fn js_divergence(p: &ColorHistogram, q: &ColorHistogram) -> Result<f64> {
    js_channels(p, q).map(mean3)
}

pub fn emd(p: &ColorHistogram, q: &ColorHistogram) -> Result<f64> {
    emd_channels(p, q).map(mean3)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub js: f64,
    pub emd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub r: ChannelMetrics,
    pub g: ChannelMetrics,
    pub b: ChannelMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub emd: f64,
    pub js: f64,
    pub channels: Channels,
    pub n_samples: usize,
    pub bins: usize,
}

impl MetricsReport {
    pub fn compare(fake: &ColorHistogram, real: &ColorHistogram, n_samples: usize) -> Result<Self> {
        let js = js_channels(fake, real)?;
        let em = emd_channels(fake, real)?;
        let ch = |c: usize| ChannelMetrics { js: js[c], emd: em[c] };
        Ok(Self {
            emd: mean3(em),
            js: mean3(js),
            channels: Channels {
                r: ch(0),
                g: ch(1),
                b: ch(2),
            },
            n_samples,
            bins: fake.bins,
        })
    }
}

/// Samples `n_samples` images from `model` and compares their histogram to
/// that of `real`.
pub fn evaluate_model(model: &GanModel, real: &Tensor, n_samples: usize, bins: usize, seed: u64) -> Result<MetricsReport> {
    let (hist, _) = evaluate_with_samples(model, real, n_samples, bins, seed)?;
    Ok(hist)
}

/// As [`evaluate_model`], also returning the fake histogram.
pub fn evaluate_with_samples(
    model: &GanModel,
    real: &Tensor,
    n_samples: usize,
    bins: usize,
    seed: u64,
) -> Result<(MetricsReport, ColorHistogram)> {
    let (_, _, h, w) = real.dims4("evaluate_model")?;
    let top = model.top_resolution();
    if h != top || w != top {
        return Err(Error::dim("evaluate_model", "resolution", top, format!("{h}x{w}")));
    }
    if n_samples == 0 {
        return Err(Error::EmptyBatch("evaluate_model"));
    }
    let real_hist = histogram(&[real], bins)?;
    let mut rng = Rng::new(seed);
    let mut fake_hist = ColorHistogram::new(bins)?;
    const CHUNK: usize = 100;
    let noise = model.sample_noise(n_samples, &mut rng);
    for start in (0..n_samples).step_by(CHUNK) {
        let part = noise.slice(start, (start + CHUNK).min(n_samples))?;
        fake_hist.accumulate(&model.sample(&part)?)?;
    }
    Ok((MetricsReport::compare(&fake_hist, &real_hist, n_samples)?, fake_hist))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_of(batch: &Tensor, bins: usize) -> ColorHistogram {
        histogram(&[batch], bins).unwrap()
    }

    #[test]
    fn mid_gray_is_one_hot() {
        let h = hist_of(&Tensor::zeros([1, 3, 4, 4]), 256);
        for c in 0..3 {
            let n = h.normalized(c);
            assert_eq!(n[128], 1.0);
            assert_eq!(n.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn black_and_white_split_mass() {
        let black = Tensor::full([1, 3, 2, 2], -1.0);
        let white = Tensor::full([1, 3, 2, 2], 1.0);
        let h = histogram(&[&black, &white], 16).unwrap();
        let n = h.normalized(1);
        assert_eq!((n[0], n[15]), (0.5, 0.5));
        assert_eq!(h.total(), 8);
    }

    #[test]
    fn divergence_hand_values() {
        assert_eq!(js_1d(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert!((js_1d(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(emd_1d(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        // half the mass moves half the line
        assert!((emd_1d(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bin_mismatch_is_an_error() {
        let a = ColorHistogram::new(8).unwrap();
        let b = ColorHistogram::new(16).unwrap();
        assert!(js_divergence(&a, &b).is_err());
        assert!(emd(&a, &b).is_err());
        assert!(histogram(&[], 8).is_err());
    }

    #[test]
    fn report_serializes_expected_fields() {
        let h = hist_of(&Tensor::zeros([1, 3, 2, 2]), 4);
        let r = MetricsReport::compare(&h, &h, 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["emd", "js", "channels", "n_samples", "bins"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["channels"]["g"]["js"].is_number());
        assert_eq!(r.js, 0.0);
    }
}
