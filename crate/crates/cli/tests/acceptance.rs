//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs without the libtest harness so the summary is always printed.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lesiongan::data::{build_dataset, real_pyramid, ClassCounts, Interpolation, LesionParams};
use lesiongan::metrics::{self, emd_1d, histogram, js_1d};
use lesiongan::nn::{Mode, Session};
use lesiongan::rng::{sample_normal, sample_uniform};
use lesiongan::train::{self, TrainConfig};
use lesiongan::usecase::{run_use_case, UseCaseConfig};
use lesiongan::{gradcheck, Checkpoint, GanModel, Graph, ModelKind, PyramidSpec, Rng, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        for c in gradcheck::suite(seed).map_err(|e| e.to_string())? {
            ensure(c.passed(), || format!("{} seed {seed} rel err {:.2e}", c.op, c.max_rel_error))?;
            worst = worst.max(c.max_rel_error);
            checked += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("suite took {}", secs(took)))?;
    Ok(format!("{checked} op checks over 5 seeds, worst rel err {worst:.2e}, {}", secs(took)))
}

fn adjoint_identity() -> Outcome {
    let mut rng = Rng::new(0xad);
    let mut worst = 0.0f64;
    let configs = 200;
    for _ in 0..configs {
        let (n, ci, co) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
        let (k, stride, padding) = (1 + rng.below(4), 1 + rng.below(2), rng.below(2));
        let oh = 1 + rng.below(6);
        if (oh - 1) * stride + k <= 2 * padding {
            continue;
        }
        let h = (oh - 1) * stride + k - 2 * padding;
        let x: Tensor<f64> = sample_normal(&mut rng, &[n, ci, h, h]);
        let w: Tensor<f64> = sample_normal(&mut rng, &[co, ci, k, k]);
        let y: Tensor<f64> = sample_normal(&mut rng, &[n, co, oh, oh]);
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(w), g.constant(y.clone()));
        let ax = g.conv2d(xv, wv, None, stride, padding).map_err(|e| e.to_string())?;
        let aty = g.deconv2d(yv, wv, None, stride, padding).map_err(|e| e.to_string())?;
        let (lhs, rhs) = (g.value(ax).dot(&y), x.dot(g.value(aty)));
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-4, || format!("worst relative gap {worst:.2e}"))?;
    Ok(format!("{configs} random configurations, worst relative gap {worst:.2e}"))
}

fn pyramid_exactness() -> Outcome {
    let mut images = 0;
    for chunk in 0..10 {
        let batch: Tensor = sample_uniform(&mut Rng::new(chunk), &[100, 3, 64, 64], -1.0, 1.0);
        let pyr = real_pyramid(&batch, 3, Interpolation::default()).map_err(|e| e.to_string())?;
        for k in 1..pyr.levels() {
            let recon = pyr.reconstruct(k).ok_or("missing level")?;
            let same = recon.data().iter().zip(pyr.image(k).data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("level {k} of chunk {chunk} is not exact"))?;
        }
        images += 100;
    }
    Ok(format!("{images} images, 3 levels, bitwise"))
}

fn random_distribution(rng: &mut Rng, bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..bins).map(|_| if rng.uniform() < 0.4 { 0.0 } else { rng.uniform() }).collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

fn transport_emd(p: &[f64], q: &[f64]) -> f64 {
    let pos = |i: usize| i as f64 / (p.len() - 1) as f64;
    let (mut a, mut b) = (p.to_vec(), q.to_vec());
    let (mut i, mut j, mut cost) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let m = a[i].min(b[j]);
        cost += m * (pos(i) - pos(j)).abs();
        a[i] -= m;
        b[j] -= m;
        if a[i] <= 1e-15 {
            i += 1;
        }
        if b[j] <= 1e-15 {
            j += 1;
        }
    }
    cost
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(4);
    // histogram against counting by range scan
    let batch: Tensor = sample_uniform(&mut rng, &[8, 3, 16, 16], -1.0, 1.0);
    let h = histogram(&[&batch], 256).map_err(|e| e.to_string())?;
    for c in 0..3 {
        let mut counts = vec![0u64; 256];
        for n in 0..8 {
            for &v in &batch.data()[(n * 3 + c) * 256..(n * 3 + c + 1) * 256] {
                let u = (v as f64 + 1.0) / 2.0;
                counts[(0..256).find(|&i| u < (i + 1) as f64 / 256.0).unwrap_or(255)] += 1;
            }
        }
        ensure(h.counts(c) == counts.as_slice(), || format!("histogram channel {c} differs"))?;
    }
    let mut worst_emd = 0.0f64;
    for _ in 0..10_000 {
        let bins = 2 + rng.below(64);
        let (p, q) = (random_distribution(&mut rng, bins), random_distribution(&mut rng, bins));
        let (js, emd) = (js_1d(&p, &q), emd_1d(&p, &q));
        ensure(js == js_1d(&q, &p), || "js asymmetric".into())?;
        ensure((emd - emd_1d(&q, &p)).abs() < 1e-12, || "emd asymmetric".into())?;
        ensure((0.0..=std::f64::consts::LN_2).contains(&js), || format!("js {js} out of bounds"))?;
        ensure((0.0..=1.0).contains(&emd), || format!("emd {emd} out of bounds"))?;
        ensure(js_1d(&p, &p) == 0.0, || "js(p, p) != 0".into())?;
        worst_emd = worst_emd.max((emd - transport_emd(&p, &q)).abs());
    }
    ensure(worst_emd <= 1e-6, || format!("emd off the transport oracle by {worst_emd:.2e}"))?;
    let mut a = vec![0.0; 8];
    let mut b = vec![0.0; 8];
    a[..4].fill(0.25);
    b[4..].fill(0.25);
    let gap = (js_1d(&a, &b) - std::f64::consts::LN_2).abs();
    ensure(gap <= 1e-9, || format!("disjoint js off ln 2 by {gap:.2e}"))?;
    Ok(format!("10^4 pairs, emd vs transport max gap {worst_emd:.1e}, disjoint js gap {gap:.1e}"))
}

fn architecture_contracts() -> Outcome {
    let spec = PyramidSpec::default();
    let mut totals = Vec::new();
    for kind in ModelKind::ALL {
        let model = GanModel::build(kind, &spec, 1).map_err(|e| e.to_string())?;
        let expected = if kind == ModelKind::Lapgan { spec.levels } else { 1 };
        let noise = model.sample_noise(2, &mut Rng::new(0));
        ensure(noise.arity() == expected, || format!("{kind} draws {} noise sources", noise.arity()))?;
        if kind.is_ddgan() {
            let mut s = Session::new(&model.store, Mode::Eval, &[]);
            let out = model.generate(&mut s, &noise).map_err(|e| e.to_string())?;
            for k in 1..model.levels() {
                let up = out.upsampled[k].expect("upper level");
                ensure(s.graph.value(out.images[k]) == s.graph.value(up), || format!("{kind} level {k} differs from upsampled"))?;
            }
        }
        if kind != ModelKind::Dcgan {
            totals.push((kind, model.param_count().total));
        }
    }
    let lo = totals.iter().map(|t| t.1).min().unwrap();
    let hi = totals.iter().map(|t| t.1).max().unwrap();
    let spread = (hi - lo) as f64 / lo as f64;
    ensure(spread <= 0.02, || format!("parameter spread {:.2}% ({totals:?})", 100.0 * spread))?;
    let listed: Vec<String> = totals.iter().map(|(k, n)| format!("{k} {n}")).collect();
    Ok(format!("arity ok, zero-init identity ok, params {} (spread {:.2}%)", listed.join(", "), 100.0 * spread))
}

const SMOKE_STEPS: usize = 300;

fn smoke_training() -> Outcome {
    let data = build_dataset(&mut Rng::new(0), ClassCounts::new(22, 21, 21), 64, &LesionParams::default())
        .and_then(|d| d.images())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: SMOKE_STEPS,
        log_every: SMOKE_STEPS,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let spec = PyramidSpec::default();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for kind in ModelKind::ALL {
        let start = Instant::now();
        let mut model = GanModel::build(kind, &spec, 0).map_err(|e| e.to_string())?;
        let js = |m: &GanModel| metrics::evaluate_model(m, &data, 512, 256, 99).map(|r| r.js);
        let before = js(&model).map_err(|e| e.to_string())?;
        train::train(&mut model, &data, &cfg, None).map_err(|e| format!("{kind}: {e}"))?;
        let after = js(&model).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        lines.push(format!("{kind} js {before:.3}->{after:.3} in {}", secs(took)));
        if after >= before || after.is_nan() || took > Duration::from_secs(20 * 60) {
            failures.push(kind);
        }
    }
    let msg = format!("{SMOKE_STEPS} steps: {}", lines.join("; "));
    ensure(failures.is_empty(), || format!("{failures:?} failed; {msg}"))?;
    Ok(msg)
}

fn usecase_ordering() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let mut cfg = UseCaseConfig {
            seed,
            arms: vec!["full".into(), "imbalanced".into()],
            ..UseCaseConfig::default()
        };
        if seed == 0 {
            // one seed also exercises the generator-restored arms
            cfg.arms.extend(["lapgan", "ddgan-up", "ddgan-deconv"].map(String::from));
            cfg.generator_steps = 60;
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = run_use_case(&cfg, &PyramidSpec::default(), &TrainConfig::default(), Some(dir.path()))
            .map_err(|e| e.to_string())?;
        let full = report.arm("full").ok_or("missing full arm")?;
        let imb = report.arm("imbalanced").ok_or("missing imbalanced arm")?;
        let (vf, vi) = (full.val_acc.ok_or("full not run")?, imb.val_acc.ok_or("imbalanced not run")?);
        wins += usize::from(vi < vf);
        lines.push(format!("seed {seed} full {vf:.3} imb {vi:.3}"));
        for arm in &report.arms {
            ensure(arm.skipped.is_none(), || format!("arm {} skipped", arm.arm))?;
            for acc in [arm.train_acc, arm.val_acc] {
                ensure(acc.is_some_and(|a| (0.0..=1.0).contains(&a)), || format!("arm {} accuracy {acc:?}", arm.arm))?;
            }
            if !["full", "imbalanced"].contains(&arm.arm.as_str()) {
                ensure(arm.train_counts == full.train_counts, || format!("arm {} counts {:?}", arm.arm, arm.train_counts))?;
                ensure(arm.synthetic_added > 0, || format!("arm {} added nothing", arm.arm))?;
            }
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let arms = json["arms"].as_array().ok_or("report.json has no arms")?;
        ensure(arms.len() == cfg.arms.len() && dir.path().join("report.csv").exists(), || "incomplete report files".into())?;
        for a in arms {
            for key in ["arm", "train_acc", "val_acc", "train_counts", "synthetic_added"] {
                ensure(a.get(key).is_some(), || format!("report arm lacks {key}"))?;
            }
        }
    }
    let msg = format!("{wins}/5 seeds with imbalanced < full ({})", lines.join(", "));
    ensure(wins >= 4, || msg.clone())?;
    Ok(msg + "; restored arms match full counts")
}

fn cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lesiongan"))
        .current_dir(cwd)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`lesiongan {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

/// Every file under `dir`, relative path and contents.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let config = root.join("run.toml");
    fs::write(
        &config,
        "[model]\nbase_resolution = 8\nz_dim = 16\n\n[train]\nsteps = 12\nbatch_size = 4\nlog_every = 4\ncheckpoint_every = 6\n\n\
         [data]\ncounts = { benign = 6, melanoma = 3, keratosis = 3 }\n\n\
         [usecase]\ncounts = { benign = 20, melanoma = 10, keratosis = 10 }\nresolution = 32\nepochs = 2\n\
         arms = [\"full\", \"imbalanced\", \"ddgan-up\"]\ngenerator_steps = 3\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let mut compared = 0;
    // identical command lines, run from two different directories
    for run in ["a", "b"] {
        let d = root.join(run);
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        for kind in ModelKind::ALL {
            cli(&d, &["train", "--model", kind.as_str(), "--config", cfg, "--out", kind.as_str(), "--seed", "7"])?;
        }
        let ckpt = "ddgan-up/final.ckpt";
        cli(&d, &["sample", "--checkpoint", ckpt, "--count", "4", "--out", "samples", "--seed", "3"])?;
        cli(&d, &["gen-data", "--config", cfg, "--out", "data", "--seed", "5"])?;
        cli(&d, &["eval", "--checkpoint", ckpt, "--real", "data", "--n", "64", "--out", "eval/report.json", "--seed", "1"])?;
        cli(&d, &["usecase", "--config", cfg, "--out", "usecase", "--seed", "2"])?;
    }
    let (a, b) = (snapshot(&root.join("a")), snapshot(&root.join("b")));
    ensure(a.len() == b.len(), || format!("{} vs {} files", a.len(), b.len()))?;
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        ensure(na == nb && ca == cb, || format!("{na} differs between runs"))?;
        compared += 1;
    }
    let ckpts = a.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    let csvs = a.iter().filter(|(n, _)| n.ends_with("metrics.csv")).count();
    Ok(format!("{compared} files identical across reruns ({ckpts} checkpoints, {csvs} metrics CSVs)"))
}

fn checkpoint_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = PyramidSpec::default();
    let data = build_dataset(&mut Rng::new(1), ClassCounts::new(4, 2, 2), 64, &LesionParams::default())
        .and_then(|d| d.images())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: 3,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let mut model = GanModel::build(kind, &spec, 5).map_err(|e| e.to_string())?;
        train::train(&mut model, &data, &cfg, None).map_err(|e| e.to_string())?;
        let (a, b) = (tmp.path().join(format!("{kind}.a")), tmp.path().join(format!("{kind}.b")));
        model.to_checkpoint().save(&a).map_err(|e| e.to_string())?;
        let loaded = Checkpoint::load(&a)
            .and_then(|c| GanModel::from_checkpoint(&c))
            .map_err(|e| e.to_string())?;
        loaded.to_checkpoint().save(&b).map_err(|e| e.to_string())?;
        ensure(fs::read(&a).ok() == fs::read(&b).ok(), || format!("{kind}: re-saved checkpoint differs"))?;
        let noise = model.sample_noise(8, &mut Rng::new(6));
        let (x, y) = (model.sample(&noise), loaded.sample(&noise));
        let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| e.to_string())?);
        let same = x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, || format!("{kind}: loaded samples differ"))?;
    }
    Ok("all four kinds: byte-identical re-save, bitwise samples".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("adjoint identity", adjoint_identity),
        ("pyramid exactness", pyramid_exactness),
        ("metric oracles", metric_oracles),
        ("architecture contracts", architecture_contracts),
        ("smoke training", smoke_training),
        ("use-case ordering", usecase_ordering),
        ("reproducibility", reproducibility),
        ("checkpoint round-trip", checkpoint_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let took = secs(start.elapsed());
        match result {
            Ok(detail) => println!("criterion {id} {name}: PASS ({took}) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({took}) {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
