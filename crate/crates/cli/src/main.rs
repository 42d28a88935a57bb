use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use lesiongan::data::{build_dataset, ppm, LesionParams};
use lesiongan::metrics::{self, DEFAULT_BINS, DEFAULT_SAMPLES};
use lesiongan::{gradcheck, train, usecase, Checkpoint, Config, Error, GanModel, ModelKind, Rng};

/// Multi-scale GAN training, sampling and evaluation.
#[derive(Parser)]
#[command(name = "lesiongan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model kind on the configured dataset.
    Train {
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write generated images from a checkpoint as PPM files.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare generated and real color histograms.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of real images.
        #[arg(long, conflicts_with = "procedural", required_unless_present = "procedural")]
        real: Option<PathBuf>,
        /// Use the procedural dataset described by `--config` (or defaults).
        #[arg(long)]
        procedural: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also dump both histograms as CSV with this path prefix.
        #[arg(long)]
        hist_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the procedural dataset into a directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Run the class-imbalance experiment.
    Usecase {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// 0 ok, 2 usage/config, 3 runtime/numerical, 4 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Ppm { .. } | Error::Checkpoint(_) | Error::Csv(_) | Error::Json(_) => 4,
        _ => 3,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> lesiongan::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn load_model(path: &Path) -> lesiongan::Result<GanModel> {
    GanModel::from_checkpoint(&Checkpoint::load(path)?)
}

/// Runs one subcommand and returns its exit status.
fn run(cmd: Command) -> lesiongan::Result<u8> {
    match cmd {
        Command::Train { model, config, out, seed } => {
            let mut cfg = Config::load(&config)?;
            let kind = cfg.model.resolve_kind(Some(model))?;
            cfg.model.kind = kind;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            cfg.train.validate()?;
            let mut gan = GanModel::build(kind, &cfg.model.spec(), cfg.train.seed)?;
            let images = cfg.training_images()?;
            cfg.echo(&out)?;
            let counts = gan.param_count();
            eprintln!(
                "{kind}: {} generator + {} discriminator parameters, {} images",
                counts.generator,
                counts.discriminators,
                images.shape()[0]
            );
            let summary = train::train(&mut gan, &images, &cfg.train, Some(&out))?;
            for row in summary.rows.iter().filter(|r| r.step == summary.steps) {
                println!(
                    "step {} level {}: d_loss {:.4} g_loss {:.4} js {:.5} emd {:.5}",
                    row.step, row.level, row.d_loss, row.g_loss, row.js, row.emd
                );
            }
            Ok(0)
        }
        Command::Sample { checkpoint, count, out, seed } => {
            let gan = load_model(&checkpoint)?;
            let images = gan.sample_n(count, &mut Rng::new(seed), 64)?;
            fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            for i in 0..count {
                ppm::save_ppm(&images.slice_outer(i, i + 1)?, out.join(format!("sample_{i:05}.ppm")))?;
            }
            let args = json!({ "command": "sample", "checkpoint": checkpoint, "count": count, "seed": seed });
            write_json(&out.join("args.json"), &args)?;
            Ok(0)
        }
        Command::Eval { checkpoint, real, procedural, config, n, bins, out, hist_csv, seed } => {
            let gan = load_model(&checkpoint)?;
            let real_images = match real {
                Some(dir) if !procedural => {
                    let mut cfg = Config::default();
                    cfg.data.mode = lesiongan::config::DataMode::Dir;
                    cfg.data.path = Some(dir);
                    cfg.training_images()?
                }
                _ => {
                    let mut cfg = match config {
                        Some(p) => Config::load(p)?,
                        None => Config::default(),
                    };
                    cfg.data.resolution.get_or_insert(gan.top_resolution());
                    cfg.training_images()?
                }
            };
            let (report, fake_hist) = metrics::evaluate_with_samples(&gan, &real_images, n, bins, seed)?;
            if let Some(prefix) = hist_csv {
                let real_hist = metrics::histogram(&[&real_images], bins)?;
                fake_hist.write_csv(prefix.with_extension("fake.csv"))?;
                real_hist.write_csv(prefix.with_extension("real.csv"))?;
            }
            println!("js {:.6} emd {:.6}", report.js, report.emd);
            write_json(&out, &serde_json::to_value(&report)?)?;
            Ok(0)
        }
        Command::GenData { config, out, seed } => {
            let mut cfg = Config::load(&config)?;
            if let Some(seed) = seed {
                cfg.data.seed = seed;
            }
            let res = cfg.data_resolution();
            let ds = build_dataset(&mut Rng::new(cfg.data.seed), cfg.data.counts, res, &LesionParams::default())?;
            ds.save_dir(&out)?;
            cfg.echo(&out)?;
            println!("wrote {} images at {res}x{res} to {}", ds.len(), out.display());
            Ok(0)
        }
        Command::Gradcheck { seeds } => {
            let mut failed = 0;
            for seed in 0..seeds.max(1) {
                for check in gradcheck::suite(seed)? {
                    let status = if check.passed() { "ok" } else { "FAIL" };
                    println!(
                        "{status:4} {:24} seed {seed} checked {:5} max rel err {:.2e}",
                        check.op, check.checked, check.max_rel_error
                    );
                    failed += usize::from(!check.passed());
                }
            }
            if failed > 0 {
                eprintln!("{failed} gradient checks failed");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Usecase { config, out, seed } => {
            let mut cfg = Config::load(&config)?;
            if let Some(seed) = seed {
                cfg.usecase.seed = seed;
            }
            cfg.echo(&out)?;
            let report = usecase::run_use_case(&cfg.usecase, &cfg.model.spec(), &cfg.train, Some(&out))?;
            for arm in &report.arms {
                match (&arm.skipped, arm.train_acc, arm.val_acc) {
                    (Some(reason), _, _) => println!("{:14} skipped: {reason}", arm.arm),
                    (None, Some(tr), Some(va)) => println!(
                        "{:14} train {tr:.4} val {va:.4} synthetic {}",
                        arm.arm, arm.synthetic_added
                    ),
                    _ => {}
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
