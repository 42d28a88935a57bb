use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesiongan"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "[model]\nbase_resolution = 8\nlevels = 2\nz_dim = 8\n\n[train]\nsteps = 2\nbatch_size = 2\nlog_every = 1\n\n\
                    [data]\ncounts = { benign = 2, melanoma = 1, keratosis = 1 }\n";

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = run(dir.path(), &["train", "--model", "dcgan", "--config", "bad.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--model", "stylegan", "--config", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sample", "--checkpoint", "nope.ckpt", "--out", "s"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn train_writes_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = run(dir.path(), &["train", "--model", "ddgan-up", "--config", "tiny.toml", "--out", "run", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = dir.path().join("run");
    for f in ["config.toml", "metrics.csv", "final.ckpt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let echoed = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3") && echoed.contains("kind = \"ddgan-up\""), "{echoed}");
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,level,d_loss,g_loss,js,emd\n"));
    // step 0, 1, 2 for each of two levels
    assert_eq!(metrics.lines().count(), 1 + 3 * 2);

    let o = run(dir.path(), &["sample", "--checkpoint", "run/final.ckpt", "--count", "3", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("s/sample_00002.ppm").exists());

    let o = run(dir.path(), &["eval", "--checkpoint", "run/final.ckpt", "--procedural", "--config", "tiny.toml", "--n", "8", "--out", "r.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 8);
    assert!(report["js"].as_f64().unwrap() >= 0.0);
}

#[test]
fn gradcheck_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--seeds", "1"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("conv2d"));
}
