use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
dataset.systems = mass-spring
dataset.count = 16
dataset.frames = 8
hnn.hidden = 16
hnn.steps = 20
gan.d_lat = 2
gan.d_cont = 4
gan.motion_noise_dim = 4
gan.map_hidden = 8
gan.hnn_hidden = 8
gan.generator_hidden = 16
gan.discriminator_hidden = 8
gan.iterations = 3
gan.batch_size = 8
gan.checkpoint_every = 2
eval.samples = 4
analyze.samples = 100
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sympgan"))
        .arg("--run")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["simulate", "teapot"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["--set", "gan.bogus=1", "dataset"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["--set", "dataset.count=abc", "dataset"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train-gan", "--resume", "--sweep-lambda", "0.1"]).status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["train-hnn"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["eval"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["analyze"]).status.code(), Some(3));
}

#[test]
fn simulate_is_deterministic_and_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["simulate", "pendulum", "--theta0", "1.0"]);
    let csv = dir.path().join("simulate-pendulum.csv");
    let first = fs::read(&csv).unwrap();
    let b = ok(dir.path(), &["simulate", "pendulum", "--theta0", "1.0"]);
    assert_eq!(first, fs::read(&csv).unwrap());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 31);
}

#[test]
fn keys_lists_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["keys"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["run.seed", "gan.lambda_cyclic", "eval.drift_gate", "analyze.variance_threshold"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key} missing");
    }
}

#[test]
fn pipeline_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = tiny_config(dir.path());
    let c = ["--config", cfg.as_str()];
    for cmd in ["dataset", "train-hnn", "train-gan", "generate", "eval", "analyze"] {
        ok(&run_dir, &[c[0], c[1], cmd]);
    }
    for file in [
        "dataset/manifest.json",
        "hnn-mass-spring.json",
        "gan.json",
        "generated.json",
        "eval.json",
        "drift.csv",
        "mse_table.csv",
        "analysis-mass-spring.json",
        "latents-mass-spring.csv",
        "provenance/train-gan.json",
    ] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }

    let analysis: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("analysis-mass-spring.json")).unwrap()).unwrap();
    for field in ["activity", "spectrum", "pca_dimension", "dimension"] {
        assert!(analysis.get(field).is_some(), "analysis lacks {field}");
    }

    let copy = dir.path().join("copy");
    let prov = run_dir.join("provenance/train-gan.json");
    ok(&copy, &["replay", prov.to_str().unwrap(), "--into", copy.to_str().unwrap()]);
    assert_eq!(
        fs::read(run_dir.join("gan.json")).unwrap(),
        fs::read(copy.join("gan.json")).unwrap()
    );
}

#[test]
fn overrides_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    ok(&run_dir, &["--config", &cfg, "--set", "dataset.count=5", "dataset"]);
    let prov: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("provenance/dataset.json")).unwrap()).unwrap();
    let text = prov["config"].to_string();
    assert!(text.contains("dataset.count"), "{text}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("dataset/manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("\"count\":5"), "{manifest}");
}
