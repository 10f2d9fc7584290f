use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bk2f(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bk2f"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(["--depth", "3", "--scenarios", "5", "--set", "train.max_epochs=3"])
        .env_remove("BK2F_OUT")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn generate_writes_one_row_per_scenario_and_step() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bk2f(dir.path(), &["generate", "--which", "train"]));
    let text = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 12);
    assert!(dir.path().join("train.meta").exists());
    assert!(!dir.path().join("valid.csv").exists());
}

#[test]
fn regeneration_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bk2f(dir.path(), &["generate"]));
    let first = fs::read(dir.path().join("valid.csv")).unwrap();
    ok(&bk2f(dir.path(), &["generate", "--threads", "1"]));
    assert_eq!(first, fs::read(dir.path().join("valid.csv")).unwrap());
}

#[test]
fn large_depth_needs_explicit_permission() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bk2f"))
        .args(["generate", "--depth", "12", "--scenarios", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("16777216 nodes"), "{err}");
    assert!(err.contains("bytes"), "{err}");
}

#[test]
fn full_pipeline_through_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bk2f(dir.path(), &["generate"]));
    let o = bk2f(dir.path(), &["train"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("holdout loss"));
    let o = bk2f(dir.path(), &["report"]);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mom_oos"), "{stdout}");
    let rmse = fs::read_to_string(dir.path().join("report/rmse.csv")).unwrap();
    let ts: Vec<&str> = rmse.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ts, (2..=12).map(|t| t.to_string()).collect::<Vec<_>>());
    let first = rmse.clone();
    ok(&bk2f(dir.path(), &["evaluate"]));
    assert_eq!(first, fs::read_to_string(dir.path().join("report/rmse.csv")).unwrap());
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn missing_model_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bk2f(dir.path(), &["generate"]));
    let o = bk2f(dir.path(), &["evaluate", "--model", "/nonexistent/model.txt"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/model.txt"));
}

#[test]
fn training_on_the_validation_dataset_is_a_fingerprint_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bk2f(dir.path(), &["generate", "--which", "valid"]));
    let valid = dir.path().join("valid.csv");
    let o = bk2f(dir.path(), &["train", "--dataset", valid.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint mismatch"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# desk run\nmaster_seed = 17\nparams_train.sigma1 = 0.3\n").unwrap();
    ok(&bk2f(dir.path(), &["generate", "--which", "train", "--config", cfg.to_str().unwrap()]));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.master_seed = 17"), "{manifest}");
    assert!(manifest.contains("config.params_train.sigma1 = 0.3"));
    assert!(manifest.contains("config.sim.branch_depth = 3"));

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = bk2f(dir.path(), &["generate", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bk2f"))
        .args(["generate", "--which", "train", "--depth", "2", "--scenarios", "2"])
        .env("BK2F_OUT", dir.path())
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("train.csv").exists());
}
