//! The `cdm` binary: subcommands, flags and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn cdm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TINY: &str = r#"
profile = "smoke"
train_records = 32
test_channels = 4
methods = ["opt", "rzf-ns", "mrt"]
"#;

#[test]
fn classical_eval_succeeds_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = cdm(&["--config", "tiny.toml", "--out", "run", "--seed", "4", "eval"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("opt")), "{stdout}");
    assert!(dir.path().join("run/metrics/eval.csv").exists());
}

#[test]
fn gen_data_writes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = cdm(&["--config", "tiny.toml", "--out", "run", "gen-data"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run/data/train/manifest.json").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "train_records = \"many\"\n").unwrap();
    std::fs::write(dir.path().join("unknown.toml"), "learning_rate_typo = 1\n").unwrap();
    std::fs::write(dir.path().join("zero.toml"), "train_records = 0\n").unwrap();
    for args in [
        vec!["--config", "bad.toml", "gen-data"],
        vec!["--config", "unknown.toml", "gen-data"],
        vec!["--config", "zero.toml", "gen-data"],
        vec!["--config", "missing.toml", "gen-data"],
        vec!["--profile", "smoke", "sweep", "--axis", "bandwidth"],
        vec!["--profile", "smoke", "eval", "--methods", "opt,nonsense"],
        vec!["--profile", "huge", "gen-data"],
        vec!["launch"],
    ] {
        let o = cdm(&args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn failing_stages_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("corrupt/data/train")).unwrap();
    std::fs::write(dir.path().join("corrupt/data/train/manifest.json"), "{ not json").unwrap();
    for args in [
        vec!["--profile", "smoke", "--out", "corrupt", "train"],
        vec!["--profile", "smoke", "--out", "run", "eval", "--methods", "cdm"],
        vec!["--profile", "smoke", "--out", "run", "plot"],
    ] {
        let o = cdm(&args, dir.path());
        assert_eq!(code(&o), 3, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
