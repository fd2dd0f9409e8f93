use std::path::Path;
use std::process::{Command, Output};

use psno::cli::DatasetSummary;

fn psno(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psno"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PSNO_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = psno(cwd, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: [&str; 6] = ["--n-train", "16", "--n-val", "4", "--n-test", "4"];

fn generate(cwd: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["generate", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    ok(cwd, &args);
}

#[test]
fn generate_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a", &["--jobs", "1"]);
    generate(d, "b", &["--jobs", "4"]);
    for f in ["train.psds", "val.psds", "test.psds", "summary.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let s: DatasetSummary = serde_json::from_str(&std::fs::read_to_string(d.join("a/summary.json")).unwrap()).unwrap();
    assert_eq!((s.input_len, s.target_len), (3, 29));
    assert_eq!(s.splits["train"].records, 16);
}

#[test]
fn unstable_fraction_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "d", &["--unstable-fraction", "0.25"]);
    let s: DatasetSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/summary.json")).unwrap()).unwrap();
    assert_eq!(s.splits["train"].unstable, 4);
    assert_eq!(s.splits["test"].unstable, 1);
}

#[test]
fn seed_env_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a", &[]);
    let mut args = vec!["generate", "--out", "b"];
    args.extend(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_psno")).args(&args).current_dir(d).env("PSNO_SEED", "99").output().unwrap();
    assert!(out.status.success());
    assert_ne!(std::fs::read(d.join("a/train.psds")).unwrap(), std::fs::read(d.join("b/train.psds")).unwrap());
    let out = Command::new(env!("CARGO_BIN_EXE_psno")).args(&args).current_dir(d).env("PSNO_SEED", "-1").output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_and_io_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&psno(d, &["frobnicate"])), 2);
    assert_eq!(code(&psno(d, &["train", "--model", "transformer"])), 2);
    assert_eq!(code(&psno(d, &["--help"])), 0);

    let out = psno(d, &["train", "--model", "fno", "--tiny", "--data", "nowhere"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    std::fs::write(d.join("cfg.json"), r#"{"sampling": {"dtt": 0.1}}"#).unwrap();
    assert_eq!(code(&psno(d, &["--config", "cfg.json", "generate"])), 2);
    assert_eq!(code(&psno(d, &["--config", "missing.json", "generate"])), 3);

    std::fs::write(d.join("big.json"), r#"{"model": {"fno": {"width": 256}}}"#).unwrap();
    let out = psno(d, &["--config", "big.json", "train", "--model", "fno", "--data", "nowhere"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "coarse", &[]);
    generate(d, "fine", &["--dt", "0.001"]);
    generate(d, "other", &["--unstable-fraction", "0.25"]);
    for (kind, data, out) in [("fno", "coarse", "c/fno0.ckpt"), ("deeponet", "coarse", "c/don0.ckpt"), ("fno", "other", "c/fno20.ckpt")] {
        ok(d, &["train", "--model", kind, "--tiny", "--epochs", "2", "--batch-size", "8", "--data", data, "--out", out]);
    }
    assert!(std::fs::read_to_string(d.join("c/fno0.csv")).unwrap().starts_with("# loss:"));

    ok(d, &["eval", "--coarse", "coarse", "--fine", "fine", "--checkpoints", "c/fno0.ckpt", "c/don0.ckpt", "--out", "o/superres.csv"]);
    let csv = std::fs::read_to_string(d.join("o/superres.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let out = psno(d, &["eval", "--coarse", "coarse", "--fine", "other", "--oracle", "fno"]);
    assert_eq!(code(&out), 2);

    ok(d, &["eval", "--coarse", "coarse", "--fine", "fine", "--oracle", "fno", "--out", "o/oracle.csv"]);
    let row = std::fs::read_to_string(d.join("o/oracle.csv")).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(row, "fno,0,0,0,0,,,");

    ok(d, &["sweep", "--mix0", "c/fno0.ckpt", "--mix20", "c/fno20.ckpt", "--points", "6", "--out", "o"]);
    let sweep = std::fs::read_to_string(d.join("o/sweep_fno.csv")).unwrap();
    assert!(sweep.lines().any(|l| l.starts_with("0.4,") && l.ends_with("pm_marker")));
    assert!(sweep.lines().any(|l| l.ends_with("threshold_marker")));

    ok(d, &["report", "--data", "coarse", "--checkpoints", "c/fno0.ckpt", "--superres", "o/superres.json", "--sweep", "o/sweep.json", "--out", "r"]);
    for f in ["overlay_fno.svg", "sweep_fno.svg", "summary.md", "summary.csv"] {
        let text = std::fs::read_to_string(d.join("r").join(f)).unwrap();
        assert!(!text.is_empty(), "{f}");
    }
    assert!(std::fs::read_to_string(d.join("r/overlay_fno.svg")).unwrap().contains("stroke-dasharray"));
}
