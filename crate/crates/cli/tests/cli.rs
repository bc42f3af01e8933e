use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[scenario]
duration = 4.0
num_background = 12

[train]
train_window = [0.0, 2.0]
max_rounds = 1

[experiment]
test_window = [2.0, 4.0]
"#;

fn dmf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn with_config() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dmf(dir.path(), &["--help"])), 0);
    assert_eq!(code(&dmf(dir.path(), &["--version"])), 0);
    assert_eq!(code(&dmf(dir.path(), &["bench", "--help"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dmf(dir.path(), &[])), 1);
    assert_eq!(code(&dmf(dir.path(), &["--bogus", "bench", "--out", "x"])), 1);
    assert_eq!(code(&dmf(dir.path(), &["train", "--method", "sgd", "--out", "x"])), 1);
    assert_eq!(code(&dmf(dir.path(), &["--weight-mode", "loud", "bench", "--out", "x"])), 1);
}

#[test]
fn validation_errors_exit_2() {
    let dir = with_config();
    let out = dmf(dir.path(), &["--config", "run.toml", "--delta", "1.5", "bench", "--out", "b"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));

    fs::write(dir.path().join("typo.toml"), "[fusion]\ndleta = 0.2\n").unwrap();
    assert_eq!(code(&dmf(dir.path(), &["--config", "typo.toml", "bench", "--out", "b"])), 2);
    assert_eq!(code(&dmf(dir.path(), &["--config", "missing.toml", "bench", "--out", "b"])), 2);
    assert!(!dir.path().join("b").exists());
}

#[test]
fn runtime_errors_exit_3() {
    let dir = with_config();
    assert_eq!(
        code(&dmf(dir.path(), &["--config", "run.toml", "fuse", "--input", "absent.jsonl"])),
        3
    );
    fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    assert_eq!(code(&dmf(dir.path(), &["report", "--input", "bad.json"])), 3);
}

#[test]
fn simulate_then_fuse() {
    let dir = with_config();
    let out = dmf(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "simulate",
            "--out",
            "scenario.jsonl",
            "--local-maps",
            "locals.jsonl",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scenario = fs::read_to_string(dir.path().join("scenario.jsonl")).unwrap();
    assert!(scenario.lines().next().unwrap().contains("\"record\":\"header\""));
    // header plus 4 s at 20 Hz
    assert_eq!(scenario.lines().count(), 1 + 80);

    let locals = fs::read_to_string(dir.path().join("locals.jsonl")).unwrap();
    assert_eq!(locals.lines().count(), 80 * 5);

    let out = dmf(
        dir.path(),
        &["--config", "run.toml", "fuse", "--input", "locals.jsonl", "--out", "global.jsonl"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let global = fs::read_to_string(dir.path().join("global.jsonl")).unwrap();
    assert_eq!(global.lines().count(), 80);

    let out = dmf(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "fuse",
            "--input",
            "locals.jsonl",
            "--method",
            "max_score",
            "--format",
            "kitti",
        ],
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("# frame_time")).count(), 80);
    assert!(text.lines().any(|l| l.starts_with("Car ")));
}

#[test]
fn train_writes_checkpoint_and_curve() {
    let dir = with_config();
    let out = dmf(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "train",
            "--method",
            "perfect_fl",
            "--out",
            "fl.ckpt",
            "--curve",
            "curve.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(dir.path().join("fl.ckpt")).unwrap();
    assert_eq!(&bytes[..4], b"DMCK");
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    // header plus one row per vehicle for the single round
    assert_eq!(curve.lines().count(), 1 + 5);

    let out = dmf(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "simulate",
            "--out",
            "s.jsonl",
            "--local-maps",
            "l.jsonl",
            "--checkpoint",
            "fl.ckpt",
        ],
    );
    assert_eq!(code(&out), 0);
}

#[test]
fn evaluate_then_report() {
    let dir = with_config();
    let out = dmf(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "evaluate",
            "--method",
            "no_fusion_no_fl,three_stage",
            "--out",
            "eval",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("method,scope,slice,ap,truths,true_positives,false_positives"));
    assert!(!csv.contains("mean_fusion"));

    let out = dmf(dir.path(), &["report", "--input", "eval/report.json", "--out", "radar.csv"]);
    assert_eq!(code(&out), 0);
    let radar = fs::read_to_string(dir.path().join("radar.csv")).unwrap();
    let lines: Vec<&str> = radar.lines().collect();
    assert_eq!(lines[0], "method,SR,MR,LR,NO,PO,LO,LD,HD");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("three_stage,"));
}

#[test]
fn bench_is_deterministic() {
    let dir = with_config();
    for out_dir in ["a", "b"] {
        let out = dmf(dir.path(), &["--config", "run.toml", "--seed", "4", "bench", "--out", out_dir]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let seq = dmf(
        dir.path(),
        &["--config", "run.toml", "--seed", "4", "--sequential", "bench", "--out", "c"],
    );
    assert_eq!(code(&seq), 0);
    for file in ["report.json", "report.csv", "radar.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
        assert_eq!(a, fs::read(dir.path().join("c").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn seed_changes_the_run() {
    let dir = with_config();
    for (seed, out_dir) in [("1", "s1"), ("2", "s2")] {
        let out = dmf(
            dir.path(),
            &[
                "--config",
                "run.toml",
                "--seed",
                seed,
                "evaluate",
                "--method",
                "three_stage",
                "--out",
                out_dir,
            ],
        );
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(dir.path().join("s1/report.json")).unwrap();
    let b = fs::read(dir.path().join("s2/report.json")).unwrap();
    assert_ne!(a, b);
}
