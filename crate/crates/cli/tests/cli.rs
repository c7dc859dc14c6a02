use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
name = "toy"
epsilons = [1.0, 4.0]
mechanisms = ["naive", "ps", "dipps", "laplace", "hybrid"]
repetitions = 2
seed = 3
k = 3
ot_subsample = 500

[dataset]
kind = "synthetic"
participant_weights = [0.6, 0.3, 0.1]
non_participant_weights = [0.1, 0.3, 0.6]
n_participants = 250
n_non_participants = 200
seed = 8

[[dataset.components]]
mean = [-4.0, 0.0]
covariance = [[0.4, 0.0], [0.0, 0.4]]

[[dataset.components]]
mean = [4.0, 0.0]
covariance = [[0.4, 0.0], [0.0, 0.4]]

[[dataset.components]]
mean = [0.0, 5.0]
covariance = [[0.4, 0.0], [0.0, 0.4]]
"#;

fn dipps(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_dipps"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "dipps {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_round_eval_compose() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    dipps(&["fit", "--config", &cfg, "--out-dir", s(&out)]);
    let model = out.join("model.json");
    assert!(model.exists() && out.join("normalization.json").exists());

    dipps(&[
        "round",
        "--config",
        &cfg,
        "--model",
        s(&model),
        "--mechanisms",
        "dipps,ps,hybrid",
        "--eps",
        "2",
        "--out-dir",
        s(&out),
    ]);
    let transcript = out.join("transcript-dipps-eps2.jsonl");
    let text = std::fs::read_to_string(&transcript).unwrap();
    assert_eq!(text.lines().count(), 1 + 200);
    assert!(out.join("transcript-ps.jsonl").exists());
    assert!(out.join("transcript-hybrid-eps2.jsonl").exists());

    let printed = dipps(&[
        "eval",
        "--config",
        &cfg,
        "--transcript",
        s(&transcript),
        "--out-dir",
        s(&out),
    ]);
    assert!(printed.contains("wasserstein/nonparticipant,"));
    let weights = out.join("transcript-dipps-eps2-weights.csv");
    assert!(weights.exists());

    // Scoring the saved weights reproduces the transcript's scores.
    let again = dipps(&[
        "eval",
        "--config",
        &cfg,
        "--weights",
        s(&weights),
        "--out-dir",
        s(&out),
    ]);
    let metrics = |t: &str| -> Vec<String> {
        t.lines()
            .filter(|l| l.contains(',') && l.contains('/') && !l.starts_with('/'))
            .map(String::from)
            .collect()
    };
    let (a, b) = (metrics(&printed), metrics(&again));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let (tx, vx) = x.rsplit_once(',').unwrap();
        let (ty, vy) = y.rsplit_once(',').unwrap();
        assert_eq!(tx, ty);
        let (vx, vy): (f64, f64) = (vx.parse().unwrap(), vy.parse().unwrap());
        assert!((vx - vy).abs() < 1e-9, "{tx}: {vx} vs {vy}");
    }

    let hybrid = dipps(&[
        "eval",
        "--config",
        &cfg,
        "--transcript",
        s(&out.join("transcript-hybrid-eps2.jsonl")),
        "--out-dir",
        s(&out),
    ]);
    assert!(hybrid.contains("mean/nonparticipant,"));
    assert!(!hybrid.contains("median/"));
}

#[test]
fn run_is_deterministic_and_honours_overrides() {
    let (dir, cfg) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        dipps(&[
            "run",
            "--config",
            &cfg,
            "--eps",
            "1",
            "--mechanisms",
            "naive,dipps",
            "--out-dir",
            s(out),
        ]);
    }
    for name in [
        "tables.md",
        "summary.csv",
        "cells.csv",
        "plot.csv",
        "metadata.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .skip(1)
        .all(|l| l.contains(",naive,") || l.contains(",dipps,")));
    assert!(!summary.contains(",4,"));
    let tables = std::fs::read_to_string(a.join("tables.md")).unwrap();
    assert!(tables.contains("## wasserstein/nonparticipant"));
}

#[test]
fn bad_input_fails_cleanly() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_dipps"))
        .args([
            "round",
            "--config",
            &cfg,
            "--mechanisms",
            "dipps",
            "--out-dir",
            s(&out),
        ])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("need --model"));

    let status = Command::new(env!("CARGO_BIN_EXE_dipps"))
        .args(["run", "--config", &cfg, "--mechanisms", "median"])
        .output()
        .unwrap();
    assert!(!status.status.success());
}
