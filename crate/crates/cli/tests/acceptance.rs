//! End-to-end checks on the installed binary: run-to-run determinism (the
//! last acceptance criterion) plus the run-directory contract.

use std::fs;
use std::path::Path;
use std::process::Command;

fn riseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_riseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn prepare_suite(dir: &Path) -> (String, String) {
    let suite = dir.join("suite");
    let model = dir.join("model.riskde");
    ok(
        &riseg(&[
            "generate",
            "--count",
            "3",
            "--objects",
            "4..5",
            "--seed",
            "11",
            "--out",
            suite.to_str().unwrap(),
        ]),
        "generate",
    );
    ok(
        &riseg(&[
            "train-kde",
            "--episodes",
            "12",
            "--seed",
            "5",
            "--out",
            model.to_str().unwrap(),
        ]),
        "train-kde",
    );
    (
        suite.to_str().unwrap().to_string(),
        model.to_str().unwrap().to_string(),
    )
}

fn run_into(suite: &str, model: &str, out: &Path) {
    ok(
        &riseg(&[
            "run",
            "--suite",
            suite,
            "--model",
            model,
            "--out",
            out.to_str().unwrap(),
            "--max-pushes",
            "2",
        ]),
        "run",
    );
}

/// Criterion 7: two identical `riseg run` invocations produce byte-identical
/// metrics.csv files.
#[test]
fn criterion_7_run_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (suite, model) = prepare_suite(tmp.path());
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    run_into(&suite, &model, &a);
    run_into(&suite, &model, &b);
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    let mb = fs::read(b.join("metrics.csv")).unwrap();
    let identical = ma == mb;
    println!(
        "acceptance criterion 7 (run determinism): {} — metrics.csv {} bytes, \
         byte-identical across two runs: {identical}",
        if identical { "PASS" } else { "FAIL" },
        ma.len(),
    );
    assert!(identical, "criterion 7 failed: metrics.csv differs between runs");
}

/// The run directory holds per-step masks, flow, and actions per scene, the
/// top-level reports, and `riseg eval` reproduces metrics.csv from the masks.
#[test]
fn run_dir_layout_and_eval_consistency() {
    let tmp = tempfile::tempdir().unwrap();
    let (suite, model) = prepare_suite(tmp.path());
    let run = tmp.path().join("run");
    run_into(&suite, &model, &run);

    for top in ["metrics.csv", "summary.json", "config_resolved.json"] {
        assert!(run.join(top).exists(), "missing {top}");
    }
    for scene in 0..3 {
        let dir = run.join(format!("scene_{scene:03}"));
        for f in ["mask_static_0.pgm", "mask_riseg_0.pgm", "mask_gt_0.pgm"] {
            assert!(dir.join(f).exists(), "scene {scene} missing {f}");
        }
        // Steps after the first carry the flow and the action that led there.
        if dir.join("mask_gt_1.pgm").exists() {
            assert!(dir.join("flow_1.risflow").exists(), "scene {scene} missing flow_1");
            assert!(dir.join("action_1.json").exists(), "scene {scene} missing action_1");
        }
    }

    let eval = riseg(&["eval", "--run", run.to_str().unwrap()]);
    ok(&eval, "eval");
    let rescored = String::from_utf8(eval.stdout).unwrap();
    let stored = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(rescored, stored, "eval output diverges from the stored metrics.csv");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (suite, model) = prepare_suite(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_pushes": 1, "no_such_knob": true}"#).unwrap();
    let out = riseg(&[
        "run",
        "--suite",
        &suite,
        "--model",
        &model,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success(), "run accepted a config with unknown keys");
}
