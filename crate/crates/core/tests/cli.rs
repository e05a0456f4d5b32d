//! End-to-end checks of the `gtc` binary: exit codes, output files,
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

fn gtc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn gtc")
}

#[test]
fn check_scheme_prints_classification() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtc(&["check-scheme", "GSA342"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["type A     : true", "ISA        : true", "GSA        : true", "order 2    : true"] {
        assert!(text.contains(needle), "missing {needle:?} in:\n{text}");
    }

    let out = gtc(&["check-scheme", "SSP2332"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("GSA        : false"));
}

#[test]
fn unknown_scheme_fails_with_listing() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtc(&["check-scheme", "RK4"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("GSA342") && err.contains("SSP2332"));
}

#[test]
fn missing_config_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let out = gtc(
        &[
            "--config",
            "nope.json",
            "--out",
            out_dir.to_str().unwrap(),
            "forward",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("nope.json"), "{err}");
    assert!(!out_dir.exists(), "partial outputs were written");
}

#[test]
fn order_study_writes_table_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtc(
        &[
            "--out",
            "results",
            "order-study",
            "--scheme",
            "SSP2332",
            "--n-list",
            "20,40",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("results/order.csv")).unwrap();
    assert!(table.starts_with("# scheme = SSP2332"));
    assert!(table.contains("n_steps,err_rho_l1"));
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn forward_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"n_steps": 8, "cells": 12, "t_final": 0.1, "eps": 0.5}"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();
    let args = ["--config", "run.json", "--out", "results", "forward"];
    assert!(gtc(&args, dir.path()).status.success());
    let first = std::fs::read(dir.path().join("results/state.csv")).unwrap();
    assert!(gtc(&args, dir.path()).status.success());
    let second = std::fs::read(dir.path().join("results/state.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn optimize_writes_control_state_adjoint_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "n_steps": 20, "cells": 12, "t_final": 0.5,
        "eps": 0.0, "nu": 0.01, "max_iters": 200, "tol": 1e-4,
        "data": "heat-cosine"
    }"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();
    let out = gtc(
        &["--config", "run.json", "--out", "results", "optimize"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["control.csv", "state.csv", "adjoint.csv", "summary.txt", "optimizer_trace.csv"] {
        assert!(
            dir.path().join("results").join(file).exists(),
            "missing {file}"
        );
    }
    let summary = std::fs::read_to_string(dir.path().join("results/summary.txt")).unwrap();
    assert!(summary.contains("J_star"));
}

#[test]
fn ce_verify_emits_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtc(
        &["--out", "results", "ce-verify", "--eps", "0.05,0.025,0.0125"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("results/ce_verify.csv")).unwrap();
    assert!(table.contains("eps,residual,observed_rate"));
}
