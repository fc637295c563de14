use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"{
  "train": {
    "steps": 3,
    "log_every": 1,
    "holdout_batches": 1,
    "distance_pairs": 8,
    "policy_hidden": [8],
    "classifier_hidden": 8,
    "encoder": {"views": 2, "in_channels": 3, "image_size": 32, "stage_channels": [2, 2, 4, 4],
                "feature_dim": 8, "mlp_hidden": [16, 16], "embed_dim": 8}
  },
  "eval-imitate": {
    "demos": 2,
    "attempts": 1,
    "budget_factor": 1,
    "cem": {"population": 6, "elites": 2, "iterations": 1, "horizon": 3, "init_std": 0.6, "min_std": 0.05}
  }
}"#;

fn mirlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirlab"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env("MIRLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mirlab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("cfg.json"), TINY_CONFIG).unwrap();
    let cfg = dir.join("cfg.json");
    let cfg = cfg.to_str().unwrap();
    let msg = ok(dir, &["gen-data", "--episodes", "4", "--seed", "3"]);
    assert!(msg.contains("wrote 8 paired trajectories"), "{msg}");
    for loss in ["tcn", "gcp"] {
        ok(dir, &["--config", cfg, "train", "--loss", loss, "--seed", "5"]);
    }
    ok(
        dir,
        &["--config", cfg, "eval-imitate", "--methods", "tcn,gcp", "--domains", "stick,invisible"],
    );
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["d.mird", "tcn.mirm", "tcn_metrics.csv", "gcp.mirm", "eval_report.csv", "eval_report.json", "manifest.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let csv = std::fs::read_to_string(a.path().join("eval_report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "method,domain,demo_id,lift_rate,stack_rate,mean_goals_reached");
    // methods × domains × demos, rows grouped by method then table column order
    assert_eq!(rows.len(), 1 + 2 * 2 * 2);
    assert!(rows[1].starts_with("tcn,invisible,0,"));
    assert!(rows[3].starts_with("tcn,stick,0,"));
    assert!(rows[5].starts_with("gcp,invisible,0,"));

    let metrics = std::fs::read_to_string(a.path().join("tcn_metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss,loss_tscn,loss_cdgcp,holdout_loss\n"));
    assert_eq!(metrics.lines().count(), 1 + 4);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    for cmd in ["gen-data", "train", "eval-imitate"] {
        assert!(manifest["runs"][cmd]["config"].is_object(), "{cmd} missing from manifest");
    }
    assert_eq!(manifest["runs"]["train"]["config"]["steps"], 3);
    assert_eq!(manifest["runs"]["train"]["config"]["seed"], 5);
}

#[test]
fn reports_and_reachability() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    pipeline(dir);
    let cfg = dir.join("cfg.json");
    let cfg = cfg.to_str().unwrap();
    let msg = ok(dir, &["--config", cfg, "eval-reachability", "--methods", "tcn", "--demos", "1"]);
    assert!(msg.contains("tcn"), "{msg}");
    let csv = std::fs::read_to_string(dir.join("reachability.csv")).unwrap();
    assert!(csv.starts_with("method,trajectory,rho_same,rho_cross,alignment\n"));

    ok(dir, &["report", "--kind", "success", "--input", "eval_report.csv", "--out", "success.svg"]);
    ok(dir, &["report", "--kind", "loss", "--input", "tcn_metrics.csv"]);
    let svg = std::fs::read_to_string(dir.join("success.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("domain-stick"));
    let again = tempfile::tempdir().unwrap();
    std::fs::copy(dir.join("eval_report.csv"), again.path().join("eval_report.csv")).unwrap();
    ok(again.path(), &["report", "--kind", "success", "--input", "eval_report.csv", "--out", "success.svg"]);
    assert_eq!(svg, std::fs::read_to_string(again.path().join("success.svg")).unwrap());

    ok(dir, &["report", "--kind", "embeddings", "--checkpoint", "tcn.mirm", "--trajectory", "0"]);
    let emb = std::fs::read_to_string(dir.join("embeddings.csv")).unwrap();
    assert!(emb.starts_with("side,domain,frame,e0,"));
    assert_eq!(emb.lines().count(), 1 + 200);
}

fn fails_with(dir: &Path, args: &[&str], needle: &str) {
    let out = mirlab(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    assert!(err.contains(needle), "{err:?} lacks {needle:?}");
}

#[test]
fn failures_are_single_line_diagnostics() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fails_with(dir, &["gen-data", "--bogus", "1"], "--bogus");
    fails_with(dir, &["train", "--data", "missing.mird"], "missing.mird");
    fails_with(dir, &["train", "--loss", "nope", "--data", "x"], "nope");
    ok(dir, &["gen-data", "--episodes", "2"]);
    let mut bytes = std::fs::read(dir.join("d.mird")).unwrap();
    bytes[4] = 7;
    std::fs::write(dir.join("old.mird"), bytes).unwrap();
    fails_with(dir, &["train", "--data", "old.mird", "--steps", "1"], "version");
    std::fs::write(dir.join("bad.csv"), "step,holdout_loss\n0,1\n").unwrap();
    fails_with(dir, &["report", "--kind", "loss", "--input", "bad.csv"], "\"loss\"");
    std::fs::write(dir.join("cfg.json"), r#"{"gen-data": {"episodez": 3}}"#).unwrap();
    let cfg = dir.join("cfg.json");
    fails_with(dir, &["--config", cfg.to_str().unwrap(), "gen-data"], "episodez");
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    std::fs::write(dir.join("cfg.json"), r#"{"gen-data": {"episodes": 2, "seed": 9, "out": "a.mird"}}"#).unwrap();
    let cfg = dir.join("cfg.json");
    let msg = ok(dir, &["--config", cfg.to_str().unwrap(), "gen-data", "--seed", "4"]);
    assert!(msg.contains("wrote 4 paired trajectories"), "{msg}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let c = &manifest["runs"]["gen-data"]["config"];
    assert_eq!(c["seed"], 4);
    assert_eq!(c["episodes"], 2);
    assert_eq!(c["out"], "a.mird");
    assert!(dir.join("a.mird").exists());
}
