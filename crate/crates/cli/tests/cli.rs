use std::path::Path;
use std::process::{Command, Output};

use viewsynth_core::latency::LatencyReport;
use viewsynth_core::metrics::MetricsReport;

/// Small enough that every training subcommand finishes in seconds.
const TINY: &[&str] = &[
    "--set", "model.height=32",
    "--set", "model.width=32",
    "--set", "epochs=1",
    "--set", "batch_size=2",
    "--set", "dataset.positions=1",
    "--set", "dataset.samples_per_position=2",
    "--set", "validation.positions=1",
    "--set", "validation.samples_per_position=2",
];

fn viewsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewsynth"))
        .args(args)
        .env_remove("VIEWSYNTH_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = viewsynth(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8(out.stdout).unwrap()
}

fn tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let text = ok(&["--help"]);
    for sub in ["train", "curriculum", "evaluate", "ablate", "benchmark", "serve", "make-data"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(ok(&["benchmark", "--help"]).contains("--resolutions"));
}

#[test]
fn usage_errors_exit_nonzero_with_one_line() {
    let out = viewsynth(&["evaluate", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = viewsynth(&["--config", "/nonexistent/cfg.toml", "evaluate", "--identity"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: reading config /nonexistent/cfg.toml"), "{stderr}");

    let out = viewsynth(&["--set", "batch_size=0", "evaluate", "--identity"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // evaluate needs a model
    assert!(!viewsynth(&["evaluate"]).status.success());
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_viewsynth"))
        .args(["evaluate", "--identity"])
        .env("VIEWSYNTH_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(!out.status.success(), "zero epochs must be rejected");
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn evaluate_round_trip_identity_is_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let table = ok(&tiny(&["evaluate", "--identity", "--protocol", "round_trip", "--out", path(&json)]));
    assert!(table.contains("PSNR"));
    assert!(table.contains("inf"), "{table}");
    let report = MetricsReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report.psnr.is_infinite());
    assert!(!report.per_sample.is_empty());
    assert!(report.per_sample.iter().all(|s| s.psnr == f64::INFINITY));
}

#[test]
fn benchmark_one_row_per_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("latency.json");
    let table = ok(&["benchmark", "--variants", "lite", "--resolutions", "256,512", "--out", path(&json)]);
    let report: LatencyReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows.iter().map(|r| r.height).collect::<Vec<_>>(), [256, 512]);
    assert!(report.rows.iter().all(|r| r.measured >= 30 && r.warmup >= 5 && r.fps > 0.0));
    // device line, header, two rows
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("256x256") && table.contains("512x512"));
}

#[test]
fn benchmark_rejects_short_runs() {
    let out = viewsynth(&["benchmark", "--variants", "lite", "--resolutions", "32", "--repeats", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("30"));
}

#[test]
fn ablate_embedding_writes_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("ablation.json");
    let table = ok(&tiny(&["ablate", "--axis", "embedding", "--out", path(&json)]));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 5);
    let text = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    assert_eq!(text, table);
    for label in ["MLP", "Norm+PosEnc+MLP", "Norm+MLP"] {
        assert!(text.contains(label), "{label} missing:\n{text}");
    }
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.safetensors");
    let log = dir.path().join("log.jsonl");
    let log_set = format!("log_path={:?}", path(&log));
    let mut args = tiny(&["train", "--out", path(&ckpt), "--set", &log_set]);
    ok(&args);
    assert!(ckpt.exists());
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 1);

    // resume for one more epoch: the log grows, nothing is rewritten
    args.extend(["--resume", path(&ckpt), "--set", "epochs=2"]);
    ok(&args);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);

    let json = dir.path().join("eval.json");
    ok(&tiny(&["evaluate", "--checkpoint", path(&ckpt), "--out", path(&json)]));
    let report = MetricsReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report.psnr.is_finite());
    assert_eq!((report.height, report.width), (32, 32));
}

#[test]
fn make_data_writes_light_field_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let lf = dir.path().join("lf");
    let stages = [
        "--set", "dataset.kind=\"light_field\"",
        "--set", "dataset.spec.rows=3",
        "--set", "dataset.spec.cols=3",
        "--set", "model.height=32",
        "--set", "model.width=32",
    ];
    let mut args = vec!["make-data", "--out", path(&lf)];
    args.extend(stages);
    ok(&args);
    let pngs = std::fs::read_dir(&lf).unwrap().count();
    assert_eq!(pngs, 9);

    let man = dir.path().join("man");
    ok(&tiny(&["make-data", "--out", path(&man)]));
    assert!(man.join("manifest.json").exists());
}
