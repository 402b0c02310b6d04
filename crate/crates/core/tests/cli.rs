use std::path::Path;
use std::process::{Command, Output};

fn fpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fpn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Generates the two-Gaussian task and trains the whole pipeline on it.
fn trained_run(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    ok(&["gen-data", "two-gaussian", "--out-dir", d, "--count", "1500", "--seed", "4"]);
    let cfg = dir.join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("epochs = 100", "epochs = 15");
    std::fs::write(&cfg, text).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    for cmd in ["train-ae", "encode", "train-flow"] {
        ok(&[cmd, &cfg]);
    }
    cfg
}

#[test]
fn pipeline_and_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_run(dir.path());
    let run = dir.path().join("run");
    for artifact in ["autoencoder.fpn", "autoencoder_loss.csv", "latents.fpn", "flow.fpn", "flow_loss.csv"] {
        assert!(run.join(artifact).is_file(), "{artifact} missing");
    }
    let csv = std::fs::read_to_string(run.join("flow_loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_nll,val_nll\n"));
    let ae_before = std::fs::read(run.join("autoencoder.fpn")).unwrap();
    let sum_before = fpn_core::io::load_autoencoder(run.join("autoencoder.fpn")).unwrap().checksum();

    let report = ok(&["classify", &cfg]);
    let acc: f64 = report.lines().next().unwrap().strip_prefix("accuracy,").unwrap().parse().unwrap();
    assert!(acc >= 0.99, "{report}");
    assert!(report.contains("true,pred_0,pred_1"));

    let (a, b) = (run.join("a.fpnm"), run.join("b.fpnm"));
    for path in [&a, &b] {
        ok(&["sample", &cfg, "--class", "1", "--count", "12", "--seed", "5", "--out", path.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let samples = fpn_core::io::load_matrix(&a).unwrap();
    assert_eq!(samples.rows(), 12);
    assert!(samples.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let edited = run.join("edited.fpnm");
    ok(&["manipulate", &cfg, "--dst-class", "0", "--out", edited.to_str().unwrap()]);
    assert_eq!(fpn_core::io::load_matrix(&edited).unwrap().rows(), 1500);

    let eval = ok(&["eval", &cfg, "--rows", "16"]);
    let value = |key: &str| -> f64 {
        eval.lines().find_map(|l| l.strip_prefix(&format!("{key},"))).unwrap().parse().unwrap()
    };
    assert!(value("roundtrip_max_abs") < 1e-8, "{eval}");
    assert!(value("logdet_sum_max_abs") < 1e-8, "{eval}");
    assert!(value("fd_logdet_max_abs") < 1e-4, "{eval}");

    // Nothing downstream of train-ae writes to the base model.
    assert_eq!(std::fs::read(run.join("autoencoder.fpn")).unwrap(), ae_before);
    assert_eq!(fpn_core::io::load_autoencoder(run.join("autoencoder.fpn")).unwrap().checksum(), sum_before);
}

#[test]
fn usage_errors() {
    let out = fpn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(fpn(&[]).status.code(), Some(2));
    assert_eq!(fpn(&["sample", "x.toml"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let out = fpn(&["train-ae", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn classify_before_training_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "digits", "--out-dir", dir.path().to_str().unwrap(), "--count", "50"]);
    assert!(dir.path().join("labels.csv").is_file());
    let out = fpn(&["classify", dir.path().join("config.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
