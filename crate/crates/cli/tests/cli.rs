use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn microseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microseg")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn params_prints_table() {
    let o = microseg(&["params", "--variant", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("encoder") && text.contains("reference"));
    assert!(text.contains("6.10"));
}

#[test]
fn warmup_not_below_epochs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"epochs": 10, "warmup_epochs": 10}"#).unwrap();
    let out = dir.path().join("run");
    let o = microseg(&["train", "--stage", "soma", "--data", "missing", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("warmup_epochs"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn malformed_config_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"optimizer": {"beta1": "high"}}"#).unwrap();
    let o = microseg(&["train", "--stage", "soma", "--data", "x", "--out", "y", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("optimizer.beta1"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    let o = microseg(&["train", "--stage", "soma", "--data", "x", "--out", "y", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = microseg(&["gen-data", "--seed", "7", "--count", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 3 * 4);
    assert_eq!(ta, tb);
}

#[test]
fn unknown_flag_fails_with_one_line() {
    let o = microseg(&["params", "--bogus"]);
    assert!(!o.status.success());
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}

#[test]
fn end_to_end_train_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let o = microseg(&["gen-data", "--seed", "3", "--count", "6", "--out", &p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"epochs": 2, "warmup_epochs": 1, "batch_size": 2, "accumulation": 1}"#).unwrap();
    let o = microseg(&["train", "--stage", "soma", "--data", &p(&data), "--out", &p(&run), "--config", &p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("last.tr3d");
    assert!(ckpt.exists() && run.join("history.json").exists());

    let branch = dir.path().join("branch");
    let o = microseg(&[
        "train",
        "--stage",
        "branch",
        "--data",
        &p(&data),
        "--out",
        &p(&branch),
        "--config",
        &p(&cfg),
        "--checkpoint",
        &p(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(branch.join("transfer.json").exists());

    let report = dir.path().join("report.json");
    let o = microseg(&["eval", "--checkpoint", &p(&ckpt), "--data", &p(&data), "--split", "all", "--out", &p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["mode"], "soma");

    let pred = dir.path().join("pred");
    let o = microseg(&[
        "infer",
        "--checkpoint",
        &p(&ckpt),
        "--branch-checkpoint",
        &p(&branch.join("last.tr3d")),
        "--input",
        &p(&data.join("vol_0000")),
        "--out",
        &p(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(pred.join("soma_prob.v3d").exists() && pred.join("somas.json").exists());

    let o = microseg(&["infer", "--checkpoint", &p(&branch.join("last.tr3d")), "--input", &p(&data.join("vol_0000")), "--out", &p(&pred)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}
