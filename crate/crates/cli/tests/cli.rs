use std::path::Path;
use std::process::{Command, Output};

fn dvta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvta"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DVTA_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_RUN: &str = r#"{
  "model": {"visual_dim": 32, "text_dim": 64, "embed_dim": 16, "visual_hidden": 16, "metric_hidden": [16, 8]},
  "train": {"learning_rate": 1e-3, "epochs": 2, "batch_size": 32, "seed": 3}
}"#;

/// A small synthetic dataset in `dir/data` plus a run config at `dir/run.json`.
fn setup(dir: &Path) {
    std::fs::write(dir.join("spec.json"), r#"{"samples_per_class": 8}"#).unwrap();
    let o = dvta(&["gen-synthetic", "--spec", "spec.json", "--out", "data", "--seed", "2"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::write(dir.join("run.json"), SMALL_RUN).unwrap();
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = dvta(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage: dvta"));
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = dvta(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["gen-synthetic", "train", "eval", "ablate", "gradcheck", "export-sim", "export-emb", "--threads"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let o = dvta(&["train", "--help"], dir.path());
    let text = stdout(&o);
    for flag in ["--config", "--data", "--out", "--seed"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dvta(&["frobnicate"], dir.path()).status.code(), Some(1));
    let o = dvta(&["gradcheck", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn gradcheck_prints_table_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dvta(&["gradcheck", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("visual.0.weight") && text.contains("metric.0.weight"));
    assert!(text.trim_end().ends_with("PASS"));
    let o = dvta(&["gradcheck", "--seed", "3", "--da-only"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
}

#[test]
fn train_with_missing_data_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = dvta(&["train", "--data", "no/such/dir", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no/such/dir"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"model": {"gamma": -1, "use_da": false, "use_aa": false}, "train": {"learning_rate": 0}}"#,
    )
    .unwrap();
    let o = dvta(&["train", "--config", "bad.json", "--data", "data", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("model.gamma: gamma must be positive"), "{err}");
    assert!(err.contains("model.use_da: at least one of use_da and use_aa must be true"), "{err}");
    assert!(err.contains("train.learning_rate"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn mismatched_model_dims_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("wide.json"), r#"{"model": {"visual_dim": 7}}"#).unwrap();
    let o = dvta(&["train", "--config", "wide.json", "--data", "data", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.visual_dim is 7"));
}

#[test]
fn corrupted_feature_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let visual = dir.path().join("data/visual.dvta");
    let mut bytes = std::fs::read(&visual).unwrap();
    bytes.truncate(bytes.len() - 9);
    std::fs::write(&visual, bytes).unwrap();
    let o = dvta(&["train", "--config", "run.json", "--data", "data", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("visual.dvta"), "{}", stderr(&o));
}

#[test]
fn train_eval_and_exports_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let o = dvta(&["train", "--config", "run.json", "--data", "data", "--out", "run"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let loss = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,lr,loss"));
    assert_eq!(loss.lines().count(), 1 + 2 * 64usize.div_ceil(32));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["seed"], 3);
    assert_eq!(manifest["config"]["model"]["tau"], 0.1);
    for entry in manifest["inputs"].as_array().unwrap().iter().chain(manifest["outputs"].as_array().unwrap()) {
        let path = d.join(entry["path"].as_str().unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap(), dvta_cli::sha256_file(&path).unwrap());
    }
    let phases: Vec<&str> = manifest["timings"].as_array().unwrap().iter().map(|t| t["phase"].as_str().unwrap()).collect();
    assert_eq!(phases, ["load", "train", "write"]);

    let o = dvta(&["eval", "--ckpt", "run/model.ckpt", "--data", "data", "--out", "eval/report.json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["samples"], 16);
    let csv = std::fs::read_to_string(d.join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("class,name,samples,correct,accuracy\n"));
    assert!(d.join("eval/report_confusion.csv").exists());
    assert!(d.join("eval/report.manifest.json").exists());

    let o = dvta(&["export-sim", "--ckpt", "run/model.ckpt", "--data", "data", "--out", "sim", "--batch-size", "6"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let parse = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(d.join("sim").join(name))
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let (p1, p2, p) = (parse("p1.csv"), parse("p2.csv"), parse("p.csv"));
    assert_eq!(p.len(), 6);
    for i in 0..6 {
        assert!((p[i].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for j in 0..6 {
            assert!((p[i][j] - 0.5 * (p1[i][j] + p2[i][j])).abs() < 1e-12);
        }
    }

    let o = dvta(&["export-emb", "--ckpt", "run/model.ckpt", "--data", "data", "--out", "emb/points.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let emb = std::fs::read_to_string(d.join("emb/points.csv")).unwrap();
    assert!(emb.starts_with("label,pc1,pc2,e0,"));
    assert_eq!(emb.lines().count(), 1 + 80);
    assert!(d.join("emb/points_pca.json").exists());
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    for out in ["a", "b"] {
        let o = dvta(&["train", "--config", "run.json", "--data", "data", "--out", out, "--threads", "2"], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["model.ckpt", "loss.csv"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let o = dvta(&["train", "--config", "run.json", "--data", "data", "--out", "c", "--seed", "4"], d);
    assert!(o.status.success());
    assert_ne!(std::fs::read(d.join("a/model.ckpt")).unwrap(), std::fs::read(d.join("c/model.ckpt")).unwrap());
}

#[test]
fn ablate_writes_all_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(
        d.join("plan.json"),
        r#"{"model": {"visual_dim": 32, "text_dim": 64, "embed_dim": 8, "visual_hidden": 8, "metric_hidden": [8, 4]},
            "gammas": ["none", 0.01], "losses": ["kld", "info_nce"], "seeds": [0, 1]}"#,
    )
    .unwrap();
    std::fs::write(d.join("opt.json"), r#"{"train": {"epochs": 1, "batch_size": 32, "learning_rate": 1e-3}}"#).unwrap();
    let o = dvta(&["ablate", "--plan", "plan.json", "--config", "opt.json", "--data", "data", "--out", "tables/t3.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let modules = std::fs::read_to_string(d.join("tables/t3.csv")).unwrap();
    assert_eq!(modules.lines().next(), Some("variant,SDE,DA,AA,seed_0,seed_1,average"));
    assert_eq!(modules.lines().count(), 6);
    let gammas = std::fs::read_to_string(d.join("tables/t3_gamma.csv")).unwrap();
    let labels: Vec<&str> = gammas.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["None", "0.01"]);
    let losses = std::fs::read_to_string(d.join("tables/t3_loss.csv")).unwrap();
    assert!(losses.starts_with("loss,seed_0,seed_1,average\nKLD,"));
    assert!(d.join("tables/t3.json").exists());
}

#[test]
fn invalid_plan_is_rejected_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(d.join("plan.json"), r#"{"gammas": [-0.5], "seeds": []}"#).unwrap();
    let o = dvta(&["ablate", "--plan", "plan.json", "--data", "data", "--out", "t.csv"], d);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gammas[0].gamma: gamma must be positive"), "{err}");
    assert!(err.contains("seeds: at least one seed is required"), "{err}");
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dvta"))
        .args(["gradcheck", "--seed", "1"])
        .env("DVTA_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--threads"));
}

#[test]
fn generated_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["x", "y"] {
        assert!(dvta(&["gen-synthetic", "--out", out, "--seed", "9"], d).status.success());
    }
    for f in ["manifest.json", "visual.dvta", "labels.dvta", "label_emb.dvta", "context_emb.dvta"] {
        assert_eq!(std::fs::read(d.join("x").join(f)).unwrap(), std::fs::read(d.join("y").join(f)).unwrap());
    }
}
