use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config_json() -> Value {
    serde_json::json!({
        "seed": 7,
        "seeds": [1, 2],
        "data": {
            "n_patients": 300,
            "synthetic": {
                "embedding_dim": 8,
                "weights": [0.6, 0.25, 0.15],
                "signal_fields": ["medications"],
                "severity_field": "medications"
            },
            "preprocess": {"embedding_dim": 8}
        },
        "model": {
            "arch": "transformer",
            "hidden_dim": 16,
            "num_layers": 1,
            "num_heads": 2,
            "feedforward_dim": 32,
            "decoder_dim": 16,
            "latent_dim": 2
        },
        "gp": {"num_inducing": 32, "batch_size": 32, "epochs": 3, "learning_rate": 0.003, "max_prefix": 32},
        "clustering": {"stability_runs": 5},
        "ablation": {"groups": ["MED_NAME", "LAB_RESULTS"]},
        "importance": {"groups": ["MED_NAME", "LAB_RESULTS"]}
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn trajgp(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajgp"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Prepared {
    dir: TempDir,
    config: PathBuf,
}

impl Prepared {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let config = write_config(dir.path(), "config.json", &config_json());
        Self { dir, config }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        trajgp(&self.config, &self.p(out), args)
    }

    fn generate_and_preprocess(&self) {
        ok(self.run("raw", &["generate"]));
        let input = self.p("raw/encounters.jsonl");
        ok(self.run("ds", &["preprocess", "--input", s(&input)]));
    }

    fn train(&self) {
        let data = self.p("ds");
        ok(self.run("model", &["train", "--data", s(&data)]));
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest_lists(manifest: &Path, files: &[&Path]) {
    let m = read_json(manifest);
    let listed: Vec<PathBuf> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| PathBuf::from(v.as_str().unwrap()))
        .collect();
    for f in files {
        assert!(f.exists(), "{} missing", f.display());
        assert!(listed.iter().any(|l| l == f), "{} not in manifest", f.display());
    }
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_patients_is_a_configuration_error() {
    let t = Prepared::new();
    let o = t.run("raw", &["generate", "--n-patients", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_patients"));
}

#[test]
fn usage_errors_exit_with_two() {
    let t = Prepared::new();
    assert_eq!(t.run("raw", &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(t.run("raw", &["train"]).status.code(), Some(2));
}

#[test]
fn generate_is_byte_identical_across_reruns() {
    let t = Prepared::new();
    ok(t.run("a", &["generate"]));
    ok(t.run("b", &["generate"]));
    for f in ["encounters.jsonl", "labels.csv"] {
        assert_eq!(std::fs::read(t.p("a").join(f)).unwrap(), std::fs::read(t.p("b").join(f)).unwrap());
    }
    ok(t.run("c", &["--seed", "8", "generate"]));
    assert_ne!(
        std::fs::read(t.p("a/encounters.jsonl")).unwrap(),
        std::fs::read(t.p("c/encounters.jsonl")).unwrap()
    );
}

#[test]
fn full_pipeline_writes_every_artifact_deterministically() {
    let t = Prepared::new();
    t.generate_and_preprocess();
    manifest_lists(
        &t.p("ds/preprocess_manifest.json"),
        &[&t.p("ds/layout.json"), &t.p("ds/train.jsonl"), &t.p("ds/ingest_report.json")],
    );
    let ingest = read_json(&t.p("ds/ingest_report.json"));
    assert_eq!(ingest["ingest"]["patients"], 300);

    t.train();
    manifest_lists(&t.p("model/train_manifest.json"), &[&t.p("model/model.json"), &t.p("model/train_log.jsonl")]);
    let log = std::fs::read_to_string(t.p("model/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let (data, model, labels) = (t.p("ds"), t.p("model/model.json"), t.p("raw/labels.csv"));
    let eval_args = ["evaluate", "--data", s(&data), "--model", s(&model)];
    ok(t.run("eval", &eval_args));
    ok(t.run("eval2", &eval_args));
    for f in ["evaluation.json", "evaluation.txt"] {
        assert_eq!(std::fs::read(t.p("eval").join(f)).unwrap(), std::fs::read(t.p("eval2").join(f)).unwrap());
    }
    let eval = read_json(&t.p("eval/evaluation.json"));
    let model_mse = eval["comparison"]["model"]["mse"].as_f64().unwrap();
    let base_mse = eval["comparison"]["baseline"]["mse"].as_f64().unwrap();
    assert!(model_mse < base_mse, "model {model_mse} vs constant {base_mse}");

    let cluster_args = ["cluster", "--data", s(&data), "--model", s(&model), "--labels", s(&labels)];
    ok(t.run("clu", &cluster_args));
    ok(t.run("clu2", &cluster_args));
    let files = [
        "assignments.csv",
        "cluster_summaries.csv",
        "trajectories.csv",
        "cluster_report.json",
        "cluster_report.txt",
    ];
    for f in files {
        assert_eq!(std::fs::read(t.p("clu").join(f)).unwrap(), std::fs::read(t.p("clu2").join(f)).unwrap(), "{f}");
    }
    let paths: Vec<PathBuf> = files.iter().map(|f| t.p("clu").join(f)).collect();
    manifest_lists(&t.p("clu/cluster_manifest.json"), &paths.iter().map(PathBuf::as_path).collect::<Vec<_>>());
    let assignments = std::fs::read_to_string(t.p("clu/assignments.csv")).unwrap();
    assert_eq!(assignments.lines().count(), 301);
    let report = read_json(&t.p("clu/cluster_report.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 16);
    assert!(report["truth"]["chosen_ari"].is_f64());
    let header = std::fs::read_to_string(t.p("clu/trajectories.csv")).unwrap();
    assert!(header.starts_with("patient_id,record,time_days,latent_0,latent_1,mean,variance_obs,variance_latent"));

    ok(t.run("imp", &["importance", "--data", s(&data), "--model", s(&model)]));
    let imp = read_json(&t.p("imp/importance.json"));
    let groups: Vec<&str> = imp.as_array().unwrap().iter().map(|r| r["group"].as_str().unwrap()).collect();
    assert_eq!(groups, ["MED_NAME", "LAB_RESULTS"]);

    let input = t.p("raw/encounters.jsonl");
    ok(t.run("abl", &["ablate", "--input", s(&input), "--groups", "LAB_RESULTS"]));
    let abl = read_json(&t.p("abl/ablation.json"));
    assert_eq!(abl["rows"].as_array().unwrap().len(), 1);
    assert!(t.p("abl/ablation.txt").exists());

    ok(t.run("proto", &["evaluate", "--protocol", "--input", s(&input)]));
    let proto = read_json(&t.p("proto/seed_protocol.json"));
    assert_eq!(proto["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn resume_rejects_a_changed_configuration() {
    let t = Prepared::new();
    t.generate_and_preprocess();
    t.train();
    let data = t.p("ds");
    let same = ok(t.run("model", &["train", "--data", s(&data), "--resume"]));
    assert!(same.status.success());
    let o = t.run("model", &["train", "--data", s(&data), "--resume", "--epochs", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hash"));
}

#[test]
fn divisibility_error_names_both_fields() {
    let t = Prepared::new();
    let mut cfg = config_json();
    cfg["model"]["num_heads"] = 3.into();
    let bad = write_config(t.dir.path(), "bad.json", &cfg);
    let o = trajgp(&bad, &t.p("out"), &["generate"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("hidden_dim") && e.contains("num_heads"), "{e}");
}

#[test]
fn unknown_configuration_keys_are_rejected() {
    let t = Prepared::new();
    let mut cfg = config_json();
    cfg["gp"]["epochz"] = 3.into();
    let bad = write_config(t.dir.path(), "bad.json", &cfg);
    let o = trajgp(&bad, &t.p("out"), &["generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"));
}

#[test]
fn unknown_feature_group_lists_valid_groups() {
    let t = Prepared::new();
    let o = t.run("abl", &["ablate", "--input", "missing.jsonl", "--groups", "MED_NAME,NOPE"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("NOPE") && e.contains("LAB_RESULTS") && e.contains("REASON_FOR_VISIT"), "{e}");
}

#[test]
fn missing_checkpoint_names_the_path() {
    let t = Prepared::new();
    t.generate_and_preprocess();
    let data = t.p("ds");
    let missing = t.p("nowhere/model.json");
    let o = t.run("eval", &["evaluate", "--data", s(&data), "--model", s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(s(&missing)));
}

#[test]
fn divergence_exits_with_four_and_keeps_last_good_parameters() {
    let t = Prepared::new();
    t.generate_and_preprocess();
    let mut cfg = config_json();
    cfg["gp"]["learning_rate"] = 1e300.into();
    let div = write_config(t.dir.path(), "div.json", &cfg);
    let data = t.p("ds");
    let o = trajgp(&div, &t.p("model"), &["train", "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(t.p("model/model_last_good.json").exists());
    assert!(!t.p("model/model.json").exists());
    let data = t.p("ds");
    let last = t.p("model/model_last_good.json");
    ok(t.run("eval", &["evaluate", "--data", s(&data), "--model", s(&last)]));
}
