use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
seed = 3
pretrain_examples_per_topic = 8
keyword_train_per_keyword = 2
keyword_test_per_keyword = 2
intent_pool_per_class = 16
intent_test_per_class = 2

[data.corpus]
examples_per_topic = 10

[train]
variants = ["text-only", "late-fusion"]

[train.text]
epochs = 1
batch_size = 16

[train.speech]
epochs = 1
batch_size = 16
"#;

fn mrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrl"))
        .args(args)
        .env("MRL_RUN_ROOT", dir.join("runs"))
        .output()
        .expect("spawn mrl")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "mrl failed: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is json")
}

fn stderr_error(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("stderr is one json record");
    v["error"].clone()
}

#[test]
fn missing_config_prints_usage() {
    let t = tempfile::tempdir().unwrap();
    let o = mrl(t.path(), &["gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn invalid_config_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "[eval]\nshots = [0, 32]\n");
    let o = mrl(t.path(), &["--config", &cfg, "gen"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_error(&o);
    assert_eq!(e["kind"], "config");
    assert!(e["message"].as_str().unwrap().contains("eval.shots"));

    let cfg = write_config(t.path(), "[data]\nunknown_field = 1\n");
    assert_eq!(stderr_error(&mrl(t.path(), &["--config", &cfg, "gen"]))["kind"], "config");
}

#[test]
fn gen_is_deterministic_and_content_addressed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let a = stdout_json(&mrl(t.path(), &["--config", &cfg, "gen"]));
    let dir = a["run_dir"].as_str().unwrap().to_string();
    let first = std::fs::read(Path::new(&dir).join("data/corpus.jsonl")).unwrap();
    let b = stdout_json(&mrl(t.path(), &["--config", &cfg, "gen"]));
    assert_eq!(a, b);
    assert_eq!(first, std::fs::read(Path::new(&dir).join("data/corpus.jsonl")).unwrap());

    let c = stdout_json(&mrl(t.path(), &["--config", &cfg, "--seed", "4", "gen"]));
    assert_ne!(c["run_dir"], a["run_dir"]);
}

#[test]
fn downstream_step_without_inputs_is_stale() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let o = mrl(t.path(), &["--config", &cfg, "index"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["kind"], "stale-artifact");
}

#[test]
fn stored_document_is_its_own_nearest_neighbour() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let run = t.path().join("run");
    let run = run.to_str().unwrap();
    for step in [&["gen"][..], &["train"], &["embed"], &["index"]] {
        let mut args = vec!["--config", cfg.as_str(), "--run-dir", run];
        args.extend_from_slice(step);
        stdout_json(&mrl(t.path(), &args));
    }
    let docs = std::fs::read_to_string(Path::new(run).join("embeddings/documents.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(docs.lines().next().unwrap()).unwrap();
    let id = first["id"].as_u64().unwrap().to_string();
    for dim in ["8", "64"] {
        let out = stdout_json(&mrl(
            t.path(),
            &["--config", &cfg, "--run-dir", run, "search", "--document", &id, "--dim", dim, "--k", "1"],
        ));
        let hits = out["result"]["hits"].as_array().unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0][0].to_string(), id);
    }

    let o = mrl(t.path(), &["--config", &cfg, "--run-dir", run, "search", "--document", &id, "--dim", "12"]);
    assert_eq!(stderr_error(&o)["kind"], "unconfigured-dim");
}
