use std::path::Path;
use std::process::{Command, Output};

use tlinformer::cost::{cost_cache_hit, cost_cache_miss};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlinformer")).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

const SMALL: &str = r#"{
  "seq_len": 16,
  "batch_size": 2,
  "lr": 0.003,
  "seed": 7,
  "model": { "d_model": 16, "n_head": 2, "depth_h": 1, "n_blocks": 1, "woh": 8, "wog": 8, "ffn_mult": 2 }
}"#;

/// Trains the small config for `steps` and returns the parsed summary.
fn train_small(dir: &Path, name: &str, steps: &str) -> serde_json::Value {
    let cfg = dir.join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let ckpt = dir.join(name);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--steps", steps, "--out", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout_json(&o)
}

#[test]
fn missing_corpus_exits_2() {
    let o = run(&["train", "--corpus", "/definitely/not/here.txt", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus not found"));
}

#[test]
fn smoke_train_writes_checkpoint_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a.ckpt", "10");
    let b = train_small(dir.path(), "b.ckpt", "10");
    assert!(dir.path().join("a.ckpt").exists());
    assert!(dir.path().join("a.ckpt.log.csv").exists());
    assert_eq!(a["steps"], 10);
    assert_eq!(a["final_loss"], b["final_loss"]);
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, SMALL.replace("\"seed\": 7", "\"seed\": 7, \"steps\": 5")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--steps", "2", "--out", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["steps"], 2);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(stdout_json(&o)["steps"], 5);
}

#[test]
fn generate_event_stream_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "m.ckpt", "2");
    let ckpt = dir.path().join("m.ckpt");
    let events = dir.path().join("events.csv");
    let prompt = "abcdefghijklmnop";
    let gen = |out: &str| {
        let o = run(&[
            "generate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--prompt",
            prompt,
            "--n-tokens",
            "9",
            "--events",
            events.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let a = gen("a.txt");
    assert_eq!(a, gen("b.txt"));
    assert!(a.starts_with(prompt));
    assert_eq!(a.chars().count(), prompt.len() + 9);

    // Wog + 1 tokens: one slide, charges as the cost model predicts
    let mut r = csv::Reader::from_path(&events).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let kinds: Vec<&str> = rows.iter().map(|x| x.get(0).unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "slide").count(), 1, "{kinds:?}");
    let (d, woh, wog, h) = (16, 8, 8, 1);
    for row in &rows {
        let n: u64 = row.get(1).unwrap().parse().unwrap();
        let units: u64 = row.get(3).unwrap().parse().unwrap();
        let want = match row.get(0).unwrap() {
            "miss" => cost_cache_miss(n, d, woh, wog, h).unwrap().total,
            "hit" => cost_cache_hit(n, d, woh, wog, h).unwrap(),
            _ => 0,
        };
        assert_eq!(units, want, "{row:?}");
    }
}

#[test]
fn bad_checkpoint_version_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "m.ckpt", "1");
    let path = dir.path().join("m.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    // little-endian format version follows the 8-byte magic
    bytes[8] = 9;
    std::fs::write(&path, bytes).unwrap();
    let o = run(&["generate", "--checkpoint", path.to_str().unwrap(), "--prompt", "ab"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 9"));
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let o = run(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = stdout_json(&o);
    assert_eq!(r["passed"], true);
    assert!(r["checks"].as_array().unwrap().len() >= 5);

    let o = run(&["verify", "--inject-cache-bug"]);
    assert_eq!(o.status.code(), Some(1));
    let r = stdout_json(&o);
    assert_eq!(r["passed"], false);
    let cache = r["checks"].as_array().unwrap().iter().find(|c| c["name"] == "cache_equivalence").unwrap();
    assert_eq!(cache["passed"], false);
}

#[test]
fn cost_table_has_expected_columns() {
    let o = run(&["cost", "--n-start", "1024", "--n-step", "1024", "--n-max", "4096"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "N,miss_units,hit_units,baseline_units,m_transformer,m_tlinformer,ratio");
    assert_eq!(lines.count(), 4);
}

#[test]
fn tiny_bench_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run(&[
        "bench", "--n-start", "32", "--n-step", "32", "--n-max", "64", "--repeats", "1", "--warmup", "0", "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["bench.csv", "latency.svg", "speedup.svg", "memory.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n_begin": 4}"#).unwrap();
    let o = run(&["cost", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_documents_precedence() {
    let o = run(&["train", "--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("command-line flag > --config JSON file > built-in default"));
}
