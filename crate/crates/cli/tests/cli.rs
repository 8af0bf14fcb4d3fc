use std::path::Path;
use std::process::{Command, Output};

use stagescope::model::{ModelConfig, TransformerWeights};

fn stagescope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stagescope")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Byte-level vocabulary with no merges, a random 2-layer model and a
/// short text corpus.
fn toy(dir: &Path) {
    let model = dir.join("model");
    std::fs::create_dir_all(&model).unwrap();
    let mut printable: Vec<u32> = (33..=126).chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    let mut extra = 0;
    let mut vocab = serde_json::Map::new();
    for b in 0..256u32 {
        let c = if printable.contains(&b) {
            char::from_u32(b).unwrap()
        } else {
            printable.push(b);
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
        vocab.insert(c.to_string(), b.into());
    }
    std::fs::write(model.join("vocab.json"), serde_json::Value::Object(vocab).to_string()).unwrap();
    std::fs::write(model.join("merges.txt"), "#version: 0.2\n").unwrap();
    let config = serde_json::json!({
        "vocab_size": 256, "n_positions": 32, "n_embd": 8, "n_layer": 2, "n_head": 2,
    });
    std::fs::write(model.join("config.json"), config.to_string()).unwrap();
    let w = TransformerWeights::random(&ModelConfig::from_json(&config.to_string()).unwrap(), 3).unwrap();
    w.save(&model.join("model.safetensors")).unwrap();
    std::fs::write(dir.join("corpus.txt"), "the cat sat on the mat and then ran away. ".repeat(10)).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn runs_and_lists_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let (model, corpus, out) = (tmp.path().join("model"), tmp.path().join("corpus.txt"), tmp.path().join("out"));
    let o = stagescope(&[
        "intervene", "--model", s(&model), "--corpus", s(&corpus), "--tokens", "200", "--window", "16",
        "--seed", "1", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.ends_with("intervene.csv")));
    let csv = std::fs::read_to_string(out.join("intervene.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 1);
    assert_eq!(manifest["config"]["window"], 16);
}

#[test]
fn flags_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let (model, corpus, out) = (tmp.path().join("model"), tmp.path().join("corpus.txt"), tmp.path().join("out"));
    let o = stagescope(&[
        "neurons", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out), "--tokens", "64",
        "--window", "16", "--thresholds", "5,0.5", "--layer", "1", "--block-len", "2", "--times", "3",
        "--k", "4", "--schedule", "drop:1", "--dry-run",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = &cfg["params"];
    assert_eq!(p["thresholds"]["kurtosis_min"], 5.0);
    assert_eq!(p["thresholds"]["skew_min"], 0.5);
    assert_eq!((p["layer"].clone(), p["block_len"].clone(), p["times"].clone()), (1.into(), 2.into(), 3.into()));
    assert_eq!(p["k"], 4);
    assert_eq!(p["schedule"], "drop:1");
    assert!(!out.exists());
}

#[test]
fn config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let cfg = serde_json::json!({
        "kind": "repeat",
        "model": tmp.path().join("model"),
        "corpus": tmp.path().join("corpus.txt"),
        "out": tmp.path().join("from-config"),
        "tokens": 200,
        "window": 16,
        "params": { "block_len": 1 },
    });
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = tmp.path().join("override");
    let o = stagescope(&["repeat", "--config", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("repeat.csv")).unwrap().lines().count(), 1 + 3);

    let o = stagescope(&["cka", "--config", s(&path)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind"));
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let (model, corpus, out) = (tmp.path().join("model"), tmp.path().join("corpus.txt"), tmp.path().join("out"));
    let cases: Vec<Vec<&str>> = vec![
        vec!["bogus", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out)],
        vec!["cka", "--corpus", s(&corpus), "--out", s(&out)],
        vec!["cka", "--model", s(&model), "--corpus", "/no/such/file", "--out", s(&out)],
        vec!["cka", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out), "--window", "0"],
        vec!["cka", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out), "--thresholds", "ten"],
        vec!["intervene", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out), "--tokens", "64",
             "--window", "16", "--schedule", "swap:9"],
        vec!["locality", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&out), "--tokens", "200",
             "--window", "64"],
    ];
    for args in cases {
        let o = stagescope(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"kind": "cka", "model": "m", "corpus": "c", "out": "o", "windw": 4}"#).unwrap();
    let o = stagescope(&["cka", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("windw"));
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let model = tmp.path().join("model");
    std::fs::write(model.join("model.safetensors"), b"not a safetensors file").unwrap();
    let o = stagescope(&[
        "cka", "--model", s(&model), "--corpus", s(&tmp.path().join("corpus.txt")), "--out",
        s(&tmp.path().join("out")), "--tokens", "64", "--window", "16",
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn help_succeeds() {
    let o = stagescope(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--schedule"));
}
