use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn entrysep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entrysep"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn synth(dir: &Path) -> PathBuf {
    let cfg = write(dir, "synth.json", r#"{"n_pages": 5, "target_lines_per_column": 12}"#);
    let data = dir.join("data");
    let out = entrysep(&["synth", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn tiny_settings(dir: &Path) -> PathBuf {
    write(
        dir,
        "settings.json",
        r#"{
            "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32, "max_seq_len": 64, "dropout": 0.0},
            "hyper": {"learning_rate": 0.001, "max_steps": 20, "eval_every": 10, "batch_size": 2, "min_crop": 32, "seeds": [1, 2]},
            "tokenizer_vocab_size": 300
        }"#,
    )
}

fn manifest_outputs(dir: &Path) -> Vec<(String, String)> {
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["hash"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn synth_is_deterministic_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path());
    let first = manifest_outputs(&a);
    assert_eq!(first.len(), 3);
    let b = dir.path().join("again");
    let cfg = dir.path().join("synth.json");
    assert!(entrysep(&["synth", "--config", s(&cfg), "--seed", "3", "--out", s(&b)]).status.success());
    assert_eq!(manifest_outputs(&b), first);
}

#[test]
fn unknown_preset_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = entrysep(&["build-stream", "--data", s(&data), "--preset", "xp-9.9", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("xp-1.1") && err.contains("xp-2.2"), "{err}");
}

#[test]
fn incompatible_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"use_text": true, "use_breaks": true, "left_mode": "None", "right_mode": "None", "ner": false, "boundary_policy": "SpaceTokens"}"#,
    );
    let out_dir = dir.path().join("out");
    let out = entrysep(&["experiment", "--data", s(&data), "--preset", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn bad_arguments_and_missing_data_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(entrysep(&["train", "--bogus"]).status.code(), Some(1));
    let missing = dir.path().join("nothing");
    let out = entrysep(&["tokenizer-train", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(entrysep(&["--help"]).status.success());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "x");
    let out = entrysep(&["synth", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stream_and_tokenizer_stages() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("streams");
    assert!(entrysep(&["build-stream", "--data", s(&data), "--preset", "xp-1.6", "--out", s(&out)]).status.success());
    let stream = fs::read_to_string(out.join("xp-1.6").join("synth.stream.jsonl")).unwrap();
    assert!(stream.lines().count() > 0);
    assert!(stream.contains(r#""kind":"break""#) && stream.contains(r#""kind":"lhspace""#));

    let settings = tiny_settings(dir.path());
    let tok = dir.path().join("tok");
    let res = entrysep(&["tokenizer-train", "--data", s(&data), "--config", s(&settings), "--out", s(&tok)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let vocab = fs::read_to_string(tok.join("vocab.tsv")).unwrap();
    assert!(vocab.contains("\t<textline>\tspecial"));
}

#[test]
fn experiment_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let settings = tiny_settings(dir.path());
    let out = dir.path().join("out");
    let run = |out: &Path| {
        entrysep(&[
            "experiment", "--data", s(&data), "--preset", "xp-1.6", "--preset", "xp-2.1",
            "--config", s(&settings), "--out", s(out),
        ])
    };
    let res = run(&out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for preset in ["xp-1.6", "xp-2.1"] {
        for seed in ["1", "2"] {
            let d = out.join(preset).join(seed);
            for f in ["checkpoint.json", "report.json", "history.json", "predictions.jsonl"] {
                assert!(d.join(f).is_file(), "{}", d.join(f).display());
            }
        }
        assert!(out.join(preset).join("report.json").is_file());
    }
    let md = fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(md.contains("xp-1.6") && md.contains("xp-2.1"));
    let rows: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let f: Vec<f64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["report"]["macro_f"].as_f64().unwrap())
        .collect();
    assert_eq!(f.len(), 2);
    assert!(f[0] <= f[1]);

    // Same inputs, same outputs.
    let again = dir.path().join("again");
    assert!(run(&again).status.success());
    assert_eq!(manifest_outputs(&again), manifest_outputs(&out));

    let ck = out.join("xp-2.1").join("1").join("checkpoint.json");
    let vocab = out.join("xp-2.1").join("vocab.tsv");
    let pred_dir = dir.path().join("pred");
    let res = entrysep(&[
        "predict", "--data", s(&data), "--preset", "xp-2.1", "--checkpoint", s(&ck), "--vocab", s(&vocab),
        "--out", s(&pred_dir),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let first: Value = serde_json::from_str(
        fs::read_to_string(pred_dir.join("predictions.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(first["doc_id"], "synth");
    assert!(first["entries"].is_array() && first["entities"].is_array());

    let eval_dir = dir.path().join("eval");
    let res = entrysep(&[
        "eval", "--data", s(&data), "--preset", "xp-2.1", "--checkpoint", s(&ck), "--vocab", s(&vocab),
        "--out", s(&eval_dir),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["ner_micro"].is_object());

    // A checkpoint used with the wrong preset is rejected.
    let res = entrysep(&[
        "eval", "--data", s(&data), "--preset", "xp-1.6", "--checkpoint", s(&ck), "--vocab", s(&vocab),
        "--out", s(&eval_dir),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn train_writes_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let settings = tiny_settings(dir.path());
    let out = dir.path().join("out");
    let res = entrysep(&[
        "train", "--data", s(&data), "--preset", "xp-1.1", "--config", s(&settings), "--seed", "7", "--out", s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("xp-1.1").join("7").join("checkpoint.json").is_file());
    assert!(!out.join("xp-1.1").join("1").exists());
}
