use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn clinqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinqa")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

const SMALL: [&str; 14] = [
    "--set", "model.hidden_dim=16",
    "--set", "model.ffn_dim=32",
    "--set", "model.layers=1",
    "--set", "model.max_seq_len=48",
    "--set", "model.entity_dim=8",
    "--set", "train.lr=0.001",
    "--set", "train.max_steps=4",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_gen_split_train_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, data2, split, model) = (
        tmp.path().join("data"),
        tmp.path().join("data2"),
        tmp.path().join("split"),
        tmp.path().join("model"),
    );

    for d in [&data, &data2] {
        let o = clinqa(&["--json", "gen-data", "--seed", "3", "--num-notes", "6", "--out", s(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(data.join("examples.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(data2.join("examples.jsonl")).unwrap());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["generator.num_notes"], 6);
    assert!(manifest["git_describe"].is_string());

    // the manifest's config alone replays the command
    let replay_cfg = tmp.path().join("replay.json");
    std::fs::write(&replay_cfg, manifest["config"].to_string()).unwrap();
    let replay = tmp.path().join("replay");
    assert_eq!(code(&clinqa(&["--config", s(&replay_cfg), "gen-data", "--out", s(&replay)])), 0);
    assert_eq!(a, std::fs::read(replay.join("examples.jsonl")).unwrap());

    let o = clinqa(&["--json", "split", "--mode", "pl", "--seed", "1", "--data", s(&data), "--out", s(&split)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&o);
    assert_eq!(summary["leakage"]["shared_templates"], 0);
    for p in summary["templates"].as_object().unwrap().values() {
        let (tr, ho) = (p["train"].as_array().unwrap().len(), p["held_out"].as_array().unwrap().len());
        assert_eq!((tr, ho), if tr + ho == 6 { (4, 2) } else { (tr, ho) });
    }
    assert!(split.join("test_ids.txt").exists());

    let mut args = vec!["--json", "train", "--system", "multitask", "--seed", "2"];
    args.extend(SMALL);
    args.extend(["--data", s(&data), "--split", s(&split), "--out", s(&model)]);
    let o = clinqa(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["steps"], 4);
    let log = std::fs::read_to_string(model.join("train_log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for k in ["step", "lr", "l_span", "l_lf", "l_total"] {
        assert!(first.get(k).is_some(), "log lacks {k}");
    }

    let csv = tmp.path().join("confusion.csv");
    let o = clinqa(&["eval", "--model", s(&model), "--data", s(&data), "--split", s(&split), "--confusion-csv", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    assert!(report["token_f1"].as_f64().unwrap() <= 1.0);
    assert!(report["lf_exact"]["weighted"]["f1"].is_number());
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("gold\\pred"));

    // a vocabulary edited after training no longer matches the checkpoint
    let vocab = model.join("vocab.txt");
    let text = std::fs::read_to_string(&vocab).unwrap();
    std::fs::write(&vocab, text + "extra\n").unwrap();
    let o = clinqa(&["eval", "--model", s(&model), "--data", s(&data), "--split", s(&split)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn training_replays_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let split = tmp.path().join("split");
    assert_eq!(code(&clinqa(&["gen-data", "--num-notes", "4", "--out", s(&data)])), 0);
    assert_eq!(code(&clinqa(&["split", "--data", s(&data), "--out", s(&split)])), 0);
    let ckpt = |name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--system", "fused", "--seed", "9"];
        args.extend(SMALL);
        args.extend(["--data", s(&data), "--split", s(&split), "--out", s(&out)]);
        assert_eq!(code(&clinqa(&args)), 0);
        std::fs::read(out.join("model.ckpt")).unwrap()
    };
    assert_eq!(ckpt("a"), ckpt("b"));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&clinqa(&["--set", "model.nope=1", "gradcheck", "--seeds", "1"])), 2);
    assert_eq!(code(&clinqa(&["no-such-command"])), 2);
    assert_eq!(code(&clinqa(&["--help"])), 0);
    let missing = clinqa(&["split", "--data", "/nonexistent", "--out", "/tmp/x"]);
    assert_eq!(code(&missing), 2);
    let o = clinqa(&["--json", "gradcheck", "--seeds", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["fusion"]["passed"], true);
    assert_eq!(code(&clinqa(&["gradcheck", "--seeds", "1", "--tolerance", "1e-30"])), 4);
}

#[test]
fn lf_tokenize_command() {
    let o = clinqa(&["--json", "lf-tokenize", "--id", "0"]);
    assert_eq!(code(&o), 0);
    let toks = json(&o);
    assert_eq!(toks[0]["tokens"][0], "MedicationEvent");
}
