use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
learning_rate = 5e-3
batch_size = 8
teacher_epochs = 2
distill_epochs = 2
finetune_epochs = 2

[model]
d = 8
d_r = 4
hidden = 8
"#;

fn exdos(args: &[&str]) -> Output {
    exdos_env(args, None)
}

fn exdos_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_exdos"));
    cmd.args(args).env_remove("EXDOS_SEED");
    if let Some(s) = seed_env {
        cmd.env("EXDOS_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Corpus {
    fn new() -> Corpus {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        ok(&exdos(&["gen-corpus", "--per-vulnerability", "6", "--vulnerable", "3", "--seed", "4", "--out-dir", p(&corpus)]));
        std::fs::write(root.join("tiny.toml"), TINY).unwrap();
        Corpus { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

#[test]
fn help_exits_zero_with_usage() {
    let out = exdos(&["--help"]);
    assert!(ok(&out).contains("Usage"));
    for sub in ["disasm", "cfg", "csg", "patterns", "align", "featurize", "gen-corpus", "split", "train-teacher", "distill", "finetune", "detect", "eval"] {
        assert_eq!(exdos(&[sub, "--help"]).status.code(), Some(0), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(exdos(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exdos(&[]).status.code(), Some(1));
    assert_eq!(exdos(&["disasm", "0x00", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(exdos_env(&["disasm", "0x00"], Some("not-a-number")).status.code(), Some(1));
}

#[test]
fn malformed_input_exits_two() {
    let out = exdos(&["disasm", "0xzz"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-hex"));
    assert!(out.stdout.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(exdos(&["csg", p(&bad)]).status.code(), Some(2));
}

#[test]
fn disasm_json_schema() {
    let text = ok(&exdos(&["disasm", "0x6001600201", "--json"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v[0]["offset"], 0);
    assert_eq!(v[0]["mnemonic"], "PUSH1");
    assert_eq!(v[0]["push_data_hex"], "01");
    assert_eq!(v[2]["mnemonic"], "ADD");
    assert!(v[2]["push_data_hex"].is_null());
    assert!(ok(&exdos(&["disasm", "0x6001"])).contains("PUSH1 0x01"));
}

#[test]
fn stage_commands_chain_through_files() {
    let c = Corpus::new();
    let bin = c.path("corpus/reentrancy/reentrancy-0000-v.bin");
    let ast = c.path("corpus/reentrancy/reentrancy-0000-v.ast.json");
    let work = c.path("work");
    let w = p(&work);
    ok(&exdos(&["cfg", p(&bin), "--out", "cfg.json", "--blocks-out", "blocks.json", "--out-dir", w]));
    assert!(work.join("exdos-cfg.resolved.json").is_file());
    ok(&exdos(&["csg", p(&ast), "--out", "csg.json", "--out-dir", w]));
    let s = |f: &str| work.join(f).to_str().unwrap().to_owned();
    ok(&exdos(&["patterns", &s("cfg.json"), "--blocks", &s("blocks.json"), "--out", "byt.json", "--out-dir", w]));
    ok(&exdos(&["patterns", &s("csg.json"), "--ast", p(&ast), "--out", "src.json", "--out-dir", w]));
    let fired = |f: &str| {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(work.join(f)).unwrap()).unwrap();
        v.as_array().unwrap().iter().map(|a| a["sub_pattern"].as_str().unwrap().to_owned()).collect::<Vec<_>>()
    };
    assert!(fired("byt.json").contains(&"callValueInvocation".to_owned()));
    assert!(fired("src.json").contains(&"callValueInvocation".to_owned()));
    let dict = ok(&exdos(&[
        "align", &s("src.json"), &s("byt.json"), "--source-graph", &s("csg.json"), "--bytecode-graph", &s("cfg.json"),
    ]));
    let dict: serde_json::Value = serde_json::from_str(&dict).unwrap();
    assert_eq!(dict["contract_id"], "reentrancy-0000-v");
    assert!(!dict["pairs"].as_array().unwrap().is_empty());
    ok(&exdos(&["featurize", &s("cfg.json"), "--blocks", &s("blocks.json"), "--out", "f.emb", "--out-dir", w]));
    // the feature file is accepted back through the embedding import path
    let again = ok(&exdos(&["featurize", &s("cfg.json"), "--embeddings", &s("f.emb")]));
    assert_eq!(again, std::fs::read_to_string(work.join("f.emb")).unwrap());
    // a bytecode graph without blocks is a usage error
    assert_eq!(exdos(&["patterns", &s("cfg.json")]).status.code(), Some(1));
}

#[test]
fn seed_env_overrides_flag() {
    let c = Corpus::new();
    let m = c.path("corpus/manifest.json");
    let a = ok(&exdos_env(&["split", p(&m), "--seed", "1"], Some("2")));
    let b = ok(&exdos(&["split", p(&m), "--seed", "2"]));
    let d = ok(&exdos(&["split", p(&m), "--seed", "1"]));
    assert_eq!(a, b);
    assert_ne!(a, d);
}

#[test]
fn config_errors_are_classified() {
    let c = Corpus::new();
    let m = c.path("corpus/manifest.json");
    let bad_lr = c.path("lr.toml");
    std::fs::write(&bad_lr, "learning_rate = 0.02\n").unwrap();
    let out = exdos(&["train-teacher", "--config", p(&bad_lr), "--manifest", p(&m), "--out-dir", p(&c.path("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let unknown = c.path("unknown.json");
    std::fs::write(&unknown, r#"{"learning_rte": 0.001}"#).unwrap();
    let out = exdos(&["train-teacher", "--config", p(&unknown), "--manifest", p(&m), "--out-dir", p(&c.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_distill_finetune_detect_end_to_end() {
    let c = Corpus::new();
    let m = c.path("corpus/manifest.json");
    let cfg = c.path("tiny.toml");
    let o = c.path("models");
    let s = |f: &str| o.join(f).to_str().unwrap().to_owned();
    let split = c.path("split.json");
    ok(&exdos(&["split", p(&m), "--seed", "3", "--out", p(&split)]));
    let common = ["--config", p(&cfg), "--manifest", p(&m), "--split", p(&split), "--vulnerability", "reentrancy", "--seed", "5"];
    let run = |sub: &str, extra: &[&str]| {
        let mut args = vec![sub];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out-dir", p(&o)]);
        args.extend_from_slice(extra);
        ok(&exdos(&args));
    };
    run("train-teacher", &[]);
    run("distill", &["--teacher", &s("teacher.json")]);
    run("finetune", &["--student", &s("student.json"), "--threads", "2"]);
    for f in ["teacher.json", "student.json", "model.json", "model.report.json", "exdos-finetune.resolved.json"] {
        assert!(o.join(f).is_file(), "{f}");
    }
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("exdos-distill.resolved.json")).unwrap()).unwrap();
    assert_eq!(snap["seed"], 5);
    assert_eq!(snap["config"]["seed"], 5);
    assert_eq!(snap["config"]["model"]["d"], 8);

    let bin = c.path("corpus/reentrancy/reentrancy-0001-v.bin");
    let first = ok(&exdos(&["detect", p(&bin), "--model", &s("model.json")]));
    let second = ok(&exdos(&["detect", p(&bin), "--model", &s("model.json")]));
    assert_eq!(first, second);
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["contract_id"], "reentrancy-0001-v");
    let prob = report["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&prob));
    assert!(!report["fired_patterns"].as_array().unwrap().is_empty());

    // overflowing weights are a numeric fault
    let mut ck: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("model.json")).unwrap()).unwrap();
    for t in ck["tensors"].as_array_mut().unwrap() {
        for x in t["data"].as_array_mut().unwrap() {
            *x = serde_json::json!(1e300);
        }
    }
    std::fs::write(o.join("bad.json"), ck.to_string()).unwrap();
    assert_eq!(exdos(&["detect", p(&bin), "--model", &s("bad.json")]).status.code(), Some(3));

    // retraining from the same inputs and seed reproduces the checkpoint bytes
    let again = c.path("again");
    let mut args = vec!["train-teacher"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out-dir", p(&again)]);
    ok(&exdos(&args));
    assert_eq!(std::fs::read(o.join("teacher.json")).unwrap(), std::fs::read(again.join("teacher.json")).unwrap());
}

#[test]
fn eval_writes_csv_reports() {
    let c = Corpus::new();
    let cfg = c.path("exp.toml");
    std::fs::write(&cfg, format!("runs = 2\n[train]\n{}", TINY.replace("[model]", "[train.model]"))).unwrap();
    let o = c.path("eval");
    let out = ok(&exdos(&["eval", "--config", p(&cfg), "--manifest", p(&c.path("corpus/manifest.json")), "--vulnerability", "timestamp", "--out-dir", p(&o)]));
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary[0]["runs"], 2);
    let csv = std::fs::read_to_string(o.join("timestamp/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert!(o.join("timestamp/roc.csv").is_file());
    assert!(o.join("exdos-eval.resolved.json").is_file());
}
