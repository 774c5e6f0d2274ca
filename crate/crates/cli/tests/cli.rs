use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plm")).args(args).output().expect("run plm")
}

fn ok(args: &[&str]) -> String {
    let out = plm(args);
    assert!(out.status.success(), "plm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &["--epochs", "1", "--hidden-dim", "8", "--ffn-dim", "16", "--context-window", "64", "--num-heads", "2"];

fn prepare(dir: &Path, docs: usize) -> PathBuf {
    let data = path(dir, "data.jsonl");
    ok(&["prepare", "--synthetic", &docs.to_string(), "--output", s(&data)]);
    data
}

#[test]
fn prepare_writes_one_line_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), 5);
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 5);
    let out = path(dir.path(), "copy.jsonl");
    ok(&["prepare", "--input", s(&data), "--output", s(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), 2);
    let model = path(dir.path(), "m.plm");
    let no_seed = plm(&["train-ner", "--train", s(&data), "--output", s(&model)]);
    assert_eq!(no_seed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_seed.stderr).contains("--seed"));
    assert_eq!(plm(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(plm(&["predict", "--ner", "x", "--input", "y", "--output", "z", "--packing", "zigzag"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.jsonl");
    let out = plm(&["eval", "--gold", s(&missing), "--pred", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let data = prepare(dir.path(), 2);
    let model = path(dir.path(), "m.plm");
    let bad = plm(&["train-ner", "--train", s(&data), "--output", s(&model), "--seed", "1", "--epochs", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_predict_eval_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), 4);
    let (ner, re) = (path(dir.path(), "ner.plm"), path(dir.path(), "re.plm"));
    let mut args = vec!["train-ner", "--train", s(&data), "--output", s(&ner), "--seed", "3"];
    args.extend(TINY);
    ok(&args);
    let mut args = vec!["train-re", "--train", s(&data), "--output", s(&re), "--seed", "3", "--symmetric", "KNOWS"];
    args.extend(TINY);
    ok(&args);

    let pred = path(dir.path(), "pred.jsonl");
    ok(&["predict", "--ner", s(&ner), "--re", s(&re), "--input", s(&data), "--output", s(&pred)]);
    let first = std::fs::read(&pred).unwrap();
    let pred2 = path(dir.path(), "pred2.jsonl");
    ok(&["predict", "--ner", s(&ner), "--re", s(&re), "--input", s(&data), "--output", s(&pred2), "--group-size", "3", "--packing", "random", "--sequential"]);
    assert_eq!(std::fs::read(&pred2).unwrap(), first);

    let ent = ok(&["eval", "--gold", s(&data), "--pred", s(&pred)]);
    assert!(ent.contains("ent.f1=") && !ent.contains("rel."));
    let strict = ok(&["eval", "--gold", s(&data), "--pred", s(&pred), "--mode", "strict", "--symmetric", "KNOWS"]);
    assert!(strict.contains("rel_strict.f1="));
    let perfect = ok(&["eval", "--gold", s(&data), "--pred", s(&data), "--mode", "boundaries"]);
    assert!(perfect.contains("rel.f1=1.000000"));

    let csv = ok(&["bench", "--model", s(&ner), "--input", s(&data), "--group-sizes", "8,64"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,K,sent_per_sec,mean_slots,layouts_per_sentence,f1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("neighborhood,8,"));
    assert_eq!(plm(&["bench", "--model", s(&re), "--input", s(&data)]).status.code(), Some(1));
}

#[test]
fn config_files_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), 2);
    let config = path(dir.path(), "cfg.toml");
    std::fs::write(&config, "epochs = 1\nhidden_dim = 8\nffn_dim = 16\ncontext_window = 64\n").unwrap();
    let model = path(dir.path(), "m.plm");
    ok(&["train-ner", "--train", s(&data), "--output", s(&model), "--seed", "1", "--config", s(&config), "--max-span-len", "4"]);
    std::fs::write(&config, "epochs = 1\nnot_a_field = 3\n").unwrap();
    let bad = plm(&["train-ner", "--train", s(&data), "--output", s(&model), "--seed", "1", "--config", s(&config)]);
    assert_eq!(bad.status.code(), Some(1));
}
