use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgse::manifest::read_manifests;

fn rgse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RGSE_REVISION", "test")
        .env_remove("RGSE_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
[data]
source = "synth"
[synth]
train = 40
test = 10
max_len = 8
[model]
d_emb = 8
d_hidden = 8
[train]
epochs = 2
"#;

const SENTENCE: &str = "\
# sent_id = only
1\tbi\t_\t_\t_\t_\t2\tnsubj\t_\t_
2\tka\t_\t_\t_\t_\t0\troot\t_\t_
3\tmo\t_\t_\t_\t_\t4\tdet\t_\t_
4\tlu\t_\t_\t_\t_\t2\tobj\t_\t_

";

fn memorize_config(dir: &Path) -> PathBuf {
    write(dir, "train.conllu", SENTENCE);
    write(dir, "train.txt", "KA BI LU MO\n");
    write(
        dir,
        "memo.toml",
        r#"
[data]
source = "files"
train_src = "train.conllu"
train_tgt = "train.txt"
test_src = "train.conllu"
test_tgt = "train.txt"
[model]
d_emb = 8
d_hidden = 8
[train]
lr = 0.01
epochs = 200
"#,
    )
}

#[test]
fn train_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("run");
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["model.params", "model.meta.json", "loss.csv", "eval.csv", "eval.svg", "manifest.jsonl"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = read_manifests(&out).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].command, "train");
    assert_eq!(m[0].revision.as_deref(), Some("test"));
    assert!(m[0].artifacts.contains(&"loss.csv".to_string()));
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,train_loss,valid_loss"));
    assert_eq!(loss.lines().count(), 1 + 3);
}

#[test]
fn rerun_reproduces_csvs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("run");
    for _ in 0..2 {
        assert_eq!(code(&rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    }
    let other = dir.path().join("again");
    assert_eq!(code(&rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap()])), 0);
    for f in ["loss.csv", "eval.csv", "model.params"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(other.join(f)).unwrap(), "{f} differs");
    }
    let m = read_manifests(&out).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m[0].fingerprint, m[1].fingerprint);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_rgse"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .env("RGSE_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "train.conllu", SENTENCE);
    write(dir.path(), "train.txt", "KA BI LU MO\n");
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[data]\nsource = \"files\"\ntrain_src = \"train.conllu\"\ntrain_tgt = \"train.txt\"\ntest_src = \"train.conllu\"\ntest_tgt = \"absent.txt\"\n",
    );
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.test_tgt"), "{}", stderr(&o));
    assert!(!dir.path().join("o").join("model.params").exists());
}

#[test]
fn invalid_values_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[model]\nd_hidden = 0\nheads = 3\nd_model = 16\nkind = \"hybrid\"\n[train]\nlr = -1.0\n");
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for field in ["model.d_hidden", "model.heads", "train.lr"] {
        assert!(err.contains(field), "{field} not reported in {err}");
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[model]\nwidth = 3\n");
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("model.width"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "hot.toml",
        &format!("{SMALL}optimizer = \"sgd\"\nlr = 1e300\nclip_norm = 1e300\n"),
    );
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
}

#[test]
fn translate_empty_input_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("run");
    assert_eq!(code(&rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let empty = write(dir.path(), "empty.conllu", "");
    let o = rgse(&["translate", "--ckpt", out.join("model.params").to_str().unwrap(), "--in", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "");

    let three = write(dir.path(), "three.conllu", &SENTENCE.repeat(3).replace("# sent_id = only\n", ""));
    let o = rgse(&["translate", "--ckpt", out.join("model.params").to_str().unwrap(), "--in", three.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn memorized_sentence_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = memorize_config(dir.path());
    let out = dir.path().join("memo");
    let o = rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let input = dir.path().join("train.conllu");
    let o = rgse(&["translate", "--ckpt", out.join("model.params").to_str().unwrap(), "--in", input.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "KA BI LU MO\n");
}

#[test]
fn checkpoint_config_mismatch_reports_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("run");
    assert_eq!(code(&rgse(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let meta = out.join("model.meta.json");
    let text = fs::read_to_string(&meta).unwrap().replace("\"model.d_hidden\": \"8\"", "\"model.d_hidden\": \"6\"");
    fs::write(&meta, text).unwrap();
    let input = write(dir.path(), "in.conllu", SENTENCE);
    let o = rgse(&["translate", "--ckpt", out.join("model.params").to_str().unwrap(), "--in", input.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("enc.") && err.contains("expected [") && err.contains("found ["), "{err}");
}

#[test]
fn verify_exits_zero_when_checks_pass() {
    let o = rgse(&["verify", "--suite", "oracle"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS oracle/")));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn unknown_suite_is_rejected() {
    assert_eq!(code(&rgse(&["verify", "--suite", "nope"])), 2);
}
