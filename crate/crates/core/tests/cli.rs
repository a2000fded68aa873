use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use srnn_core::langs::read_dataset;

fn srnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srnn"))
        .args(args)
        .env_remove("SRNN_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_tomita(dir: &Path, grammar: &str, seed: &str) {
    let o = srnn(&[
        "gen",
        "--task",
        "tomita",
        "--grammar",
        grammar,
        "--seed",
        seed,
        "--out",
        p(dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_is_reproducible_and_honours_env_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_tomita(&a, "1", "7");
    gen_tomita(&b, "1", "7");
    for f in ["train.txt", "valid.txt", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tmp.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_srnn"))
        .args(["gen", "--task", "tomita", "--grammar", "1", "--out", p(&c)])
        .env("SRNN_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(
        fs::read(a.join("train.txt")).unwrap(),
        fs::read(c.join("train.txt")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["args"]["seed"], 7);
    assert_eq!(manifest["result"]["splits"][1]["seed"], 8);
}

#[test]
fn gen_bp_small_and_copy_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let bp = tmp.path().join("bp");
    let o = srnn(&[
        "gen",
        "--task",
        "bp",
        "--small",
        "--seed",
        "1",
        "--out",
        p(&bp),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = read_dataset(bp.join("train.txt"), None).unwrap();
    assert_eq!(train.len(), 1008);
    assert_eq!(train.positives(), 601);
    assert_eq!(read_dataset(bp.join("valid.txt"), None).unwrap().len(), 268);
    assert_eq!(read_dataset(bp.join("test.txt"), None).unwrap().len(), 1000);

    let copy = tmp.path().join("copy");
    let o = srnn(&[
        "gen",
        "--task",
        "copy",
        "--lag",
        "100",
        "--count",
        "20",
        "--out",
        p(&copy),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = read_dataset(copy.join("train.txt"), None).unwrap();
    assert_eq!(ds.len(), 20);
    assert!(ds
        .sequences
        .iter()
        .all(|s| s.tokens.len() == 120 && s.steps().unwrap().len() == 120));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srnn(&[
        "train",
        "--train",
        "/nonexistent/train.txt",
        "--valid",
        "/nonexistent/valid.txt",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
    assert_eq!(srnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        srnn(&["gen", "--task", "tomita", "--out", p(tmp.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(srnn(&["--help"]).status.code(), Some(0));
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--train",
        p(&data.join("train.txt")).to_owned().leak(),
        "--valid",
        p(&data.join("valid.txt")).to_owned().leak(),
        "--quiet",
        "--out",
        p(out).to_owned().leak(),
    ];
    args.extend_from_slice(extra);
    srnn(&args)
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tomita(&data, "4", "3");
    let flags = [
        "--hidden",
        "8",
        "--centroids",
        "4",
        "--epochs",
        "2",
        "--seed",
        "5",
    ];
    let a = train_small(&data, &tmp.path().join("a"), &flags);
    let b = train_small(&data, &tmp.path().join("b"), &flags);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success());
    for f in ["model.json", "history.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
    let history = fs::read_to_string(tmp.path().join("a/history.csv")).unwrap();
    assert_eq!(
        history.lines().next(),
        Some("epoch,phase,train_loss,train_err,valid_err")
    );
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn tomita_1_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tomita(&data, "1", "7");
    let run = tmp.path().join("run");
    let o = train_small(
        &data,
        &run,
        &["--epochs", "100", "--until-zero-train-error"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("train_err 0 "), "{}", stdout(&o));
    let model = run.join("model.json");

    let ex = tmp.path().join("ex");
    let (train_txt, valid_txt) = (data.join("train.txt"), data.join("valid.txt"));
    let args = [
        "extract",
        "--model",
        p(&model),
        "--data",
        p(&train_txt),
        "--data",
        p(&valid_txt),
        "--grammar",
        "1",
        "--out",
        p(&ex),
    ];
    let o = srnn(&args);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(
        stdout(&o).contains("equivalent: true, states(min)=2"),
        "{}",
        stdout(&o)
    );
    let dot = fs::read_to_string(ex.join("minimized.dot")).unwrap();
    let raw = fs::read_to_string(ex.join("extracted.dot")).unwrap();
    for text in [&dot, &raw] {
        assert!(text.starts_with("digraph dfa {\n"));
        assert!(text.trim_end().ends_with('}'));
        assert_eq!(text.matches('{').count(), text.matches('}').count());
        assert_eq!(text.matches('[').count(), text.matches(']').count());
        assert_eq!(text.matches('"').count() % 2, 0);
    }
    // Graphviz, when installed, must accept the files without warnings.
    if let Ok(out) = Command::new("dot")
        .arg("-Tsvg")
        .arg(ex.join("minimized.dot"))
        .output()
    {
        assert!(out.status.success() && out.stderr.is_empty());
    }
    let counts = fs::read_to_string(ex.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().next(), Some("state,token,next_state,count"));
    // Byte-stable output.
    let again = tmp.path().join("ex2");
    let mut args2 = args;
    args2[args2.len() - 1] = p(&again);
    assert!(srnn(&args2).status.success());
    for f in [
        "extracted.dot",
        "minimized.dot",
        "counts.csv",
        "report.json",
    ] {
        assert_eq!(
            fs::read(ex.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }

    // Inspect.
    let ins = tmp.path().join("ins");
    let o = srnn(&[
        "inspect",
        "--model",
        p(&model),
        "--data",
        p(&data.join("valid.txt")),
        "--trace",
        "1101",
        "--out",
        p(&ins),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(ins.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 5);
    assert!(fs::read_to_string(ins.join("prototypes.csv"))
        .unwrap()
        .starts_with("centroid,token,mean_prob,rank"));
    assert!(fs::read_to_string(ins.join("ranked_profile.csv"))
        .unwrap()
        .starts_with("rank,mean_prob"));

    // Empty dataset and vocabulary mismatch are usage errors.
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, "#alphabet: 0,1\n").unwrap();
    let o = srnn(&[
        "inspect",
        "--model",
        p(&model),
        "--data",
        p(&empty),
        "--out",
        p(&ins),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let other = tmp.path().join("other.txt");
    fs::write(&other, "#alphabet: a,b\n1\ta b\n").unwrap();
    let o = srnn(&[
        "extract",
        "--model",
        p(&model),
        "--data",
        p(&other),
        "--out",
        p(&ex),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alphabet mismatch"));

    // Corrupted and future-version checkpoints.
    let text = fs::read_to_string(&model).unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, &text[..text.len() / 3]).unwrap();
    let o = srnn(&[
        "eval",
        "--model",
        p(&bad),
        "--data",
        p(&data.join("valid.txt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint error"));
    fs::write(&bad, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    let o = srnn(&[
        "eval",
        "--model",
        p(&bad),
        "--data",
        p(&data.join("valid.txt")),
    ]);
    assert!(stderr(&o).contains("unsupported version 2"));

    let o = srnn(&[
        "eval",
        "--model",
        p(&model),
        "--data",
        p(&data.join("valid.txt")),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("error 0 "));
}

#[test]
fn gradcheck_command() {
    for cell in ["gru", "lstm", "lstm-p"] {
        let o = srnn(&["gradcheck", "--cell", cell]);
        assert_eq!(o.status.code(), Some(0), "{cell}: {}", stdout(&o));
    }
    let o = srnn(&["gradcheck", "--cell", "gru", "--similarity", "euclidean"]);
    assert_eq!(o.status.code(), Some(0));
    let o = srnn(&["gradcheck", "--cell", "gru", "--inject-bug"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(!stdout(&srnn(&["gradcheck", "--help"])).contains("inject"));
}
