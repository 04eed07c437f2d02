use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convctl::corpus::load_corpus;
use convctl::metrics::parse_tsv;
use convctl::simulator::read_chatlogs;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_convctl"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn assert_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

#[test]
fn help_is_pinned() {
    assert_golden("help.txt", &ok(&["--help"]));
    for sub in ["train", "metrics", "self-chat", "serve"] {
        assert_golden(&format!("help-{sub}.txt"), &ok(&[sub, "--help"]));
    }
}

#[test]
fn preset_listing_is_pinned() {
    assert_golden("presets.txt", &ok(&["presets"]));
}

#[test]
fn errors_are_one_line_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cvt");
    let out = run(&["decode", "--model", missing.to_str().unwrap(), "--preset", "Greedy Search", "--corpus", "x"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]: "), "{err}");

    let bad = dir.path().join("bad.cvt");
    std::fs::write(&bad, b"CVCT but not really an archive").unwrap();
    let out = run(&["presets", "--presets", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]: "), "{err}");

    let out = run(&["ingest", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let data = p("data");
    ok(&["ingest", "--synthetic", "120", "--seed", "2", "--out", &data]);
    let train = format!("{data}/train.jsonl");
    let valid = format!("{data}/valid.jsonl");
    let vectors = format!("{data}/vectors.txt");
    assert_eq!(load_corpus(&train).unwrap().len(), 120);
    assert_eq!(load_corpus(&valid).unwrap().len(), 12);

    // ingest also normalizes an existing corpus
    ok(&["ingest", "--corpus", &valid, "--out", &p("valid-copy.jsonl")]);
    assert_eq!(
        std::fs::read(&valid).unwrap(),
        std::fs::read(p("valid-copy.jsonl")).unwrap()
    );

    ok(&["annotate", "--corpus", &train, "--embeddings", &vectors, "--out", &p("annotated.jsonl")]);
    let annotated = std::fs::read_to_string(p("annotated.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(annotated.lines().next().unwrap()).unwrap();
    for key in ["has_question", "mean_nidf", "resp_cos_sim", "response", "speaker"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let model = p("model.cvt");
    ok(&["train", "--corpus", &train, "--embeddings", &vectors, "--seed", "2", "--out", &model]);
    let again = p("model2.cvt");
    ok(&["train", "--corpus", &train, "--embeddings", &vectors, "--seed", "2", "--out", &again]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());

    let decoded = ok(&["decode", "--model", &model, "--preset", "Question-controlled CT 10", "--corpus", &valid]);
    assert_eq!(decoded.lines().count(), 12);

    ok(&[
        "self-chat", "--model", &model, "--preset", "Repetition-controlled baseline", "--count", "3",
        "--turns", "3", "--seed", "5", "--out", &p("chats.jsonl"),
    ]);
    let chat = ["self-chat", "--model", &model, "--preset", "Question-controlled CT 7", "--turns", "6", "--seed", "1"];
    let once = ok(&chat);
    assert!(!once.is_empty());
    assert_eq!(once, ok(&chat), "same seed, different bytes");

    let logs = read_chatlogs(p("chats.jsonl")).unwrap();
    assert_eq!(logs.len(), 3);
    assert!(logs.iter().all(|l| l.turns.len() == 6 && l.error.is_none()));

    let table = ok(&[
        "metrics", "--model", &model, "--corpus", &valid, "--presets",
        "Greedy Search,Extrep bigram WD -inf", "--out", &p("table.tsv"),
    ]);
    assert!(table.contains("Gold Data"));
    assert!(table.contains("protocol: replay"));
    let rows = parse_tsv(&std::fs::read_to_string(p("table.tsv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].extrep_bigram_pct, 0.0);

    // every built-in preset plus the gold reference; one dialogue keeps it quick
    let one = p("one.jsonl");
    let first_line = std::fs::read_to_string(&valid).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&one, first_line + "\n").unwrap();
    ok(&["metrics", "--model", &model, "--corpus", &one, "--presets", "all", "--out", &p("all.tsv")]);
    let rows = parse_tsv(&std::fs::read_to_string(p("all.tsv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 29);
    assert_eq!(rows[0].config, "Gold Data");
    assert_eq!(rows.iter().filter(|r| r.config != "Gold Data").count(), 28);

    let selfchat = ok(&[
        "metrics", "--model", &model, "--corpus", &valid, "--presets", "Greedy Search",
        "--protocol", "selfchat", "--turns", "2",
    ]);
    assert!(!selfchat.contains("Gold Data"));
    assert!(selfchat.contains("protocol: self-chat"));

    let transcript = bin()
        .args(["chat", "--model", &model, "--out", &p("chat.jsonl")])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .unwrap()
                .write_all(b"hi there !\n/z question 10\n/w nidf 2\n/show\nwhat do you do ?\n/quit\n")?;
            child.wait_with_output()
        })
        .unwrap();
    assert!(transcript.status.success());
    let stdout = String::from_utf8(transcript.stdout).unwrap();
    assert!(stdout.contains("controls: question=10"), "{stdout}");
    let chat = read_chatlogs(p("chat.jsonl")).unwrap();
    assert_eq!(chat[0].turns.len(), 4);
}
