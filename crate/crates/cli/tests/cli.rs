use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corefline_core::{parse_conllu, serialize_documents, FormatKind};
use corefline_testkit::fixtures::{lison_conllu, LISON_INPUT, LISON_ROWS};
use corefline_testkit::gen::{random_documents, GenConfig};
use corefline_testkit::oracle::head_chains;
use tempfile::TempDir;

fn corefline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corefline"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = corefline(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn random_corpus(dir: &TempDir, seed: u64, n: usize) -> PathBuf {
    let docs = random_documents(seed, n, &GenConfig::default());
    write(dir, "gold.conllu", &serialize_documents(&docs).unwrap())
}

#[test]
fn convert_lison_rows() {
    let dir = TempDir::new().unwrap();
    let gold = write(&dir, "lison.conllu", &lison_conllu());
    for (fmt, row) in LISON_ROWS {
        let out = ok(&["convert", "--in", s(&gold), "--format", fmt.name()]);
        assert_eq!(out, format!("{row}\n"), "{fmt}");
    }
}

#[test]
fn convert_unannotated_is_plain() {
    let dir = TempDir::new().unwrap();
    let doc = parse_conllu(&lison_conllu()).unwrap().documents[0].without_chains();
    let bare = write(&dir, "bare.conllu", &serialize_documents(&[doc]).unwrap());
    assert_eq!(
        ok(&["convert", "--in", s(&bare), "--format", "crac"]),
        format!("{LISON_INPUT}\n")
    );
}

#[test]
fn convert_decode_round_trip() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 11, 25);
    let gold_docs = parse_conllu(&fs::read_to_string(&gold).unwrap())
        .unwrap()
        .documents;
    for fmt in FormatKind::ALL {
        let text = dir.path().join(format!("{}.txt", fmt.name()));
        let pred = dir.path().join(format!("{}.conllu", fmt.name()));
        let diags = dir.path().join("diags.jsonl");
        ok(&[
            "convert",
            "--in",
            s(&gold),
            "--format",
            fmt.name(),
            "--out",
            s(&text),
        ]);
        ok(&[
            "decode",
            "--text",
            s(&text),
            "--conllu",
            s(&gold),
            "--format",
            fmt.name(),
            "--out",
            s(&pred),
            "--diagnostics",
            s(&diags),
        ]);
        assert_eq!(fs::read_to_string(&diags).unwrap(), "");
        let pred_docs = parse_conllu(&fs::read_to_string(&pred).unwrap())
            .unwrap()
            .documents;
        assert_eq!(pred_docs.len(), gold_docs.len());
        for (g, p) in gold_docs.iter().zip(&pred_docs) {
            assert_eq!(
                head_chains(p, true),
                head_chains(g, true),
                "{fmt} {}",
                g.doc_id
            );
        }
    }
}

#[test]
fn convert_out_dir_writes_one_file_per_document() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 3, 3);
    let out = dir.path().join("txt");
    ok(&[
        "convert",
        "--in",
        s(&gold),
        "--format",
        "minimal",
        "--out-dir",
        s(&out),
    ]);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["doc0.txt", "doc1.txt", "doc2.txt"]);
}

#[test]
fn clean_fixtures() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.txt", "a b");
    let output = write(&dir, "out.txt", "a <ent1> b a <ent1> b a b");
    let diags = dir.path().join("d.jsonl");
    let cleaned = ok(&[
        "clean",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--format",
        "headword",
        "--diagnostics",
        s(&diags),
    ]);
    assert_eq!(cleaned, "a <ent1> b\n");
    let lines = fs::read_to_string(&diags).unwrap();
    assert!(!lines.is_empty());
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["kind"].is_string());
    }

    let input = write(&dir, "in2.txt", "When Lison visits her sister");
    let output = write(
        &dir,
        "out2.txt",
        "When Lisonn <ent1> visits her <ent1> sister <ent2>",
    );
    let cleaned = ok(&[
        "clean",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--format",
        "headword",
    ]);
    assert_eq!(
        cleaned,
        "When Lison <ent1> visits her <ent1> sister <ent2>\n"
    );

    let gold = write(&dir, "t.conllu", &lison_conllu());
    let row = write(&dir, "row.txt", LISON_ROWS[1].1);
    let cleaned = ok(&[
        "clean",
        "--input",
        s(&gold),
        "--output",
        s(&row),
        "--format",
        "explicit",
    ]);
    assert_eq!(cleaned, format!("{}\n", LISON_ROWS[1].1));
}

fn annotate_with(dir: &TempDir, gold: &Path, extra: &[&str], name: &str) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["annotate", "--in", s(gold), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn oracle_annotation_scores_100() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 21, 20);
    for fmt in ["crac", "headword"] {
        let pred = annotate_with(
            &dir,
            &gold,
            &["--backend", "oracle", "--format", fmt],
            "pred.conllu",
        );
        let report: serde_json::Value =
            serde_json::from_str(&ok(&["evaluate", "--gold", s(&gold), "--pred", s(&pred)]))
                .unwrap();
        assert_eq!(report["macro_average"].as_f64(), Some(100.0), "{fmt}");
    }
}

#[test]
fn empty_backend_leaves_text_unannotated() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 22, 5);
    let pred = annotate_with(&dir, &gold, &["--backend", "empty"], "pred.conllu");
    let docs = parse_conllu(&fs::read_to_string(&pred).unwrap())
        .unwrap()
        .documents;
    assert!(docs.iter().all(|d| d.chains.is_empty()));
}

#[test]
fn replay_is_byte_identical_and_order_stable() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 23, 12);
    let record = dir.path().join("rec.jsonl");
    let first = annotate_with(
        &dir,
        &gold,
        &["--backend", "oracle", "--record", s(&record)],
        "a.conllu",
    );
    let second = annotate_with(
        &dir,
        &gold,
        &["--backend", "replay", "--replay", s(&record)],
        "b.conllu",
    );
    let parallel = annotate_with(
        &dir,
        &gold,
        &["--backend", "replay", "--replay", s(&record), "--jobs", "4"],
        "c.conllu",
    );
    let a = fs::read(&first).unwrap();
    assert_eq!(a, fs::read(&second).unwrap());
    assert_eq!(a, fs::read(&parallel).unwrap());
}

#[test]
fn config_file_drives_the_job() {
    let dir = TempDir::new().unwrap();
    random_corpus(&dir, 24, 4);
    let config = write(
        &dir,
        "job.json",
        r#"{"pipeline": {"sentences_per_batch": 2, "context_budget": 40, "format": "minimal"},
            "backend": {"kind": "oracle"}, "input": "gold.conllu", "output": "pred.conllu", "diagnostics": "diags.jsonl"}"#,
    );
    ok(&["annotate", "--config", s(&config)]);
    assert!(dir.path().join("pred.conllu").exists());
    assert!(dir.path().join("diags.jsonl").exists());

    let bad = write(
        &dir,
        "bad.json",
        r#"{"pipeline": {}, "backend": {"kind": "oracle"}, "typo": 1}"#,
    );
    let out = corefline(&["annotate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_completion_gives_partial_output_and_backend_exit() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 25, 3);
    let record = write(&dir, "empty.jsonl", "");
    let out_path = dir.path().join("pred.conllu");
    let out = corefline(&[
        "annotate",
        "--in",
        s(&gold),
        "--out",
        s(&out_path),
        "--backend",
        "replay",
        "--replay",
        s(&record),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let docs = parse_conllu(&fs::read_to_string(&out_path).unwrap())
        .unwrap()
        .documents;
    assert_eq!(docs.len(), 3);
}

#[test]
fn parse_errors_name_file_and_line() {
    let dir = TempDir::new().unwrap();
    let broken = write(&dir, "broken.conllu", "# sent_id = 1\n1\tWhen\n\n");
    let out = corefline(&["convert", "--in", s(&broken), "--format", "crac"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken.conllu:2"), "{err}");
}

#[test]
fn evaluate_table_and_missing_documents() {
    let dir = TempDir::new().unwrap();
    let gold = random_corpus(&dir, 26, 4);
    let table = ok(&[
        "evaluate",
        "--gold",
        s(&gold),
        "--pred",
        s(&gold),
        "--table",
    ]);
    assert!(table.starts_with("dataset"));
    assert!(table.contains("100.00"));

    let docs = random_documents(26, 4, &GenConfig::default());
    let partial = write(
        &dir,
        "partial.conllu",
        &serialize_documents(&docs[..2]).unwrap(),
    );
    let report: serde_json::Value = serde_json::from_str(&ok(&[
        "evaluate",
        "--gold",
        s(&gold),
        "--pred",
        s(&partial),
    ]))
    .unwrap();
    assert_eq!(
        report["datasets"][0]["missing_documents"],
        serde_json::json!(["doc2", "doc3"])
    );
}

#[test]
fn stats_on_lison() {
    let dir = TempDir::new().unwrap();
    let gold = write(&dir, "t.conllu", &lison_conllu());
    let cdf = dir.path().join("cdf.csv");
    let out: serde_json::Value =
        serde_json::from_str(&ok(&["stats", "--gold", s(&gold), "--cdf", s(&cdf)])).unwrap();
    assert_eq!(
        out["density"]["datasets"][0]["gold_per_100"].as_f64(),
        Some(50.0)
    );
    assert_eq!(out["antecedents"]["mentions"].as_u64(), Some(2));
    assert!(fs::read_to_string(&cdf)
        .unwrap()
        .starts_with("distance,cumulative_fraction\n"));
}

#[test]
fn export_train_lison() {
    let dir = TempDir::new().unwrap();
    let gold = write(&dir, "t.conllu", &lison_conllu());
    let out = ok(&["export-train", "--in", s(&gold)]);
    let lines: Vec<serde_json::Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(
        lines[0]["completion"],
        "When Lison <ent0> visits her <ent0> sister <ent1> , brings <zero0> flowers."
    );
    assert_eq!(lines[0]["doc_id"], "lison");
}

#[test]
fn stdin_and_stdout() {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_corefline"))
        .args(["convert", "--format", "minimal"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(lison_conllu().as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        format!("{}\n", LISON_ROWS[2].1)
    );
}
