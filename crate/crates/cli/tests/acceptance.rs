//! Prints one PASS/FAIL line per acceptance criterion. Criteria listed in
//! `KNOWN_UNATTAINABLE` are reported but do not fail the run.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use corefline_core::align::clean;
use corefline_core::formats::{decode, encode, events_to_mentions};
use corefline_core::metrics::{antecedent_cdf, b_cubed, ceaf_e, conll_f1, density, muc};
use corefline_core::pipeline::{
    annotate_document, export_training_pairs, OracleBackend, PipelineConfig,
};
use corefline_core::reindex::{globalize, localize, IdAllocator};
use corefline_core::{
    parse_conllu, serialize_conllu, serialize_documents, Corpus, Dataset, Document, FormatKind,
};
use corefline_testkit::corrupt::corrupt;
use corefline_testkit::fixtures::{gap_document, lison_document, lison_label, LISON_ROWS};
use corefline_testkit::gen::{random_documents, random_window, GenConfig};
use corefline_testkit::oracle;

/// Criterion 4 states MUC F1 = 4/9 for its fixture; the MUC definition gives
/// 2/3 there (see `muc_fixture` in the core metric tests).
const KNOWN_UNATTAINABLE: &[u32] = &[4];

const ROUND_TRIP_DOCS: usize = 1000;
const CORPUS_SEED: u64 = 2024;

type Criterion = (u32, &'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn random_corpus() -> Vec<Document> {
    random_documents(CORPUS_SEED, ROUND_TRIP_DOCS, &GenConfig::default())
}

fn corpus_of(docs: Vec<Document>) -> Corpus {
    Corpus {
        datasets: vec![Dataset {
            id: "random".into(),
            documents: docs,
        }],
    }
}

fn format_golden() -> Outcome {
    let start = Instant::now();
    let doc = lison_document();
    let mut bad = Vec::new();
    for (fmt, row) in LISON_ROWS {
        let enc = encode(&doc, 0..1, fmt, lison_label).expect("encodes");
        let (dec, diags) = decode(row, fmt);
        if enc.text.render() != row || dec != enc.text || !diags.is_empty() {
            bad.push(fmt.name());
        }
    }
    let t = start.elapsed();
    check(
        bad.is_empty() && within(t, Duration::from_secs(1)),
        format!("4 rows byte-exact, decode inverts; mismatches {bad:?}; {t:.2?}"),
    )
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let gold = random_corpus();
    let mut worst: f64 = 100.0;
    for fmt in FormatKind::ALL {
        let mut pred = Vec::with_capacity(gold.len());
        for doc in &gold {
            let enc = encode(doc, 0..doc.sentences.len(), fmt, |id| Some(id.to_string()))
                .expect("encodes");
            let (dec, _) = decode(&enc.text.render(), fmt);
            let (mentions, _) = events_to_mentions(&dec, &enc.token_map_partial(), doc);
            let mut rebuilt = doc.without_chains();
            for m in mentions {
                rebuilt.add_mention(m);
            }
            rebuilt.normalize();
            let text = serialize_conllu(&rebuilt).expect("serializes");
            pred.push(parse_conllu(&text).expect("parses").documents.remove(0));
        }
        worst = worst.min(conll_f1(&corpus_of(gold.clone()), &corpus_of(pred)).macro_average);
    }
    let t = start.elapsed();
    check(
        worst == 100.0 && within(t, Duration::from_secs(30)),
        format!("{ROUND_TRIP_DOCS} docs x 4 formats, lowest CoNLL F1 {worst:.2}; {t:.2?}"),
    )
}

fn cleaning_guarantee() -> Outcome {
    let start = Instant::now();
    let mut rng = corefline_testkit::rng(77);
    let docs = random_documents(78, 500, &GenConfig::default());
    let (mut cases, mut token_failures, mut crossings) = (0, 0, 0);
    let mut ops_seen = BTreeSet::new();
    for (i, doc) in docs.iter().cycle().take(10_000).enumerate() {
        let fmt = FormatKind::ALL[i % 4];
        let enc = encode(doc, 0..doc.sentences.len(), fmt, |id| {
            Some(id.trim_start_matches('e').to_string())
        })
        .expect("encodes");
        let input = corefline_core::AnnotatedText::plain(
            enc.text.tokens.clone(),
            enc.text.breaks.clone(),
            fmt,
        )
        .render();
        let (noisy, ops) = corrupt(&mut rng, &enc.text.render(), fmt);
        ops_seen.extend(ops.iter().map(|o| format!("{o:?}")));
        let out = clean(&input, &noisy, fmt);
        cases += 1;
        if out.text.tokens != enc.text.tokens {
            token_failures += 1;
        }
        let (mentions, _) = events_to_mentions(&out.text, &enc.token_map_partial(), doc);
        for a in &mentions {
            for b in &mentions {
                if a.sentence == b.sentence && a.fragments[0].crosses(&b.fragments[0]) {
                    crossings += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    check(
        token_failures == 0 && crossings == 0 && ops_seen.len() == 8 && within(t, Duration::from_secs(60)),
        format!("{cases} pairs, {} corruption kinds, {token_failures} token mismatches, {crossings} crossings; {t:.2?}", ops_seen.len()),
    )
}

fn metric_oracle() -> Outcome {
    let gold = vec![vec![0, 1, 2], vec![3, 4]];
    let pred = vec![vec![0, 1], vec![2, 3, 4]];
    let m = muc(&gold, &pred).prf();
    let b = b_cubed(&gold, &pred).prf();
    let muc_ok = (m.f1 - 4.0 / 9.0).abs() < 1e-9;
    let b3_ok = (b.f1 - 11.0 / 15.0).abs() < 1e-9;

    let mut rng = corefline_testkit::rng(4);
    let mut ceaf_bad = 0;
    let mut fixtures = vec![(gold.clone(), pred.clone())];
    for _ in 0..2000 {
        let universe = 12;
        fixtures.push((
            oracle::random_clusters(&mut rng, universe, 6),
            oracle::random_clusters(&mut rng, universe, 6),
        ));
    }
    for (g, p) in &fixtures {
        let got = ceaf_e(g, p).prf();
        let (r, pr, f) = oracle::ceaf_e(g, p);
        if (got.recall - r).abs() > 1e-9
            || (got.precision - pr).abs() > 1e-9
            || (got.f1 - f).abs() > 1e-9
        {
            ceaf_bad += 1;
        }
    }
    check(
        muc_ok && b3_ok && ceaf_bad == 0,
        format!(
            "MUC F1 {:.6} (expected 4/9 = {:.6}); B3 F1 {:.6} (11/15); CEAF-e vs brute force: {ceaf_bad}/{} mismatches",
            m.f1,
            4.0 / 9.0,
            b.f1,
            fixtures.len()
        ),
    )
}

fn reindex_round_trip() -> Outcome {
    let mut rng = corefline_testkit::rng(5);
    let mut bad = 0;
    for _ in 0..1000 {
        let window = random_window(&mut rng);
        let (local, mut map) = localize(&window);
        let (back, diags) = globalize(&local, &mut map, &mut IdAllocator::starting_at(10_000));
        if back != window || !diags.is_empty() {
            bad += 1;
        }
    }
    let cfg = PipelineConfig {
        sentences_per_batch: 1,
        context_budget: 10,
        format: FormatKind::HeadwordXml,
        ..PipelineConfig::small()
    };
    let pairs = export_training_pairs(&gap_document(), &cfg).expect("exports");
    let gap_ok = pairs.len() == 3 && pairs[2].completion == "Anna <ent1> wakes";
    check(
        bad == 0 && gap_ok,
        format!(
            "1000 windows, {bad} not restored; gap fixture completion {:?}",
            pairs.get(2).map(|p| &p.completion)
        ),
    )
}

fn oracle_closure() -> Outcome {
    let start = Instant::now();
    let gold = random_corpus();
    let mut scores = Vec::new();
    for base in [PipelineConfig::small(), PipelineConfig::large_infer()] {
        for fmt in FormatKind::ALL {
            let cfg = PipelineConfig {
                format: fmt,
                ..base.clone()
            };
            let backend = OracleBackend::new(&gold, &cfg).expect("exports");
            let pred: Vec<Document> = gold
                .iter()
                .map(|d| {
                    annotate_document(d, &backend, &cfg)
                        .expect("annotates")
                        .document
                })
                .collect();
            scores.push(conll_f1(&corpus_of(gold.clone()), &corpus_of(pred)).macro_average);
        }
    }
    let t = start.elapsed();
    let worst = scores.iter().copied().fold(100.0, f64::min);
    check(
        worst == 100.0 && within(t, Duration::from_secs(120)),
        format!("configs (4, 250) and (6, 3072) x 4 formats, lowest CoNLL F1 {worst:.2}; {t:.2?}"),
    )
}

fn conllu_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else {
        return;
    };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            conllu_files(&p, out);
        } else if p.extension().is_some_and(|x| x == "conllu") {
            out.push(p);
        }
    }
}

fn load(paths: &[&PathBuf]) -> Vec<Document> {
    paths
        .iter()
        .flat_map(|p| {
            parse_conllu(&fs::read_to_string(p).expect("readable"))
                .expect("parses")
                .documents
        })
        .collect()
}

/// Needs `COREFLINE_COREFUD_DIR` pointing at the CorefUD shared-task data.
fn corefud_statistics() -> Outcome {
    let Some(dir) = std::env::var_os("COREFLINE_COREFUD_DIR") else {
        return Outcome::Skip("COREFLINE_COREFUD_DIR not set; needs CorefUD data".into());
    };
    let mut files = Vec::new();
    conllu_files(Path::new(&dir), &mut files);
    files.sort();
    let find = |name: &str| {
        files
            .iter()
            .filter(|p| p.to_string_lossy().contains(name) && p.to_string_lossy().contains("train"))
            .collect::<Vec<_>>()
    };
    let (democrat, litbank) = (find("fr_democrat"), find("fr_litbankfr"));
    if democrat.is_empty() || litbank.is_empty() {
        return Outcome::Skip(format!(
            "fr_democrat / fr_litbankfr training files not found under {}",
            Path::new(&dir).display()
        ));
    }
    let mut gold = Corpus::default();
    gold.datasets.push(Dataset {
        id: "fr_democrat".into(),
        documents: load(&democrat),
    });
    gold.datasets.push(Dataset {
        id: "fr_litbankfr".into(),
        documents: load(&litbank),
    });
    let stats = density(&gold, None, true);
    let (d, l) = (
        stats.datasets[0].gold_per_100,
        stats.datasets[1].gold_per_100,
    );
    let train_dev: Vec<&PathBuf> = files
        .iter()
        .filter(|p| {
            let s = p.to_string_lossy();
            s.contains("train") || s.contains("dev")
        })
        .collect();
    let cdf = antecedent_cdf(load(&train_dev).iter().collect::<Vec<_>>());
    let (c250, c3072) = (cdf.coverage(250), cdf.coverage(3072));
    check(
        (d - 27.87).abs() <= 0.05 && (l - 13.55).abs() <= 0.05 && (c250 - 0.96).abs() <= 0.005 && (c3072 - 0.9984).abs() <= 0.005,
        format!(
            "density fr_democrat {d:.2} (27.87), fr_litbankfr {l:.2} (13.55); coverage(250) {c250:.4} (0.96), coverage(3072) {c3072:.4} (0.9984); distances in words, the reference may count subword tokens"
        ),
    )
}

fn run(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_corefline"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().expect("tempdir");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let docs = random_documents(8, 30, &GenConfig::default());
    fs::write(
        p("gold.conllu"),
        serialize_documents(&docs).expect("serializes"),
    )
    .expect("writable");
    run(&[
        "annotate",
        "--in",
        &p("gold.conllu"),
        "--out",
        &p("oracle.conllu"),
        "--backend",
        "oracle",
        "--record",
        &p("rec.jsonl"),
    ]);

    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for round in 0..2 {
        let pred = p(&format!("pred{round}.conllu"));
        let cdf = p(&format!("cdf{round}.csv"));
        run(&[
            "annotate",
            "--in",
            &p("gold.conllu"),
            "--out",
            &pred,
            "--backend",
            "replay",
            "--replay",
            &p("rec.jsonl"),
            "--jobs",
            "3",
        ]);
        outputs.push(vec![
            fs::read(&pred).expect("written"),
            run(&["evaluate", "--gold", &p("gold.conllu"), "--pred", &pred]),
            run(&[
                "evaluate",
                "--gold",
                &p("gold.conllu"),
                "--pred",
                &pred,
                "--table",
            ]),
            run(&[
                "stats",
                "--gold",
                &p("gold.conllu"),
                "--pred",
                &pred,
                "--cdf",
                &cdf,
            ]),
            fs::read(&cdf).expect("written"),
        ]);
    }
    let same = outputs[0] == outputs[1];
    check(same, "replay annotation, evaluate (JSON, table) and stats (JSON, CSV) byte-identical across two runs".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "format golden tests", format_golden),
        (2, "round-trip suite", round_trip),
        (3, "cleaning guarantee", cleaning_guarantee),
        (4, "metric oracle", metric_oracle),
        (5, "reindex round trip", reindex_round_trip),
        (6, "oracle closure", oracle_closure),
        (7, "CorefUD statistics", corefud_statistics),
        (8, "determinism", determinism),
    ];
    let mut unexpected = 0;
    for (n, name, f) in criteria {
        match f() {
            Outcome::Pass(d) => println!("criterion {n} ({name}): PASS - {d}"),
            Outcome::Skip(d) => println!("criterion {n} ({name}): SKIP - {d}"),
            Outcome::Fail(d) if KNOWN_UNATTAINABLE.contains(&n) => {
                println!("criterion {n} ({name}): FAIL (known, stated value unattainable) - {d}")
            }
            Outcome::Fail(d) => {
                unexpected += 1;
                println!("criterion {n} ({name}): FAIL - {d}");
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
