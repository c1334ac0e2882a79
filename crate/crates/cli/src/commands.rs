use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use corefline_core::align::clean_with;
use corefline_core::formats::{encode, events_to_mentions};
use corefline_core::metrics::{antecedent_cdf, conll_f1, density, DensityStats};
use corefline_core::pipeline::{
    annotate_document, export_training_pairs, merge_mentions, PipelineConfig, WindowDiagnostic,
};
use corefline_core::reindex::{globalize, IdAllocator, IdMap};
use corefline_core::{serialize_documents, Corpus, Diagnostic, Document, FormatKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::backend::build_backend;
use crate::config::{BackendConfig, BackendKind, JobConfig};
use crate::error::{CliError, Result};
use crate::io::{load_corpus, load_documents, parse_documents, read_text, to_jsonl, write_text};

#[derive(Debug, Parser)]
#[command(
    name = "corefline",
    version,
    about = "Coreference annotation with inline-format language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render CoNLL-U documents as inline-annotated plain text.
    Convert(ConvertArgs),
    /// Read inline-annotated text back into CoNLL-U.
    Decode(DecodeArgs),
    /// Repair a model output against its input text.
    Clean(CleanArgs),
    /// Annotate documents window by window with a backend.
    Annotate(AnnotateArgs),
    /// Head-matched MUC, B3, CEAF-e and CoNLL F1.
    Evaluate(EvaluateArgs),
    /// Mention density and antecedent-distance statistics.
    Stats(StatsArgs),
    /// Write prompt/completion training pairs as JSONL.
    ExportTrain(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long)]
    pub format: FormatKind,
    /// Output file; documents are separated by a blank line.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one `<doc_id>.txt` per document here instead.
    #[arg(long, conflicts_with = "out")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Annotated text, documents separated by a blank line.
    #[arg(long)]
    pub text: PathBuf,
    /// The documents the text annotates; existing chains are ignored.
    #[arg(long)]
    pub conllu: PathBuf,
    #[arg(long)]
    pub format: FormatKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = corefline_core::align::DEFAULT_FUZZY_THRESHOLD)]
    pub fuzzy_threshold: f64,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// Input text, or a `.conllu` file whose text is used.
    #[arg(long)]
    pub input: PathBuf,
    /// Model output to repair.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub format: FormatKind,
    /// Where the cleaned text goes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = corefline_core::align::DEFAULT_FUZZY_THRESHOLD)]
    pub fuzzy_threshold: f64,
}

/// Overrides applied on top of the job's pipeline section.
#[derive(Debug, Args, Default)]
pub struct PipelineOverrides {
    /// small, large-train or large-infer: sets batch size and context budget.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub format: Option<FormatKind>,
    #[arg(long)]
    pub sentences_per_batch: Option<usize>,
    #[arg(long)]
    pub context_budget: Option<usize>,
    #[arg(long)]
    pub fuzzy_threshold: Option<f64>,
    /// Decode model output strictly instead of cleaning it.
    #[arg(long)]
    pub no_clean: bool,
    /// Keep one index map per document instead of one per window.
    #[arg(long)]
    pub no_reindex: bool,
}

impl PipelineOverrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(name) = &self.preset {
            let p = PipelineConfig::named(name)
                .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?;
            cfg.sentences_per_batch = p.sentences_per_batch;
            cfg.context_budget = p.context_budget;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(n) = self.sentences_per_batch {
            cfg.sentences_per_batch = n;
        }
        if let Some(n) = self.context_budget {
            cfg.context_budget = n;
        }
        if let Some(t) = self.fuzzy_threshold {
            cfg.fuzzy_threshold = t;
        }
        if self.no_clean {
            cfg.on_the_fly_clean = false;
        }
        if self.no_reindex {
            cfg.reindex = false;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// oracle, replay, http or empty; replaces the configured backend kind.
    #[arg(long)]
    pub backend: Option<String>,
    /// Completions JSONL for the replay backend.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Write raw completions here, in replay format.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Per-window diagnostics as JSONL.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Documents annotated concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold CoNLL-U file, or a directory with one file per dataset.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Print the plain-text table instead of JSON.
    #[arg(long)]
    pub table: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Count only mentions of chains with two or more mentions.
    #[arg(long)]
    pub exclude_singletons: bool,
    /// Context budgets (in words) to report antecedent coverage for.
    #[arg(long = "budget", default_values_t = [250usize, 3072])]
    pub budgets: Vec<usize>,
    /// CSV of the antecedent-distance CDF.
    #[arg(long)]
    pub cdf: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineOverrides,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => convert(&a),
        Command::Decode(a) => decode(&a),
        Command::Clean(a) => clean(&a),
        Command::Annotate(a) => annotate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Stats(a) => stats(&a),
        Command::ExportTrain(a) => export_train(&a),
    }
}

/// Inline rendering of a whole document, chains numbered from 1 in order of
/// first appearance.
pub fn render_document(doc: &Document, format: FormatKind) -> Result<String> {
    let mut next = 0u32;
    let enc = encode(doc, 0..doc.sentences.len(), format, |_| {
        next += 1;
        Some(next.to_string())
    })
    .map_err(|e| CliError::Data(format!("{}: {e}", doc.doc_id)))?;
    Ok(enc.text.render())
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let docs = load_documents(&a.input)?;
    let rendered: Vec<String> = docs
        .iter()
        .map(|d| render_document(d, a.format))
        .collect::<Result<_>>()?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (doc, text) in docs.iter().zip(&rendered) {
            let path = dir.join(format!("{}.txt", doc.doc_id));
            write_text(Some(&path), &format!("{text}\n"))?;
        }
        return Ok(());
    }
    let mut out = rendered.join("\n\n");
    if !out.is_empty() {
        out.push('\n');
    }
    write_text(a.out.as_deref(), &out)
}

#[derive(Serialize)]
struct DocDiagnostic<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    diagnostic: &'a Diagnostic,
}

/// Blocks of non-empty lines.
fn split_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current.join("\n"));
    }
    blocks
}

/// Projects one annotated text onto `reference` (chains ignored). Labels
/// become chain ids `e1`, `e2`, ... in order of first appearance.
pub fn decode_document(
    reference: &Document,
    text: &str,
    format: FormatKind,
    fuzzy_threshold: f64,
) -> Result<(Document, Vec<Diagnostic>)> {
    let mut pred = reference.without_chains();
    let bare = encode(&pred, 0..pred.sentences.len(), format, |id| Some(id.into()))
        .map_err(|e| CliError::Data(format!("{}: {e}", reference.doc_id)))?;
    let cleaned = clean_with(&bare.text.render(), text, format, fuzzy_threshold);
    let mut diags = cleaned.diagnostics;
    let (global, d) = globalize(
        &cleaned.text,
        &mut IdMap::default(),
        &mut IdAllocator::default(),
    );
    diags.extend(d);
    let (mentions, d) = events_to_mentions(&global, &bare.token_map_partial(), &pred);
    diags.extend(d);
    diags.extend(merge_mentions(&mut pred, mentions));
    pred.normalize();
    Ok((pred, diags))
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let docs = load_documents(&a.conllu)?;
    let blocks = split_blocks(&read_text(&a.text)?);
    if blocks.len() != docs.len() {
        return Err(CliError::Data(format!(
            "{} has {} text blocks but {} has {} documents",
            a.text.display(),
            blocks.len(),
            a.conllu.display(),
            docs.len()
        )));
    }
    let mut out_docs = Vec::with_capacity(docs.len());
    let mut diag_lines = String::new();
    for (doc, block) in docs.iter().zip(&blocks) {
        let (pred, diags) = decode_document(doc, block, a.format, a.fuzzy_threshold)?;
        diag_lines.push_str(&to_jsonl(diags.iter().map(|d| DocDiagnostic {
            doc_id: &doc.doc_id,
            diagnostic: d,
        })));
        out_docs.push(pred);
    }
    if let Some(p) = &a.diagnostics {
        write_text(Some(p), &diag_lines)?;
    }
    write_conllu(a.out.as_deref(), &out_docs)
}

fn write_conllu(path: Option<&Path>, docs: &[Document]) -> Result<()> {
    let text = serialize_documents(docs).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &text)
}

fn clean(a: &CleanArgs) -> Result<()> {
    let input = if a.input.extension().is_some_and(|x| x == "conllu") {
        let docs = load_documents(&a.input)?;
        let texts: Vec<String> = docs
            .iter()
            .map(|d| render_document(&d.without_chains(), a.format))
            .collect::<Result<_>>()?;
        texts.join("\n")
    } else {
        read_text(&a.input)?
    };
    let output = read_text(&a.output)?;
    let cleaned = clean_with(&input, &output, a.format, a.fuzzy_threshold);
    if let Some(p) = &a.diagnostics {
        write_text(Some(p), &to_jsonl(&cleaned.diagnostics))?;
    }
    write_text(a.out.as_deref(), &format!("{}\n", cleaned.text.render()))
}

fn load_job(path: Option<&Path>) -> Result<JobConfig> {
    path.map_or_else(|| Ok(JobConfig::default()), JobConfig::load)
}

fn parse_backend_kind(s: &str) -> Result<BackendKind> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| CliError::Usage(format!("unknown backend `{s}`")))
}

#[derive(Serialize)]
struct DocWindowDiagnostic<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    diagnostic: &'a WindowDiagnostic,
}

fn annotate(a: &AnnotateArgs) -> Result<()> {
    let mut job = load_job(a.config.as_deref())?;
    if let Some(kind) = &a.backend {
        let kind = parse_backend_kind(kind)?;
        match &mut job.backend {
            Some(b) => b.kind = kind,
            None => job.backend = Some(BackendConfig::of_kind(kind)),
        }
    }
    if let Some(r) = &a.replay {
        job.backend
            .get_or_insert_with(|| BackendConfig::of_kind(BackendKind::Replay))
            .replay = Some(r.clone());
    }
    let backend_cfg = job
        .backend
        .clone()
        .ok_or_else(|| CliError::Config("no backend configured".into()))?;
    let mut cfg = job.effective_pipeline();
    a.pipeline.apply(&mut cfg)?;

    let input = a
        .input
        .clone()
        .or(job.input.clone())
        .ok_or_else(|| CliError::Usage("no input given".into()))?;
    let output = a.out.clone().or(job.output.clone());
    let record = a.record.clone().or(job.record.clone());
    let diagnostics = a.diagnostics.clone().or(job.diagnostics.clone());
    let jobs = a.jobs.or(job.jobs).unwrap_or(1).max(1);

    let docs = load_documents(&input)?;
    let backend = build_backend(&backend_cfg, &cfg, &docs)?;
    let threads = if backend.info().single_flight {
        1
    } else {
        jobs
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    log::info!(
        "annotating {} documents with {} on {threads} threads",
        docs.len(),
        backend.info().name
    );
    let results: Vec<_> = pool.install(|| {
        docs.par_iter()
            .map(|d| annotate_document(d, &*backend, &cfg))
            .collect()
    });

    let mut out_docs = Vec::with_capacity(docs.len());
    let mut completions = Vec::new();
    let mut diag_lines = String::new();
    let mut failed = Vec::new();
    for result in results {
        let ann = result.map_err(|e| CliError::Data(e.to_string()))?;
        let doc_id = ann.document.doc_id.clone();
        diag_lines.push_str(&to_jsonl(ann.diagnostics.iter().map(|d| {
            DocWindowDiagnostic {
                doc_id: &doc_id,
                diagnostic: d,
            }
        })));
        for w in &ann.failed_windows {
            failed.push(format!("{doc_id}#{w}"));
        }
        completions.extend(ann.completions);
        out_docs.push(ann.document);
    }
    if let Some(p) = &record {
        write_text(Some(p), &to_jsonl(&completions))?;
    }
    if let Some(p) = &diagnostics {
        write_text(Some(p), &diag_lines)?;
    }
    write_conllu(output.as_deref(), &out_docs)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Backend(format!(
            "{} windows left unannotated: {}",
            failed.len(),
            failed.join(", ")
        )))
    }
}

/// When both sides are single files their datasets are paired regardless of
/// file names.
fn pair_single_datasets(gold: &Corpus, pred: &mut Corpus) {
    if gold.datasets.len() == 1 && pred.datasets.len() == 1 {
        pred.datasets[0].id = gold.datasets[0].id.clone();
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let gold = load_corpus(&a.gold)?;
    let mut pred = load_corpus(&a.pred)?;
    pair_single_datasets(&gold, &mut pred);
    let report = conll_f1(&gold, &pred);
    for d in report
        .datasets
        .iter()
        .filter(|d| !d.missing_documents.is_empty())
    {
        log::warn!(
            "{}: no prediction for {}",
            d.dataset,
            d.missing_documents.join(", ")
        );
    }
    let text = if a.table {
        report.render_table()
    } else {
        format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("serializable")
        )
    };
    write_text(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct Coverage {
    budget: usize,
    fraction: f64,
}

#[derive(Serialize)]
struct AntecedentSummary {
    /// Distances count surface words between mention heads.
    unit: &'static str,
    mentions: usize,
    coverage: Vec<Coverage>,
}

#[derive(Serialize)]
struct StatsReport {
    density: DensityStats,
    antecedents: AntecedentSummary,
}

fn stats(a: &StatsArgs) -> Result<()> {
    let gold = load_corpus(&a.gold)?;
    let pred = match &a.pred {
        Some(p) => {
            let mut pred = load_corpus(p)?;
            pair_single_datasets(&gold, &mut pred);
            Some(pred)
        }
        None => None,
    };
    let cdf = antecedent_cdf(gold.datasets.iter().flat_map(|d| d.documents.iter()));
    let report = StatsReport {
        density: density(&gold, pred.as_ref(), !a.exclude_singletons),
        antecedents: AntecedentSummary {
            unit: "words",
            mentions: cdf.mentions,
            coverage: a
                .budgets
                .iter()
                .map(|&budget| Coverage {
                    budget,
                    fraction: cdf.coverage(budget),
                })
                .collect(),
        },
    };
    if let Some(p) = &a.cdf {
        write_text(Some(p), &cdf.to_csv())?;
    }
    write_text(
        a.out.as_deref(),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("serializable")
        ),
    )
}

fn export_train(a: &ExportArgs) -> Result<()> {
    let job = load_job(a.config.as_deref())?;
    let mut cfg = job.effective_pipeline();
    a.pipeline.apply(&mut cfg)?;
    let input = a
        .input
        .clone()
        .or(job.input.clone())
        .ok_or_else(|| CliError::Usage("no input given".into()))?;
    let output = a.out.clone().or(job.output.clone());
    let docs = parse_documents(&read_text(&input)?, &input)?;
    let mut out = String::new();
    for doc in &docs {
        let pairs = export_training_pairs(doc, &cfg).map_err(|e| CliError::Data(e.to_string()))?;
        out.push_str(&to_jsonl(&pairs));
    }
    write_text(output.as_deref(), &out)
}
