//! Windowed annotation of whole documents.
//!
//! A document is processed in batches of consecutive sentences. Each batch
//! is sent to a [`ModelBackend`] together with the tail of the text
//! annotated so far, the answer is cleaned against the batch, chain indices
//! are mapped back to document-level ids, and the mentions are merged into
//! the growing document. [`export_training_pairs`] builds the same prompts
//! from gold annotations, paired with the completion a perfect model would
//! give.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{clean_with, DEFAULT_FUZZY_THRESHOLD};
use crate::conllu::{Document, Mention, NodeId, Token, TokenRef};
use crate::diag::{Diagnostic, DiagnosticKind};
use crate::formats::{
    decode, encode, events_to_mentions, AnnotatedText, EncodedText, FormatError, FormatKind,
    TagKind,
};
use crate::reindex::{globalize, localize_into, IdAllocator, IdMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sentences_per_batch: usize,
    /// Maximum number of whitespace words (tags included) of previous context.
    pub context_budget: usize,
    pub format: FormatKind,
    pub fuzzy_threshold: f64,
    pub on_the_fly_clean: bool,
    pub reindex: bool,
    /// Extra attempts after a failed generation before a window is skipped.
    pub max_retries: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl PipelineConfig {
    fn preset(sentences_per_batch: usize, context_budget: usize) -> Self {
        Self {
            sentences_per_batch,
            context_budget,
            format: FormatKind::HeadwordXml,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            on_the_fly_clean: true,
            reindex: true,
            max_retries: 2,
        }
    }

    pub fn small() -> Self {
        Self::preset(4, 250)
    }

    pub fn large_train() -> Self {
        Self::preset(6, 1024)
    }

    pub fn large_infer() -> Self {
        Self::preset(6, 3072)
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "large-train" => Some(Self::large_train()),
            "large-infer" => Some(Self::large_infer()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.sentences_per_batch == 0 {
            return Err(PipelineError::Config(
                "sentences_per_batch must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(PipelineError::Config(
                "fuzzy_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("document {doc_id}: {source}")]
    Format {
        doc_id: String,
        #[source]
        source: FormatError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    /// Context size the model accepts, in the backend's own unit.
    pub max_context: Option<usize>,
    /// The backend cannot serve concurrent calls.
    pub single_flight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationRequest<'a> {
    pub doc_id: &'a str,
    pub window_index: usize,
    pub prompt: &'a str,
    /// The unannotated batch text embedded in the prompt.
    pub input: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    /// Worth another attempt.
    pub retryable: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }
}

pub trait ModelBackend {
    fn info(&self) -> BackendInfo;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        (**self).generate(request)
    }
}

/// Answers every window with its input, unannotated.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyBackend;

impl ModelBackend for EmptyBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "empty".into(),
            max_context: None,
            single_flight: false,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        Ok(request.input.into())
    }
}

/// Answers every window with the gold completion of the training export.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    completions: BTreeMap<(String, usize), String>,
}

impl OracleBackend {
    pub fn new<'a>(
        gold: impl IntoIterator<Item = &'a Document>,
        cfg: &PipelineConfig,
    ) -> Result<Self, PipelineError> {
        let mut completions = BTreeMap::new();
        for doc in gold {
            for pair in export_training_pairs(doc, cfg)? {
                completions.insert((pair.doc_id, pair.window_index), pair.completion);
            }
        }
        Ok(Self { completions })
    }
}

impl ModelBackend for OracleBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "oracle".into(),
            max_context: None,
            single_flight: false,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        self.completions
            .get(&(String::from(request.doc_id), request.window_index))
            .cloned()
            .ok_or_else(|| {
                BackendError::fatal(format!(
                    "no gold completion for {} window {}",
                    request.doc_id, request.window_index
                ))
            })
    }
}

/// Consecutive sentence ranges of at most `per_batch` sentences.
pub fn batches(n_sentences: usize, per_batch: usize) -> Vec<Range<usize>> {
    let per_batch = per_batch.max(1);
    (0..n_sentences)
        .step_by(per_batch)
        .map(|start| start..(start + per_batch).min(n_sentences))
        .collect()
}

/// The longest suffix of `text` that fits in `budget` words, cut between
/// tokens so every tag stays with its token. Closing tags whose opening tag
/// was cut off are removed.
pub fn truncate_context(text: &AnnotatedText, budget: usize) -> AnnotatedText {
    let n = text.tokens.len();
    let mut widths: Vec<usize> = alloc::vec![1; n];
    for e in &text.events {
        if let Some(w) = widths.get_mut(e.anchor) {
            *w += text.format.tag_width(&e.kind);
        }
    }
    let mut start = n;
    let mut used = 0;
    while start > 0 && used + widths[start - 1] <= budget {
        used += widths[start - 1];
        start -= 1;
    }

    let mut depth = 0usize;
    let mut events = Vec::new();
    for e in text
        .events
        .iter()
        .filter(|e| e.anchor >= start && e.anchor < n)
    {
        match e.kind {
            TagKind::Open(_) => depth += 1,
            TagKind::Close if depth == 0 => continue,
            TagKind::Close => depth -= 1,
            _ => {}
        }
        let mut e = e.clone();
        e.anchor -= start;
        events.push(e);
    }
    AnnotatedText {
        tokens: text.tokens[start..].to_vec(),
        events,
        breaks: text
            .breaks
            .iter()
            .filter(|&&b| b > start)
            .map(|b| b - start)
            .collect(),
        format: text.format,
    }
}

fn allowed_tags(format: FormatKind) -> (&'static str, &'static str) {
    match format {
        FormatKind::Crac => (
            "<FirstToken>|[eN <EntitySpan> <LastToken>|eN] or <Token>|[eN]",
            "<ZeroMentionHead> ##|[eN]",
        ),
        FormatKind::ExplicitXml => (
            "<ent id=COREF_N> <EntitySpan> </ent>",
            "<ZeroMentionHead> <zero_ent id=COREF_N>",
        ),
        FormatKind::MinimalXml => ("<entN> <EntitySpan> </ent>", "<ZeroMentionHead> <zeroN>"),
        FormatKind::HeadwordXml => ("<EntityHead> <entN>", "<ZeroMentionHead> <zeroN>"),
    }
}

pub const EMPTY_CONTEXT: &str = "(none)";

/// The annotation prompt, ending with the output header and a newline.
pub fn build_prompt(context: &str, batch: &str, format: FormatKind) -> String {
    let (entities, zeros) = allowed_tags(format);
    let context = if context.trim().is_empty() {
        EMPTY_CONTEXT
    } else {
        context.trim_end()
    };
    format!(
        "TASK: COREFERENCE ANNOTATION\n\
         Annotate mentions and zero anaphora. Do not modify the input text.\n\
         \n\
         ALLOWED TAGS\n\
         - Entities: {entities}\n\
         - Zeros: {zeros}\n\
         \n\
         PREVIOUS CONTEXT\n\
         {context}\n\
         \n\
         INPUT TO ANNOTATE\n\
         {batch}\n\
         \n\
         ANNOTATED OUTPUT\n",
        batch = batch.trim_end(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub doc_id: String,
    pub window_index: usize,
    pub prompt: String,
    pub completion: String,
}

/// A window as presented to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub sentences: Range<usize>,
    /// Context with local indices.
    pub context: AnnotatedText,
    pub map: IdMap,
}

fn format_error(doc: &Document, source: FormatError) -> PipelineError {
    PipelineError::Format {
        doc_id: doc.doc_id.clone(),
        source,
    }
}

/// Context for the window covering `sentences`, localized through `map`.
fn context_window(
    doc: &Document,
    index: usize,
    sentences: Range<usize>,
    cfg: &PipelineConfig,
    map: IdMap,
) -> Result<Window, PipelineError> {
    let prefix = encode(doc, 0..sentences.start, cfg.format, |id| Some(id.into()))
        .map_err(|e| format_error(doc, e))?;
    let visible = truncate_context(&prefix.text, cfg.context_budget);
    let mut map = map;
    if cfg.reindex {
        map = IdMap::default();
    }
    let context = localize_into(&visible, &mut map);
    Ok(Window {
        index,
        sentences,
        context,
        map,
    })
}

/// Prompts and gold completions for every window of `doc`.
pub fn export_training_pairs(
    doc: &Document,
    cfg: &PipelineConfig,
) -> Result<Vec<TrainingPair>, PipelineError> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    let mut doc_map = IdMap::default();
    for (index, sentences) in batches(doc.sentences.len(), cfg.sentences_per_batch)
        .into_iter()
        .enumerate()
    {
        let mut window = context_window(doc, index, sentences.clone(), cfg, doc_map.clone())?;
        let gold = encode(doc, sentences.clone(), cfg.format, |id| Some(id.into()))
            .map_err(|e| format_error(doc, e))?;
        let n_context = window.map.n_context;
        let completion = localize_into(&gold.text, &mut window.map);
        window.map.n_context = n_context;
        let plain = AnnotatedText::plain(
            gold.text.tokens.clone(),
            gold.text.breaks.clone(),
            cfg.format,
        );
        pairs.push(TrainingPair {
            doc_id: doc.doc_id.clone(),
            window_index: index,
            prompt: build_prompt(&window.context.render(), &plain.render(), cfg.format),
            completion: completion.render(),
        });
        if !cfg.reindex {
            doc_map = window.map;
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDiagnostic {
    pub window_index: usize,
    #[serde(flatten)]
    pub diagnostic: Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub doc_id: String,
    pub window_index: usize,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub document: Document,
    pub diagnostics: Vec<WindowDiagnostic>,
    /// Windows left unannotated after the backend kept failing.
    pub failed_windows: Vec<usize>,
    /// Raw backend answers, for replay.
    pub completions: Vec<Completion>,
}

fn generate_with_retries<B: ModelBackend + ?Sized>(
    backend: &B,
    request: &GenerationRequest<'_>,
    max_retries: u32,
) -> (Result<String, BackendError>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut attempt = 0;
    loop {
        match backend.generate(request) {
            Ok(text) => return (Ok(text), diags),
            Err(e) => {
                diags.push(Diagnostic::new(
                    DiagnosticKind::BackendFailure,
                    None,
                    format!("attempt {}: {}", attempt + 1, e.message),
                ));
                if !e.retryable || attempt >= max_retries {
                    return (Err(e), diags);
                }
                attempt += 1;
            }
        }
    }
}

/// Adds predicted mentions to `doc`. Mentions already present are dropped
/// with a diagnostic; zero mentions get their empty node created if needed.
pub fn merge_mentions(doc: &mut Document, mentions: Vec<Mention>) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for m in mentions {
        if doc.mentions().any(|x| *x == m) {
            diags.push(Diagnostic::new(
                DiagnosticKind::DuplicateMention,
                None,
                format!("duplicate mention of {} at {}", m.chain_id, m.head),
            ));
            continue;
        }
        if m.is_zero() {
            let sentence = &mut doc.sentences[m.sentence];
            while sentence.node(m.head).is_none() {
                let k = sentence.next_empty_index(m.head.word);
                sentence.insert_empty_node(Token::new(NodeId::empty(m.head.word, k), "_"));
            }
        }
        doc.add_mention(m);
    }
    diags
}

/// Annotates `doc` window by window. Existing chains in `doc` are ignored.
pub fn annotate_document<B: ModelBackend + ?Sized>(
    doc: &Document,
    backend: &B,
    cfg: &PipelineConfig,
) -> Result<Annotation, PipelineError> {
    cfg.validate()?;
    let mut pred = doc.without_chains();
    let bare = pred.clone();
    let mut alloc = IdAllocator::default();
    let mut doc_map = IdMap::default();
    let mut diagnostics = Vec::new();
    let mut failed_windows = Vec::new();
    let mut completions = Vec::new();

    for (index, sentences) in batches(doc.sentences.len(), cfg.sentences_per_batch)
        .into_iter()
        .enumerate()
    {
        let mut window = context_window(&pred, index, sentences.clone(), cfg, doc_map.clone())?;
        let batch: EncodedText = encode(&bare, sentences, cfg.format, |id| Some(id.into()))
            .map_err(|e| format_error(doc, e))?;
        let input = batch.text.render();
        let prompt = build_prompt(&window.context.render(), &input, cfg.format);
        let request = GenerationRequest {
            doc_id: &doc.doc_id,
            window_index: index,
            prompt: &prompt,
            input: &input,
        };
        let (result, attempts) = generate_with_retries(backend, &request, cfg.max_retries);
        let mut window_diags = attempts;
        let completion = match result {
            Ok(c) => c,
            Err(_) => {
                failed_windows.push(index);
                diagnostics.extend(window_diags.into_iter().map(|diagnostic| WindowDiagnostic {
                    window_index: index,
                    diagnostic,
                }));
                continue;
            }
        };
        window_diags.clear();

        let (predicted, token_map) = if cfg.on_the_fly_clean {
            let cleaned = clean_with(&input, &completion, cfg.format, cfg.fuzzy_threshold);
            window_diags.extend(cleaned.diagnostics);
            (cleaned.text, batch.token_map_partial())
        } else {
            let (decoded, d) = decode(&completion, cfg.format);
            window_diags.extend(d);
            let map: Vec<Option<TokenRef>> = (0..decoded.tokens.len())
                .map(|i| batch.token_map.get(i).copied())
                .collect();
            (decoded, map)
        };
        let (global, d) = globalize(&predicted, &mut window.map, &mut alloc);
        window_diags.extend(d);
        let (mentions, d) = events_to_mentions(&global, &token_map, &pred);
        window_diags.extend(d);
        window_diags.extend(merge_mentions(&mut pred, mentions));
        diagnostics.extend(window_diags.into_iter().map(|diagnostic| WindowDiagnostic {
            window_index: index,
            diagnostic,
        }));
        completions.push(Completion {
            doc_id: doc.doc_id.clone(),
            window_index: index,
            completion,
        });
        if !cfg.reindex {
            doc_map = window.map;
        }
    }
    pred.normalize();
    Ok(Annotation {
        document: pred,
        diagnostics,
        failed_windows,
        completions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{Side, TagEvent};
    use alloc::vec;

    #[test]
    fn batch_partition() {
        assert_eq!(batches(10, 4), vec![0..4, 4..8, 8..10]);
        assert!(batches(0, 4).is_empty());
        assert_eq!(batches(3, 6), vec![0..3]);
    }

    #[test]
    fn prompt_with_empty_context() {
        let p = build_prompt("", "a b", FormatKind::HeadwordXml);
        assert!(p.contains("PREVIOUS CONTEXT\n(none)\n"));
        assert!(p.contains("- Entities: <EntityHead> <entN>\n- Zeros: <ZeroMentionHead> <zeroN>\n"));
        assert!(p.starts_with("TASK: COREFERENCE ANNOTATION\nAnnotate mentions and zero anaphora. Do not modify the input text.\n"));
        assert!(p.ends_with("INPUT TO ANNOTATE\na b\n\nANNOTATED OUTPUT\n"));
    }

    #[test]
    fn truncation_keeps_tags_with_tokens() {
        let (t, _) = decode(
            "<ent0> a b </ent> c <ent1> d </ent>",
            FormatKind::MinimalXml,
        );
        let cut = truncate_context(&t, 4);
        assert_eq!(cut.render(), "c <ent1> d </ent>");
        assert_eq!(truncate_context(&t, 5).render(), "c <ent1> d </ent>");
        let cut = truncate_context(&t, 6);
        assert_eq!(cut.render(), "b c <ent1> d </ent>");
        assert!(cut.word_count() <= 6);
        assert_eq!(truncate_context(&t, 0).tokens.len(), 0);
        assert_eq!(truncate_context(&t, 100), t);
    }

    #[test]
    fn truncation_drops_orphan_close() {
        let mut t =
            AnnotatedText::plain(vec!["a".into(), "b".into()], vec![], FormatKind::MinimalXml);
        t.events = vec![
            TagEvent::new(TagKind::Open("0".into()), 0, Side::Before),
            TagEvent::new(TagKind::Close, 1, Side::After),
        ];
        assert_eq!(truncate_context(&t, 2).render(), "b");
    }

    #[test]
    fn empty_backend_annotates_nothing() {
        let mut doc = Document::new("d");
        let mut s = crate::conllu::Sentence::default();
        s.tokens
            .push(Token::new(crate::conllu::NodeId::word(1), "x"));
        doc.sentences.push(s);
        let out = annotate_document(&doc, &EmptyBackend, &PipelineConfig::small()).unwrap();
        assert!(out.document.chains.is_empty());
        assert!(out.failed_windows.is_empty());
    }

    #[test]
    fn presets() {
        assert_eq!(
            (
                PipelineConfig::small().sentences_per_batch,
                PipelineConfig::small().context_budget
            ),
            (4, 250)
        );
        assert_eq!(PipelineConfig::large_train().context_budget, 1024);
        assert_eq!(PipelineConfig::large_infer().context_budget, 3072);
        assert!(PipelineConfig {
            sentences_per_batch: 0,
            ..PipelineConfig::small()
        }
        .validate()
        .is_err());
    }
}
