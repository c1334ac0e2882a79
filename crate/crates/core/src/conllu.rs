//! CorefUD-flavoured CoNLL-U: object model, parser and serializer.
//!
//! Coreference lives in the `Entity=` MISC attribute using CorefUD bracket
//! notation. Only the entity id and the head-index dash field are
//! interpreted; every other dash field is carried opaquely so that it
//! survives a parse/serialize round trip.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dash-field layout assumed when a file carries no `# global.Entity` header.
pub const DEFAULT_ENTITY_LAYOUT: &str = "eid-etype-head-other";

/// Position of a node inside its sentence.
///
/// Surface tokens have `sub == 0`; empty nodes use decimal ids `word.sub`
/// with `sub >= 1`, where `word` is the surface token they follow. The
/// derived ordering is CoNLL-U line order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub word: usize,
    pub sub: usize,
}

impl NodeId {
    pub const fn word(word: usize) -> Self {
        Self { word, sub: 0 }
    }

    pub const fn empty(anchor: usize, k: usize) -> Self {
        Self {
            word: anchor,
            sub: k,
        }
    }

    pub const fn is_empty(&self) -> bool {
        self.sub != 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sub == 0 {
            write!(f, "{}", self.word)
        } else {
            write!(f, "{}.{}", self.word, self.sub)
        }
    }
}

impl FromStr for NodeId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.split_once('.') {
            Some((w, k)) => {
                let word = w.parse().map_err(|_| ())?;
                let sub: usize = k.parse().map_err(|_| ())?;
                if sub == 0 {
                    return Err(());
                }
                Ok(NodeId::empty(word, sub))
            }
            None => {
                let word: usize = s.parse().map_err(|_| ())?;
                if word == 0 {
                    return Err(());
                }
                Ok(NodeId::word(word))
            }
        }
    }
}

/// A node addressed at document level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenRef {
    pub sentence: usize,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: NodeId,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// Governing surface token, `Some(0)` for the root, `None` when the
    /// column is `_` (always the case for empty nodes).
    pub dep_head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    /// MISC items other than `Entity=`, verbatim and in file order.
    pub misc: Vec<String>,
}

impl Token {
    /// A token with `_` in every column except id and form.
    pub fn new(id: NodeId, form: impl Into<String>) -> Self {
        let underscore = || String::from("_");
        Self {
            id,
            form: form.into(),
            lemma: underscore(),
            upos: underscore(),
            xpos: underscore(),
            feats: underscore(),
            dep_head: None,
            deprel: underscore(),
            deps: underscore(),
            misc: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.id.is_empty()
    }
}

/// A multiword-token range line (`1-2`), passed through untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiwordToken {
    pub first: usize,
    pub last: usize,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub sent_id: String,
    pub text: Option<String>,
    /// Other comment lines, verbatim including the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub empty_nodes: Vec<Token>,
    pub multiword: Vec<MultiwordToken>,
}

impl Sentence {
    pub fn node(&self, id: NodeId) -> Option<&Token> {
        if id.is_empty() {
            self.empty_nodes.iter().find(|t| t.id == id)
        } else {
            self.tokens.get(id.word.checked_sub(1)?)
        }
    }

    /// All nodes (surface and empty) in line order.
    pub fn nodes(&self) -> Vec<&Token> {
        let mut out: Vec<&Token> = Vec::with_capacity(self.tokens.len() + self.empty_nodes.len());
        let mut empties = self.empty_nodes.iter().peekable();
        while let Some(e) = empties.next_if(|e| e.id.word == 0) {
            out.push(e);
        }
        for tok in &self.tokens {
            out.push(tok);
            while let Some(e) = empties.next_if(|e| e.id.word == tok.id.word) {
                out.push(e);
            }
        }
        out.extend(empties);
        out
    }

    /// Node ids covered by `span`, in line order.
    pub fn span_nodes(&self, span: &Span) -> Vec<NodeId> {
        self.nodes()
            .into_iter()
            .map(|t| t.id)
            .filter(|id| *id >= span.start && *id <= span.end)
            .collect()
    }

    /// Next free `k` for an empty node anchored after surface token `anchor`.
    pub fn next_empty_index(&self, anchor: usize) -> usize {
        self.empty_nodes
            .iter()
            .filter(|e| e.id.word == anchor)
            .map(|e| e.id.sub)
            .max()
            .unwrap_or(0)
            + 1
    }

    /// Inserts an empty node keeping `empty_nodes` sorted.
    pub fn insert_empty_node(&mut self, node: Token) {
        let at = self.empty_nodes.partition_point(|e| e.id < node.id);
        self.empty_nodes.insert(at, node);
    }

    pub fn surface_text(&self) -> String {
        let forms: Vec<&str> = self.tokens.iter().map(|t| t.form.as_str()).collect();
        forms.join(" ")
    }
}

/// An inclusive range of nodes in line order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: NodeId,
    pub end: NodeId,
}

impl Span {
    pub const fn new(start: NodeId, end: NodeId) -> Self {
        Self { start, end }
    }

    pub const fn single(node: NodeId) -> Self {
        Self {
            start: node,
            end: node,
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.start <= node && node <= self.end
    }

    /// True when the two spans overlap without one containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        let (a, b) = if self.start <= other.start {
            (self, other)
        } else {
            (other, self)
        };
        a.start < b.start && b.start <= a.end && a.end < b.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mention {
    pub chain_id: String,
    pub sentence: usize,
    pub fragments: Vec<Span>,
    pub head: NodeId,
    /// Dash fields other than the entity id and the head index, trailing
    /// empty fields trimmed.
    pub attrs: Vec<String>,
}

impl Mention {
    pub fn new(
        chain_id: impl Into<String>,
        sentence: usize,
        fragments: Vec<Span>,
        head: NodeId,
    ) -> Self {
        Self {
            chain_id: chain_id.into(),
            sentence,
            fragments,
            head,
            attrs: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.head.is_empty()
    }

    pub fn head_ref(&self) -> TokenRef {
        TokenRef {
            sentence: self.sentence,
            node: self.head,
        }
    }

    /// The fragment holding the head; discontinuous mentions are reduced to
    /// it for inline encoding.
    pub fn head_fragment(&self) -> Span {
        self.fragments
            .iter()
            .copied()
            .find(|f| f.contains(self.head))
            .unwrap_or(Span::single(self.head))
    }

    fn order_key(&self) -> (usize, NodeId, Option<Span>) {
        (self.sentence, self.head, self.fragments.first().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub id: String,
    pub mentions: Vec<Mention>,
}

impl Chain {
    pub fn is_singleton(&self) -> bool {
        self.mentions.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub doc_id: String,
    /// `# global.Entity` layout in effect for this document, echoed on output.
    pub global_entity: Option<String>,
    pub sentences: Vec<Sentence>,
    pub chains: BTreeMap<String, Chain>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            ..Self::default()
        }
    }

    pub fn add_mention(&mut self, mention: Mention) {
        let chain = self
            .chains
            .entry(mention.chain_id.clone())
            .or_insert_with(|| Chain {
                id: mention.chain_id.clone(),
                mentions: Vec::new(),
            });
        chain.mentions.push(mention);
    }

    /// Sorts chain mentions into document order and drops empty chains.
    pub fn normalize(&mut self) {
        self.chains.retain(|_, c| !c.mentions.is_empty());
        for chain in self.chains.values_mut() {
            chain
                .mentions
                .sort_by(|a, b| a.order_key().cmp(&b.order_key()).then_with(|| a.cmp(b)));
        }
    }

    pub fn mentions(&self) -> impl Iterator<Item = &Mention> {
        self.chains.values().flat_map(|c| c.mentions.iter())
    }

    pub fn surface_token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Copy of the document with all coreference removed.
    pub fn without_chains(&self) -> Document {
        Document {
            doc_id: self.doc_id.clone(),
            global_entity: self.global_entity.clone(),
            sentences: self.sentences.clone(),
            chains: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub id: String,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub datasets: Vec<Dataset>,
}

impl Corpus {
    pub fn add_dataset(&mut self, dataset: Dataset) -> Result<(), ConlluError> {
        if self.datasets.iter().any(|d| d.id == dataset.id) {
            return Err(ConlluError::DuplicateDataset(dataset.id));
        }
        self.datasets.push(dataset);
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("document {doc_id}: unbalanced Entity bracket for {chain_id}")]
    UnbalancedEntity { doc_id: String, chain_id: String },
    #[error("line {line}: duplicate sent_id {sent_id}")]
    DuplicateSentId { line: usize, sent_id: String },
    #[error("document {doc_id}: crossing mentions {first} and {second}")]
    CrossingMentions {
        doc_id: String,
        first: String,
        second: String,
    },
    #[error("document {doc_id}: mention of {chain_id} in sentence {sentence} is not resolvable: {reason}")]
    InvalidMention {
        doc_id: String,
        chain_id: String,
        sentence: usize,
        reason: String,
    },
    #[error("duplicate dataset id {0}")]
    DuplicateDataset(String),
}

/// Something suspicious that did not stop parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParseOutput {
    pub documents: Vec<Document>,
    pub warnings: Vec<ParseWarning>,
}

/// Head of a mention: the annotated head when there is one, else the node
/// of `nodes` whose dependency head lies outside the span (leftmost on
/// ties). Empty nodes count as pointing outside.
pub fn mention_head(sentence: &Sentence, nodes: &[NodeId], annotated: Option<NodeId>) -> NodeId {
    if let Some(h) = annotated.filter(|h| nodes.contains(h)) {
        return h;
    }
    let points_outside = |id: &NodeId| match sentence.node(*id).and_then(|t| t.dep_head) {
        Some(0) | None => true,
        Some(h) => !nodes.contains(&NodeId::word(h)),
    };
    let surface: Vec<NodeId> = nodes.iter().copied().filter(|n| !n.is_empty()).collect();
    let pool = if surface.is_empty() {
        nodes
    } else {
        &surface[..]
    };
    pool.iter()
        .copied()
        .find(points_outside)
        .or_else(|| pool.first().copied())
        .unwrap_or(NodeId::word(1))
}

fn head_field_index(layout: Option<&str>) -> usize {
    layout
        .unwrap_or(DEFAULT_ENTITY_LAYOUT)
        .split('-')
        .position(|f| f.trim() == "head")
        .unwrap_or(2)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Bracket<'a> {
    Open(&'a str),
    Single(&'a str),
    Close(&'a str),
}

fn tokenize_entity(value: &str) -> Result<Vec<Bracket<'_>>, String> {
    let bytes = value.as_bytes();
    let mut items = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'(' {
            let rest = &value[i + 1..];
            let stop = rest.find(['(', ')']).unwrap_or(rest.len());
            let body = &rest[..stop];
            if body.is_empty() {
                return Err(format!("empty entity bracket in {value:?}"));
            }
            if rest[stop..].starts_with(')') {
                items.push(Bracket::Single(body));
                i += 1 + stop + 1;
            } else {
                items.push(Bracket::Open(body));
                i += 1 + stop;
            }
        } else {
            let rest = &value[i..];
            let stop = rest
                .find(')')
                .ok_or_else(|| format!("unterminated entity close in {value:?}"))?;
            let body = &rest[..stop];
            if body.is_empty() || body.contains('(') {
                return Err(format!("malformed entity close in {value:?}"));
            }
            items.push(Bracket::Close(body));
            i += stop + 1;
        }
    }
    Ok(items)
}

/// `e5[1/2]` -> (`e5`, Some((1, 2)))
fn split_fragment_marker(id: &str) -> (&str, Option<(usize, usize)>) {
    if let Some(open) = id.find('[') {
        if let Some(inner) = id[open + 1..].strip_suffix(']') {
            if let Some((i, n)) = inner.split_once('/') {
                if let (Ok(i), Ok(n)) = (i.parse(), n.parse()) {
                    return (&id[..open], Some((i, n)));
                }
            }
        }
    }
    (id, None)
}

struct OpenBracket {
    key: String,
    fields: Vec<String>,
    nodes: Vec<TokenRef>,
    line: usize,
}

struct PartialMention {
    fields: Vec<String>,
    parts: BTreeMap<usize, Vec<TokenRef>>,
    expected: usize,
    line: usize,
}

struct DocBuilder {
    doc: Document,
    open: Vec<OpenBracket>,
    partial: BTreeMap<String, PartialMention>,
    finished: Vec<(Vec<String>, Vec<TokenRef>, usize)>,
}

impl DocBuilder {
    fn new(doc_id: String, global_entity: Option<String>) -> Self {
        Self {
            doc: Document {
                doc_id,
                global_entity,
                ..Document::default()
            },
            open: Vec::new(),
            partial: BTreeMap::new(),
            finished: Vec::new(),
        }
    }

    fn complete_fragment(
        &mut self,
        key: &str,
        fields: Vec<String>,
        nodes: Vec<TokenRef>,
        line: usize,
    ) {
        let (eid, marker) = split_fragment_marker(key);
        match marker {
            Some((i, n)) if n > 1 => {
                let entry = self
                    .partial
                    .entry(eid.to_string())
                    .or_insert_with(|| PartialMention {
                        fields: Vec::new(),
                        parts: BTreeMap::new(),
                        expected: n,
                        line,
                    });
                if entry.fields.len() < fields.len() {
                    entry.fields = fields;
                }
                entry.parts.insert(i, nodes);
                if entry.parts.len() >= entry.expected {
                    let done = self.partial.remove(eid).expect("present");
                    let all: Vec<TokenRef> = done.parts.into_values().flatten().collect();
                    let mut fields = done.fields;
                    if fields.is_empty() {
                        fields.push(eid.to_string());
                    }
                    fields[0] = eid.to_string();
                    self.finished.push((fields, all, done.line));
                }
            }
            _ => {
                let mut fields = fields;
                if fields.is_empty() {
                    fields.push(eid.to_string());
                }
                fields[0] = eid.to_string();
                self.finished.push((fields, nodes, line));
            }
        }
    }

    fn process_node(
        &mut self,
        node: TokenRef,
        entity: Option<&str>,
        line: usize,
    ) -> Result<(), ConlluError> {
        for open in &mut self.open {
            open.nodes.push(node);
        }
        let Some(value) = entity else { return Ok(()) };
        let items =
            tokenize_entity(value).map_err(|message| ConlluError::Syntax { line, message })?;
        for item in items {
            match item {
                Bracket::Open(body) => {
                    let fields: Vec<String> = body.split('-').map(String::from).collect();
                    self.open.push(OpenBracket {
                        key: fields[0].clone(),
                        fields,
                        nodes: alloc::vec![node],
                        line,
                    });
                }
                Bracket::Single(body) => {
                    let fields: Vec<String> = body.split('-').map(String::from).collect();
                    let key = fields[0].clone();
                    self.complete_fragment(&key, fields, alloc::vec![node], line);
                }
                Bracket::Close(key) => {
                    let at = self
                        .open
                        .iter()
                        .rposition(|o| o.key == key)
                        .ok_or_else(|| ConlluError::UnbalancedEntity {
                            doc_id: self.doc.doc_id.clone(),
                            chain_id: split_fragment_marker(key).0.to_string(),
                        })?;
                    let open = self.open.remove(at);
                    self.complete_fragment(&open.key, open.fields, open.nodes, open.line);
                }
            }
        }
        Ok(())
    }

    fn finish(mut self, warnings: &mut Vec<ParseWarning>) -> Result<Document, ConlluError> {
        if let Some(open) = self.open.first() {
            return Err(ConlluError::UnbalancedEntity {
                doc_id: self.doc.doc_id.clone(),
                chain_id: split_fragment_marker(&open.key).0.to_string(),
            });
        }
        for (eid, partial) in core::mem::take(&mut self.partial) {
            warnings.push(ParseWarning {
                line: partial.line,
                message: format!(
                    "discontinuous mention of {eid} has {} of {} fragments",
                    partial.parts.len(),
                    partial.expected
                ),
            });
            let all: Vec<TokenRef> = partial.parts.into_values().flatten().collect();
            let mut fields = partial.fields;
            if fields.is_empty() {
                fields.push(eid.clone());
            }
            fields[0] = eid;
            self.finished.push((fields, all, partial.line));
        }
        let head_at = head_field_index(self.doc.global_entity.as_deref());
        for (fields, nodes, line) in core::mem::take(&mut self.finished) {
            let mention = build_mention(&self.doc, fields, nodes, head_at, line, warnings);
            self.doc.add_mention(mention);
        }
        self.doc.normalize();
        Ok(self.doc)
    }
}

fn build_mention(
    doc: &Document,
    mut fields: Vec<String>,
    mut nodes: Vec<TokenRef>,
    head_at: usize,
    line: usize,
    warnings: &mut Vec<ParseWarning>,
) -> Mention {
    nodes.sort();
    nodes.dedup();
    let chain_id = fields[0].clone();
    let annotated = fields
        .get(head_at)
        .and_then(|h| h.parse::<usize>().ok())
        .filter(|h| *h >= 1)
        .and_then(|h| nodes.get(h - 1).copied());
    if head_at < fields.len() {
        fields.remove(head_at);
    }
    fields.remove(0);
    while fields.last().is_some_and(|f| f.is_empty()) {
        fields.pop();
    }

    let first_sentence = nodes[0].sentence;
    let sentence_idx = annotated.map(|h| h.sentence).unwrap_or(first_sentence);
    if nodes.iter().any(|n| n.sentence != sentence_idx) {
        warnings.push(ParseWarning {
            line,
            message: format!("mention of {chain_id} crosses a sentence boundary; kept the part in sentence {sentence_idx}"),
        });
        nodes.retain(|n| n.sentence == sentence_idx);
    }
    let sentence = &doc.sentences[sentence_idx];
    let ids: Vec<NodeId> = nodes.iter().map(|n| n.node).collect();

    // Contiguous runs in line order become fragments.
    let order: Vec<NodeId> = sentence.nodes().into_iter().map(|t| t.id).collect();
    let mut fragments: Vec<Span> = Vec::new();
    let mut prev_pos: Option<usize> = None;
    for id in &ids {
        let pos = order.iter().position(|o| o == id).unwrap_or(0);
        match (fragments.last_mut(), prev_pos) {
            (Some(last), Some(p)) if pos == p + 1 => last.end = *id,
            _ => fragments.push(Span::single(*id)),
        }
        prev_pos = Some(pos);
    }

    let head = mention_head(sentence, &ids, annotated.map(|h| h.node));
    Mention {
        chain_id,
        sentence: sentence_idx,
        fragments,
        head,
        attrs: fields,
    }
}

fn syntax(line: usize, message: impl Into<String>) -> ConlluError {
    ConlluError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_head(col: &str, line: usize) -> Result<Option<usize>, ConlluError> {
    if col == "_" {
        return Ok(None);
    }
    col.parse()
        .map(Some)
        .map_err(|_| syntax(line, format!("invalid HEAD {col:?}")))
}

struct SentenceBuilder {
    sentence: Sentence,
    entities: Vec<(NodeId, Option<String>, usize)>,
    first_line: usize,
}

impl SentenceBuilder {
    fn new() -> Self {
        Self {
            sentence: Sentence::default(),
            entities: Vec::new(),
            first_line: 0,
        }
    }

    fn is_empty(&self) -> bool {
        self.sentence.tokens.is_empty() && self.sentence.empty_nodes.is_empty()
    }
}

/// Parses CoNLL-U text into documents.
///
/// Sentences that appear before any `# newdoc` line form a document named
/// `doc1`, `doc2`, ... by order.
pub fn parse_conllu(text: &str) -> Result<ParseOutput, ConlluError> {
    let mut out = ParseOutput::default();
    let mut global: Option<String> = None;
    let mut current: Option<DocBuilder> = None;
    let mut sent = SentenceBuilder::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending_comments: Vec<String> = Vec::new();
    let mut pending_sent_id: Option<String> = None;
    let mut pending_text: Option<String> = None;
    let mut generated_docs = 0usize;

    let flush_sentence = |sent: &mut SentenceBuilder,
                          current: &mut Option<DocBuilder>,
                          global: &Option<String>,
                          generated_docs: &mut usize,
                          out: &mut ParseOutput|
     -> Result<(), ConlluError> {
        if sent.is_empty() {
            return Ok(());
        }
        let builder = current.get_or_insert_with(|| {
            *generated_docs += 1;
            DocBuilder::new(format!("doc{generated_docs}"), global.clone())
        });
        let s_idx = builder.doc.sentences.len();
        let done = core::mem::replace(sent, SentenceBuilder::new());
        let mut sentence = done.sentence;
        if sentence.sent_id.is_empty() {
            sentence.sent_id = format!("{}-{}", builder.doc.doc_id, s_idx + 1);
        }
        sentence.empty_nodes.sort_by_key(|t| t.id);
        for tok in &sentence.empty_nodes {
            if let Some((gov, _)) = tok.deps.split_once(':') {
                if gov.contains('.') {
                    out.warnings.push(ParseWarning {
                        line: done.first_line,
                        message: format!(
                            "empty node {} in sentence {} is governed by elided node {gov}",
                            tok.id, sentence.sent_id
                        ),
                    });
                }
            }
        }
        builder.doc.sentences.push(sentence);
        let mut entities = done.entities;
        entities.sort_by_key(|(id, _, _)| *id);
        for (id, entity, line) in entities {
            builder.process_node(
                TokenRef {
                    sentence: s_idx,
                    node: id,
                },
                entity.as_deref(),
                line,
            )?;
        }
        Ok(())
    };

    for (idx, raw_line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            flush_sentence(
                &mut sent,
                &mut current,
                &global,
                &mut generated_docs,
                &mut out,
            )?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if !sent.is_empty() {
                flush_sentence(
                    &mut sent,
                    &mut current,
                    &global,
                    &mut generated_docs,
                    &mut out,
                )?;
            }
            let body = comment.trim();
            if let Some(rest) = body.strip_prefix("newdoc") {
                if let Some(b) = current.take() {
                    out.documents.push(b.finish(&mut out.warnings)?);
                }
                let id = rest
                    .trim()
                    .strip_prefix("id")
                    .map(|r| r.trim().trim_start_matches('=').trim());
                let id = match id {
                    Some(id) if !id.is_empty() => id.to_string(),
                    _ => {
                        generated_docs += 1;
                        format!("doc{generated_docs}")
                    }
                };
                current = Some(DocBuilder::new(id, global.clone()));
            } else if let Some(rest) = body.strip_prefix("global.Entity") {
                let layout = rest.trim().trim_start_matches('=').trim().to_string();
                global = Some(layout.clone());
                if let Some(b) = current.as_mut().filter(|b| b.doc.sentences.is_empty()) {
                    b.doc.global_entity = Some(layout);
                }
            } else if let Some(rest) = body.strip_prefix("sent_id") {
                let id = rest.trim().trim_start_matches('=').trim().to_string();
                if seen_ids.insert(id.clone(), line_no).is_some() {
                    return Err(ConlluError::DuplicateSentId {
                        line: line_no,
                        sent_id: id,
                    });
                }
                pending_sent_id = Some(id);
            } else if let Some(rest) = body.strip_prefix("text") {
                let rest = rest.trim_start();
                if let Some(t) = rest.strip_prefix('=') {
                    pending_text = Some(t.strip_prefix(' ').unwrap_or(t).to_string());
                } else {
                    pending_comments.push(line.to_string());
                }
            } else {
                pending_comments.push(line.to_string());
            }
            continue;
        }

        if sent.is_empty() && sent.sentence.multiword.is_empty() {
            sent.first_line = line_no;
            sent.sentence.sent_id = pending_sent_id.take().unwrap_or_default();
            sent.sentence.text = pending_text.take();
            sent.sentence.comments = core::mem::take(&mut pending_comments);
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(syntax(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id_col = cols[0];
        if let Some((a, b)) = id_col.split_once('-') {
            let first = a
                .parse()
                .map_err(|_| syntax(line_no, format!("invalid range id {id_col:?}")))?;
            let last = b
                .parse()
                .map_err(|_| syntax(line_no, format!("invalid range id {id_col:?}")))?;
            sent.sentence.multiword.push(MultiwordToken {
                first,
                last,
                line: line.to_string(),
            });
            continue;
        }
        let id: NodeId = id_col
            .parse()
            .map_err(|_| syntax(line_no, format!("invalid token id {id_col:?}")))?;
        let dep_head = parse_head(cols[6], line_no)?;
        let mut misc = Vec::new();
        let mut entity = None;
        if cols[9] != "_" {
            for item in cols[9].split('|') {
                match item.strip_prefix("Entity=") {
                    Some(v) => entity = Some(v.to_string()),
                    None => misc.push(item.to_string()),
                }
            }
        }
        let token = Token {
            id,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            dep_head,
            deprel: cols[7].to_string(),
            deps: cols[8].to_string(),
            misc,
        };
        if id.is_empty() {
            let n = sent.sentence.tokens.len();
            if id.word != n {
                return Err(syntax(
                    line_no,
                    format!("empty node {id} does not follow token {}", id.word),
                ));
            }
            let prev_k = sent
                .sentence
                .empty_nodes
                .iter()
                .filter(|e| e.id.word == id.word)
                .map(|e| e.id.sub)
                .max()
                .unwrap_or(0);
            if id.sub <= prev_k {
                return Err(syntax(
                    line_no,
                    format!("empty node {id} is out of order or duplicated"),
                ));
            }
            sent.sentence.empty_nodes.push(token);
        } else {
            let expected = sent.sentence.tokens.len() + 1;
            if id.word != expected {
                return Err(syntax(
                    line_no,
                    format!("token id {id} out of sequence, expected {expected}"),
                ));
            }
            if dep_head == Some(id.word) {
                return Err(syntax(line_no, format!("token {id} is its own head")));
            }
            sent.sentence.tokens.push(token);
        }
        sent.entities.push((id, entity, line_no));
    }
    flush_sentence(
        &mut sent,
        &mut current,
        &global,
        &mut generated_docs,
        &mut out,
    )?;
    if let Some(b) = current.take() {
        out.documents.push(b.finish(&mut out.warnings)?);
    }
    Ok(out)
}

fn push_token_line(out: &mut String, tok: &Token, entity: Option<&str>) {
    let head = match tok.dep_head {
        Some(h) => h.to_string(),
        None => String::from("_"),
    };
    let mut misc: Vec<String> = Vec::with_capacity(tok.misc.len() + 1);
    if let Some(e) = entity {
        misc.push(format!("Entity={e}"));
    }
    misc.extend(tok.misc.iter().cloned());
    let misc = if misc.is_empty() {
        String::from("_")
    } else {
        misc.join("|")
    };
    let cols = [
        tok.id.to_string(),
        tok.form.clone(),
        tok.lemma.clone(),
        tok.upos.clone(),
        tok.xpos.clone(),
        tok.feats.clone(),
        head,
        tok.deprel.clone(),
        tok.deps.clone(),
        misc,
    ];
    out.push_str(&cols.join("\t"));
    out.push('\n');
}

fn describe(m: &Mention, f: &Span) -> String {
    format!("{}@{}:{}-{}", m.chain_id, m.sentence, f.start, f.end)
}

/// Bracket strings per node for one sentence.
fn entity_strings(
    doc: &Document,
    s_idx: usize,
    head_at: usize,
) -> Result<BTreeMap<NodeId, String>, ConlluError> {
    let sentence = &doc.sentences[s_idx];
    let mentions: Vec<&Mention> = doc.mentions().filter(|m| m.sentence == s_idx).collect();

    struct Frag<'a> {
        span: Span,
        label: String,
        mention: &'a Mention,
    }
    let mut frags: Vec<Frag<'_>> = Vec::new();
    for m in &mentions {
        let invalid = |reason: &str| ConlluError::InvalidMention {
            doc_id: doc.doc_id.clone(),
            chain_id: m.chain_id.clone(),
            sentence: s_idx,
            reason: reason.to_string(),
        };
        if m.fragments.is_empty() {
            return Err(invalid("no fragments"));
        }
        let mut nodes: Vec<NodeId> = Vec::new();
        for f in &m.fragments {
            if sentence.node(f.start).is_none() || sentence.node(f.end).is_none() || f.start > f.end
            {
                return Err(invalid("fragment outside sentence"));
            }
            nodes.extend(sentence.span_nodes(f));
        }
        let head_pos = nodes
            .iter()
            .position(|n| *n == m.head)
            .ok_or_else(|| invalid("head outside mention"))?;
        let n = m.fragments.len();
        for (i, f) in m.fragments.iter().enumerate() {
            let key = if n > 1 {
                format!("{}[{}/{}]", m.chain_id, i + 1, n)
            } else {
                m.chain_id.clone()
            };
            let label = if i == 0 {
                let mut fields: Vec<String> = alloc::vec![key];
                let mut rest = m.attrs.clone();
                while rest.len() < head_at - 1 {
                    rest.push(String::new());
                }
                rest.insert(head_at - 1, (head_pos + 1).to_string());
                fields.extend(rest);
                fields.join("-")
            } else {
                key
            };
            frags.push(Frag {
                span: *f,
                label,
                mention: m,
            });
        }
    }
    for (i, a) in frags.iter().enumerate() {
        for b in &frags[i + 1..] {
            if a.span.crosses(&b.span) {
                return Err(ConlluError::CrossingMentions {
                    doc_id: doc.doc_id.clone(),
                    first: describe(a.mention, &a.span),
                    second: describe(b.mention, &b.span),
                });
            }
        }
    }

    let mut per_node: BTreeMap<NodeId, String> = BTreeMap::new();
    for node in sentence.nodes() {
        let id = node.id;
        let mut opens: Vec<&Frag<'_>> = frags
            .iter()
            .filter(|f| f.span.start == id && f.span.end != id)
            .collect();
        opens.sort_by_key(|f| core::cmp::Reverse(f.span.end));
        let singles = frags
            .iter()
            .filter(|f| f.span.start == id && f.span.end == id);
        let mut closes: Vec<&Frag<'_>> = frags
            .iter()
            .filter(|f| f.span.end == id && f.span.start != id)
            .collect();
        closes.sort_by_key(|f| core::cmp::Reverse(f.span.start));
        let mut s = String::new();
        for f in opens {
            s.push('(');
            s.push_str(&f.label);
        }
        for f in singles {
            s.push('(');
            s.push_str(&f.label);
            s.push(')');
        }
        for f in closes {
            let key = f.label.split('-').next().unwrap_or_default();
            s.push_str(key);
            s.push(')');
        }
        if !s.is_empty() {
            per_node.insert(id, s);
        }
    }
    Ok(per_node)
}

fn write_document(out: &mut String, doc: &Document, emit_global: bool) -> Result<(), ConlluError> {
    if emit_global {
        if let Some(g) = &doc.global_entity {
            out.push_str("# global.Entity = ");
            out.push_str(g);
            out.push('\n');
        }
    }
    out.push_str("# newdoc id = ");
    out.push_str(&doc.doc_id);
    out.push('\n');
    let head_at = head_field_index(doc.global_entity.as_deref());
    for (s_idx, sentence) in doc.sentences.iter().enumerate() {
        let entities = entity_strings(doc, s_idx, head_at)?;
        out.push_str("# sent_id = ");
        out.push_str(&sentence.sent_id);
        out.push('\n');
        if let Some(t) = &sentence.text {
            out.push_str("# text = ");
            out.push_str(t);
            out.push('\n');
        }
        for c in &sentence.comments {
            out.push_str(c);
            out.push('\n');
        }
        let mut empties = sentence.empty_nodes.iter().peekable();
        while let Some(e) = empties.next_if(|e| e.id.word == 0) {
            push_token_line(out, e, entities.get(&e.id).map(String::as_str));
        }
        for tok in &sentence.tokens {
            for mw in sentence.multiword.iter().filter(|m| m.first == tok.id.word) {
                out.push_str(&mw.line);
                out.push('\n');
            }
            push_token_line(out, tok, entities.get(&tok.id).map(String::as_str));
            while let Some(e) = empties.next_if(|e| e.id.word == tok.id.word) {
                push_token_line(out, e, entities.get(&e.id).map(String::as_str));
            }
        }
        for e in empties {
            push_token_line(out, e, entities.get(&e.id).map(String::as_str));
        }
        out.push('\n');
    }
    Ok(())
}

/// Serializes one document; Entity attributes are regenerated from its chains.
pub fn serialize_conllu(doc: &Document) -> Result<String, ConlluError> {
    let mut out = String::new();
    write_document(&mut out, doc, true)?;
    Ok(out)
}

/// Serializes several documents into one file, echoing `# global.Entity`
/// only where the layout changes.
pub fn serialize_documents(docs: &[Document]) -> Result<String, ConlluError> {
    let mut out = String::new();
    let mut last: Option<&str> = None;
    for doc in docs {
        let g = doc.global_entity.as_deref();
        write_document(&mut out, doc, g.is_some() && g != last)?;
        last = g;
    }
    Ok(out)
}
