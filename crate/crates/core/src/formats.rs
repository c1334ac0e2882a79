//! Inline plaintext annotation formats.
//!
//! Four grammars are supported:
//!
//! | format      | span mention                         | zero mention              |
//! |-------------|--------------------------------------|---------------------------|
//! | `crac`      | `tok|[e1]`, `tok|[e1` ... `tok|e1]`  | `##|[e1]`                 |
//! | `explicit`  | `<ent id=COREF_1> ... </ent>`        | `<zero_ent id=COREF_1>`   |
//! | `minimal`   | `<ent1> ... </ent>`                  | `<zero1>`                 |
//! | `headword`  | `head <ent1>`                        | `<zero1>`                 |
//!
//! Tags are whitespace-delimited atoms and the text is tokenized by
//! splitting on whitespace. Closing tags carry no chain label: the label is
//! recovered from the most recently opened tag. Zero tags follow the token
//! their empty node is anchored to, or precede the first token of a line
//! when the empty node is anchored at position 0.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{mention_head, Document, Mention, NodeId, Span, TokenRef};
use crate::diag::{Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FormatKind {
    #[serde(rename = "crac")]
    Crac,
    #[serde(rename = "explicit", alias = "explicit_xml")]
    ExplicitXml,
    #[serde(rename = "minimal", alias = "minimal_xml")]
    MinimalXml,
    #[serde(rename = "headword", alias = "headword_xml")]
    HeadwordXml,
}

impl FormatKind {
    pub const ALL: [FormatKind; 4] = [
        FormatKind::Crac,
        FormatKind::ExplicitXml,
        FormatKind::MinimalXml,
        FormatKind::HeadwordXml,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FormatKind::Crac => "crac",
            FormatKind::ExplicitXml => "explicit",
            FormatKind::MinimalXml => "minimal",
            FormatKind::HeadwordXml => "headword",
        }
    }

    /// Whether mentions are rendered as spans (open + close tags).
    pub fn is_span_format(&self) -> bool {
        !matches!(self, FormatKind::HeadwordXml)
    }

    /// Number of whitespace words a rendered tag occupies.
    pub fn tag_width(&self, kind: &TagKind) -> usize {
        match (self, kind) {
            (FormatKind::Crac, TagKind::ZeroHead(_)) => 1,
            (FormatKind::Crac, _) => 0,
            (FormatKind::ExplicitXml, TagKind::Open(_) | TagKind::ZeroHead(_)) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown format {0:?} (expected crac, explicit, minimal or headword)")]
pub struct UnknownFormat(pub String);

impl FromStr for FormatKind {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, UnknownFormat> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "crac" => Ok(FormatKind::Crac),
            "explicit" | "explicit_xml" => Ok(FormatKind::ExplicitXml),
            "minimal" | "minimal_xml" => Ok(FormatKind::MinimalXml),
            "headword" | "headword_xml" => Ok(FormatKind::HeadwordXml),
            _ => Err(UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TagKind {
    Open(String),
    Close,
    ZeroHead(String),
    Head(String),
}

impl TagKind {
    pub fn label(&self) -> Option<&str> {
        match self {
            TagKind::Open(l) | TagKind::ZeroHead(l) | TagKind::Head(l) => Some(l),
            TagKind::Close => None,
        }
    }

    pub fn with_label(&self, label: String) -> TagKind {
        match self {
            TagKind::Open(_) => TagKind::Open(label),
            TagKind::ZeroHead(_) => TagKind::ZeroHead(label),
            TagKind::Head(_) => TagKind::Head(label),
            TagKind::Close => TagKind::Close,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagEvent {
    pub kind: TagKind,
    /// Index into [`AnnotatedText::tokens`].
    pub anchor: usize,
    pub side: Side,
}

impl TagEvent {
    pub fn new(kind: TagKind, anchor: usize, side: Side) -> Self {
        Self { kind, anchor, side }
    }

    /// Sort key placing events in text order; ties keep insertion order.
    pub fn position(&self) -> (usize, Side) {
        (self.anchor, self.side)
    }
}

/// A token stream with interleaved tag events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedText {
    pub tokens: Vec<String>,
    pub events: Vec<TagEvent>,
    /// Token indices that start a new line (sentence).
    pub breaks: Vec<usize>,
    pub format: FormatKind,
}

impl AnnotatedText {
    pub fn plain(tokens: Vec<String>, breaks: Vec<usize>, format: FormatKind) -> Self {
        Self {
            tokens,
            events: Vec::new(),
            breaks,
            format,
        }
    }

    /// Whitespace tokens of `text`, with line starts recorded as breaks.
    pub fn from_plain_text(text: &str, format: FormatKind) -> Self {
        let mut tokens = Vec::new();
        let mut breaks = Vec::new();
        for line in text.lines() {
            let before = tokens.len();
            tokens.extend(line.split_whitespace().map(String::from));
            if before > 0 && tokens.len() > before {
                breaks.push(before);
            }
        }
        Self::plain(tokens, breaks, format)
    }

    /// Whitespace words in the rendering.
    pub fn word_count(&self) -> usize {
        self.tokens.len()
            + self
                .events
                .iter()
                .map(|e| self.format.tag_width(&e.kind))
                .sum::<usize>()
    }

    pub fn render(&self) -> String {
        match self.format {
            FormatKind::Crac => self.render_crac(),
            _ => self.render_xml(),
        }
    }

    fn grouped(&self) -> (Vec<Vec<&TagEvent>>, Vec<Vec<&TagEvent>>) {
        let n = self.tokens.len();
        let mut before: Vec<Vec<&TagEvent>> = (0..n).map(|_| Vec::new()).collect();
        let mut after: Vec<Vec<&TagEvent>> = (0..n).map(|_| Vec::new()).collect();
        for e in &self.events {
            if e.anchor >= n {
                continue;
            }
            match e.side {
                Side::Before => before[e.anchor].push(e),
                Side::After => after[e.anchor].push(e),
            }
        }
        (before, after)
    }

    fn join_lines(&self, atoms_per_token: Vec<Vec<String>>) -> String {
        let mut out = String::new();
        for (i, atoms) in atoms_per_token.into_iter().enumerate() {
            if i > 0 {
                out.push(if self.breaks.binary_search(&i).is_ok() {
                    '\n'
                } else {
                    ' '
                });
            }
            out.push_str(&atoms.join(" "));
        }
        out
    }

    fn render_xml(&self) -> String {
        let (before, after) = self.grouped();
        let atoms = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let mut atoms: Vec<String> = before[i]
                    .iter()
                    .map(|e| xml_tag(self.format, &e.kind))
                    .collect();
                atoms.push(tok.clone());
                atoms.extend(after[i].iter().map(|e| xml_tag(self.format, &e.kind)));
                atoms
            })
            .collect();
        self.join_lines(atoms)
    }

    fn render_crac(&self) -> String {
        let (before, after) = self.grouped();
        let mut stack: Vec<(String, usize)> = Vec::new();
        let mut atoms_per_token = Vec::with_capacity(self.tokens.len());
        for (i, tok) in self.tokens.iter().enumerate() {
            let mut pre_atoms: Vec<String> = Vec::new();
            let mut opens: Vec<String> = Vec::new();
            for e in &before[i] {
                match &e.kind {
                    TagKind::Open(l) => {
                        stack.push((l.clone(), i));
                        opens.push(l.clone());
                    }
                    TagKind::ZeroHead(l) => pre_atoms.push(format!("##|[e{l}]")),
                    TagKind::Head(l) => opens.push(l.clone()),
                    TagKind::Close => {}
                }
            }
            let mut singles: Vec<String> = Vec::new();
            let mut closes: Vec<String> = Vec::new();
            let mut post_atoms: Vec<String> = Vec::new();
            for e in &after[i] {
                match &e.kind {
                    TagKind::Close => {
                        if let Some((l, start)) = stack.pop() {
                            if start == i {
                                if let Some(at) = opens.iter().rposition(|o| *o == l) {
                                    opens.remove(at);
                                }
                                singles.insert(0, l);
                            } else {
                                closes.push(l);
                            }
                        }
                    }
                    TagKind::Head(l) => singles.push(l.clone()),
                    TagKind::ZeroHead(l) => post_atoms.push(format!("##|[e{l}]")),
                    TagKind::Open(_) => {}
                }
            }
            let mut items: Vec<String> = singles.iter().map(|l| format!("[e{l}]")).collect();
            items.extend(opens.iter().map(|l| format!("[e{l}")));
            items.extend(closes.iter().map(|l| format!("e{l}]")));
            let mut atoms = pre_atoms;
            if items.is_empty() {
                atoms.push(tok.clone());
            } else {
                atoms.push(format!("{tok}|{}", items.join(",")));
            }
            atoms.extend(post_atoms);
            atoms_per_token.push(atoms);
        }
        self.join_lines(atoms_per_token)
    }
}

fn xml_tag(format: FormatKind, kind: &TagKind) -> String {
    match (format, kind) {
        (FormatKind::ExplicitXml, TagKind::Open(l) | TagKind::Head(l)) => {
            format!("<ent id=COREF_{l}>")
        }
        (FormatKind::ExplicitXml, TagKind::ZeroHead(l)) => format!("<zero_ent id=COREF_{l}>"),
        (_, TagKind::Open(l) | TagKind::Head(l)) => format!("<ent{l}>"),
        (_, TagKind::ZeroHead(l)) => format!("<zero{l}>"),
        (_, TagKind::Close) => String::from("</ent>"),
    }
}

fn valid_label(l: &str) -> bool {
    !l.is_empty()
        && l.chars()
            .all(|c| c.is_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Atom {
    Word(String),
    Tag(TagKind),
    /// CRAC token carrying bracket items: (word, singles, opens, closes).
    CracWord(String, Vec<String>, Vec<String>, usize),
    /// CRAC `##|...` zero atom: labels plus count of unusable items.
    CracZero(Vec<String>, usize),
}

fn xml_atom(format: FormatKind, atom: &str) -> Option<TagKind> {
    let inner = atom.strip_prefix('<')?.strip_suffix('>')?;
    if inner == "/ent" {
        return format.is_span_format().then_some(TagKind::Close);
    }
    let (zero, label) = if let Some(l) = inner.strip_prefix("zero") {
        (true, l)
    } else {
        (false, inner.strip_prefix("ent")?)
    };
    if !valid_label(label) {
        return None;
    }
    let label = label.to_string();
    Some(match (zero, format) {
        (true, _) => TagKind::ZeroHead(label),
        (false, FormatKind::HeadwordXml) => TagKind::Head(label),
        (false, _) => TagKind::Open(label),
    })
}

fn explicit_atom(first: &str, second: Option<&str>) -> Option<TagKind> {
    let zero = match first {
        "<ent" => false,
        "<zero_ent" => true,
        "</ent>" => return Some(TagKind::Close),
        _ => return None,
    };
    let label = second?.strip_prefix("id=COREF_")?.strip_suffix('>')?;
    if !valid_label(label) {
        return None;
    }
    let label = label.to_string();
    Some(if zero {
        TagKind::ZeroHead(label)
    } else {
        TagKind::Open(label)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum CracItem {
    Single(String),
    Open(String),
    Close(String),
}

fn crac_items(s: &str) -> Option<Vec<CracItem>> {
    s.split(',')
        .map(|item| {
            if let Some(body) = item.strip_prefix("[e") {
                match body.strip_suffix(']') {
                    Some(l) if valid_label(l) => Some(CracItem::Single(l.to_string())),
                    Some(_) => None,
                    None if valid_label(body) => Some(CracItem::Open(body.to_string())),
                    None => None,
                }
            } else {
                let l = item.strip_prefix('e')?.strip_suffix(']')?;
                valid_label(l).then(|| CracItem::Close(l.to_string()))
            }
        })
        .collect()
}

fn crac_atom(atom: &str) -> Atom {
    let Some(bar) = atom.rfind('|') else {
        return Atom::Word(atom.to_string());
    };
    let (word, rest) = (&atom[..bar], &atom[bar + 1..]);
    let Some(items) = crac_items(rest) else {
        return Atom::Word(atom.to_string());
    };
    if word.is_empty() {
        return Atom::Word(atom.to_string());
    }
    if word == "##" {
        let labels: Vec<String> = items
            .iter()
            .filter_map(|i| match i {
                CracItem::Single(l) => Some(l.clone()),
                _ => None,
            })
            .collect();
        let bad = items.len() - labels.len();
        return Atom::CracZero(labels, bad);
    }
    let mut singles = Vec::new();
    let mut opens = Vec::new();
    let mut closes = 0;
    for item in items {
        match item {
            CracItem::Single(l) => singles.push(l),
            CracItem::Open(l) => opens.push(l),
            CracItem::Close(_) => closes += 1,
        }
    }
    Atom::CracWord(word.to_string(), singles, opens, closes)
}

fn lex_line(line: &str, format: FormatKind) -> Vec<Atom> {
    let raw: Vec<&str> = line.split_whitespace().collect();
    let mut atoms = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let atom = raw[i];
        match format {
            FormatKind::Crac => atoms.push(crac_atom(atom)),
            FormatKind::ExplicitXml => match explicit_atom(atom, raw.get(i + 1).copied()) {
                Some(kind) => {
                    if kind != TagKind::Close {
                        i += 1;
                    }
                    atoms.push(Atom::Tag(kind));
                }
                None => atoms.push(Atom::Word(atom.to_string())),
            },
            _ => match xml_atom(format, atom) {
                Some(kind) => atoms.push(Atom::Tag(kind)),
                None => atoms.push(Atom::Word(atom.to_string())),
            },
        }
        i += 1;
    }
    atoms
}

/// Parses annotated text leniently. Never fails: malformed material becomes
/// ordinary tokens and unusable tags are reported in the diagnostics.
pub fn decode(text: &str, format: FormatKind) -> (AnnotatedText, Vec<Diagnostic>) {
    let mut out = AnnotatedText::plain(Vec::new(), Vec::new(), format);
    let mut diags = Vec::new();
    // Opens waiting for the next token; zero tags that precede any word on
    // their line also wait.
    let mut pending: Vec<TagKind> = Vec::new();
    let mut depth = 0usize;

    let push_after =
        |out: &mut AnnotatedText, diags: &mut Vec<Diagnostic>, depth: &mut usize, kind: TagKind| {
            let Some(last) = out.tokens.len().checked_sub(1) else {
                diags.push(Diagnostic::new(
                    DiagnosticKind::OrphanTag,
                    Some(0),
                    "tag before the first token",
                ));
                return;
            };
            if kind == TagKind::Close {
                if *depth == 0 {
                    diags.push(Diagnostic::new(
                        DiagnosticKind::UnmatchedClose,
                        Some(last),
                        "unmatched close",
                    ));
                    return;
                }
                *depth -= 1;
            }
            out.events.push(TagEvent::new(kind, last, Side::After));
        };

    for line in text.lines() {
        let atoms = lex_line(line, format);
        let mut word_on_line = false;
        for atom in atoms {
            match atom {
                Atom::Word(w) => {
                    start_token(&mut out, &mut pending, &mut depth, w, word_on_line);
                    word_on_line = true;
                }
                Atom::CracWord(w, singles, opens, closes) => {
                    pending.extend(opens.into_iter().map(TagKind::Open));
                    pending.extend(singles.iter().cloned().map(TagKind::Open));
                    start_token(&mut out, &mut pending, &mut depth, w, word_on_line);
                    word_on_line = true;
                    for _ in 0..singles.len() + closes {
                        push_after(&mut out, &mut diags, &mut depth, TagKind::Close);
                    }
                }
                Atom::CracZero(labels, bad) => {
                    if bad > 0 {
                        diags.push(Diagnostic::new(
                            DiagnosticKind::DroppedTag,
                            out.tokens.len().checked_sub(1),
                            "non-zero item on a zero marker",
                        ));
                    }
                    for l in labels {
                        if word_on_line {
                            push_after(&mut out, &mut diags, &mut depth, TagKind::ZeroHead(l));
                        } else {
                            pending.push(TagKind::ZeroHead(l));
                        }
                    }
                }
                Atom::Tag(kind @ TagKind::Open(_)) => pending.push(kind),
                Atom::Tag(kind @ TagKind::ZeroHead(_)) if !word_on_line => pending.push(kind),
                Atom::Tag(kind) => push_after(&mut out, &mut diags, &mut depth, kind),
            }
        }
    }
    for kind in pending {
        match kind {
            TagKind::ZeroHead(_) if !out.tokens.is_empty() => {
                push_after(&mut out, &mut diags, &mut depth, kind);
            }
            _ => diags.push(Diagnostic::new(
                DiagnosticKind::DanglingOpen,
                Some(out.tokens.len()),
                "tag with no following token",
            )),
        }
    }
    (out, diags)
}

fn start_token(
    out: &mut AnnotatedText,
    pending: &mut Vec<TagKind>,
    depth: &mut usize,
    word: String,
    word_on_line: bool,
) {
    let idx = out.tokens.len();
    if idx > 0 && !word_on_line {
        out.breaks.push(idx);
    }
    for kind in pending.drain(..) {
        if matches!(kind, TagKind::Open(_)) {
            *depth += 1;
        }
        out.events.push(TagEvent::new(kind, idx, Side::Before));
    }
    out.tokens.push(word);
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("crossing mentions {first} and {second} in sentence {sentence}")]
    Crossing {
        sentence: usize,
        first: String,
        second: String,
    },
    #[error("no display label for chain {0}")]
    MissingLabel(String),
}

/// Result of [`encode`]: the annotated text plus the origin of every token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedText {
    pub text: AnnotatedText,
    pub token_map: Vec<TokenRef>,
}

impl EncodedText {
    pub fn token_map_partial(&self) -> Vec<Option<TokenRef>> {
        self.token_map.iter().copied().map(Some).collect()
    }
}

struct SpanMention {
    label: String,
    start: usize,
    end: usize,
    head: usize,
    order: usize,
}

/// First and last surface position inside `span`.
fn surface_bounds(span: &Span) -> (usize, usize) {
    let start = if span.start.is_empty() {
        span.start.word + 1
    } else {
        span.start.word
    };
    (start, span.end.word)
}

type MentionKey = (usize, NodeId, Vec<Span>);

fn mention_key(m: &Mention) -> MentionKey {
    (m.sentence, m.head, m.fragments.clone())
}

/// Mentions of the sentences in `range` in document order. Mentions sharing
/// a head and span are ordered by the positions of their chains' mentions,
/// so the order does not depend on how chains are named.
pub fn canonical_mentions(doc: &Document, range: Range<usize>) -> Vec<&Mention> {
    let mut signatures: BTreeMap<&str, Vec<MentionKey>> = BTreeMap::new();
    for chain in doc.chains.values() {
        let mut sig: Vec<MentionKey> = chain
            .mentions
            .iter()
            .filter(|m| range.contains(&m.sentence))
            .map(mention_key)
            .collect();
        sig.sort();
        signatures.insert(chain.id.as_str(), sig);
    }
    let mut out: Vec<&Mention> = doc
        .mentions()
        .filter(|m| range.contains(&m.sentence))
        .collect();
    out.sort_by(|a, b| {
        mention_key(a)
            .cmp(&mention_key(b))
            .then_with(|| {
                signatures
                    .get(a.chain_id.as_str())
                    .cmp(&signatures.get(b.chain_id.as_str()))
            })
            .then_with(|| a.chain_id.cmp(&b.chain_id))
    });
    out
}

/// Encodes the sentences in `range` of `doc` with display labels from
/// `label_of`. Discontinuous mentions are reduced to their head fragment.
pub fn encode<F>(
    doc: &Document,
    range: Range<usize>,
    format: FormatKind,
    mut label_of: F,
) -> Result<EncodedText, FormatError>
where
    F: FnMut(&str) -> Option<String>,
{
    let ordered = canonical_mentions(doc, range.clone());
    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    for m in ordered.iter().copied() {
        if !labels.contains_key(&m.chain_id) {
            let l = label_of(&m.chain_id)
                .ok_or_else(|| FormatError::MissingLabel(m.chain_id.clone()))?;
            labels.insert(m.chain_id.clone(), l);
        }
    }

    let mut text = AnnotatedText::plain(Vec::new(), Vec::new(), format);
    let mut token_map = Vec::new();
    for s_idx in range {
        let Some(sentence) = doc.sentences.get(s_idx) else {
            break;
        };
        if sentence.tokens.is_empty() {
            continue;
        }
        let base = text.tokens.len();
        if base > 0 {
            text.breaks.push(base);
        }

        let mut spans: Vec<SpanMention> = Vec::new();
        let mut zeros: Vec<(NodeId, usize, String)> = Vec::new();
        for (order, m) in ordered
            .iter()
            .copied()
            .filter(|m| m.sentence == s_idx)
            .enumerate()
        {
            let label = labels[&m.chain_id].clone();
            if m.is_zero() {
                zeros.push((m.head, order, label));
                continue;
            }
            let (start, end) = surface_bounds(&m.head_fragment());
            spans.push(SpanMention {
                label,
                start,
                end,
                head: m.head.word,
                order,
            });
        }
        spans.sort_by(|a, b| {
            a.start
                .cmp(&b.start)
                .then(b.end.cmp(&a.end))
                .then(a.order.cmp(&b.order))
        });
        zeros.sort();
        if format.is_span_format() {
            for (i, a) in spans.iter().enumerate() {
                for b in &spans[i + 1..] {
                    if a.start < b.start && b.start <= a.end && a.end < b.end {
                        return Err(FormatError::Crossing {
                            sentence: s_idx,
                            first: format!("{}:{}-{}", a.label, a.start, a.end),
                            second: format!("{}:{}-{}", b.label, b.start, b.end),
                        });
                    }
                }
            }
        }

        for tok in &sentence.tokens {
            let p = tok.id.word;
            let idx = text.tokens.len();
            if p == 1 {
                for (_, _, l) in zeros.iter().filter(|z| z.0.word == 0) {
                    text.events.push(TagEvent::new(
                        TagKind::ZeroHead(l.clone()),
                        idx,
                        Side::Before,
                    ));
                }
            }
            if format.is_span_format() {
                for s in spans.iter().filter(|s| s.start == p) {
                    text.events.push(TagEvent::new(
                        TagKind::Open(s.label.clone()),
                        idx,
                        Side::Before,
                    ));
                }
            }
            text.tokens.push(tok.form.clone());
            token_map.push(TokenRef {
                sentence: s_idx,
                node: tok.id,
            });
            if format.is_span_format() {
                let mut closing: Vec<&SpanMention> = spans.iter().filter(|s| s.end == p).collect();
                closing.sort_by(|a, b| b.start.cmp(&a.start).then(b.order.cmp(&a.order)));
                for _ in closing {
                    text.events
                        .push(TagEvent::new(TagKind::Close, idx, Side::After));
                }
            } else {
                for s in spans.iter().filter(|s| s.head == p) {
                    text.events.push(TagEvent::new(
                        TagKind::Head(s.label.clone()),
                        idx,
                        Side::After,
                    ));
                }
            }
            for (_, _, l) in zeros.iter().filter(|z| z.0.word == p) {
                text.events.push(TagEvent::new(
                    TagKind::ZeroHead(l.clone()),
                    idx,
                    Side::After,
                ));
            }
        }
    }
    Ok(EncodedText { text, token_map })
}

/// Converts tag events into mentions over the document's sentences.
///
/// Opens and closes are paired with a stack, so the resulting spans are
/// properly nested. Zero tags produce empty-node mentions numbered by their
/// order at the same anchor; the nodes may not exist yet in `doc`.
pub fn events_to_mentions(
    text: &AnnotatedText,
    token_map: &[Option<TokenRef>],
    doc: &Document,
) -> (Vec<Mention>, Vec<Diagnostic>) {
    let mapped = |i: usize| token_map.get(i).copied().flatten();
    let mut diags = Vec::new();
    let mut mentions = Vec::new();
    let mut stack: Vec<Option<(String, usize, TokenRef)>> = Vec::new();
    let mut zero_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();

    let last_mapped_in_sentence =
        |from: usize, upto: usize, sentence: usize| -> Option<(usize, TokenRef)> {
            (from..=upto.min(token_map.len().saturating_sub(1)))
                .rev()
                .find_map(|i| mapped(i).filter(|r| r.sentence == sentence).map(|r| (i, r)))
        };

    let close_span = |mentions: &mut Vec<Mention>, label: String, open: TokenRef, end: TokenRef| {
        if end.node < open.node {
            return;
        }
        let span = Span::new(open.node, end.node);
        let head = match doc.sentences.get(open.sentence) {
            Some(sentence) => {
                let nodes: Vec<NodeId> = sentence.span_nodes(&span);
                mention_head(sentence, &nodes, None)
            }
            None => open.node,
        };
        mentions.push(Mention::new(label, open.sentence, alloc::vec![span], head));
    };

    for e in &text.events {
        match &e.kind {
            TagKind::Open(label) => match mapped(e.anchor) {
                Some(r) => stack.push(Some((label.clone(), e.anchor, r))),
                None => {
                    diags.push(Diagnostic::new(
                        DiagnosticKind::UnmappedToken,
                        Some(e.anchor),
                        "open tag on unmapped token",
                    ));
                    stack.push(None);
                }
            },
            TagKind::Close => match stack.pop() {
                None => diags.push(Diagnostic::new(
                    DiagnosticKind::UnmatchedClose,
                    Some(e.anchor),
                    "unmatched close",
                )),
                Some(None) => {}
                Some(Some((label, open_idx, open))) => {
                    let end = match mapped(e.anchor) {
                        Some(r) if r.sentence == open.sentence => Some(r),
                        Some(_) => {
                            diags.push(Diagnostic::new(
                                DiagnosticKind::CrossSentenceSpan,
                                Some(e.anchor),
                                format!("span of {label} clipped to its opening sentence"),
                            ));
                            last_mapped_in_sentence(open_idx, e.anchor, open.sentence).map(|x| x.1)
                        }
                        None => {
                            diags.push(Diagnostic::new(
                                DiagnosticKind::UnmappedToken,
                                Some(e.anchor),
                                "close tag on unmapped token",
                            ));
                            last_mapped_in_sentence(open_idx, e.anchor, open.sentence).map(|x| x.1)
                        }
                    };
                    if let Some(end) = end {
                        close_span(&mut mentions, label, open, end);
                    }
                }
            },
            TagKind::Head(label) => match mapped(e.anchor) {
                Some(r) => mentions.push(Mention::new(
                    label.clone(),
                    r.sentence,
                    alloc::vec![Span::single(r.node)],
                    r.node,
                )),
                None => diags.push(Diagnostic::new(
                    DiagnosticKind::UnmappedToken,
                    Some(e.anchor),
                    "head tag on unmapped token",
                )),
            },
            TagKind::ZeroHead(label) => match mapped(e.anchor) {
                Some(r) => {
                    let anchor = match e.side {
                        Side::After => r.node.word,
                        Side::Before => r.node.word.saturating_sub(1),
                    };
                    let k = zero_counts.entry((r.sentence, anchor)).or_insert(0);
                    *k += 1;
                    let node = NodeId::empty(anchor, *k);
                    mentions.push(Mention::new(
                        label.clone(),
                        r.sentence,
                        alloc::vec![Span::single(node)],
                        node,
                    ));
                }
                None => diags.push(Diagnostic::new(
                    DiagnosticKind::UnmappedToken,
                    Some(e.anchor),
                    "zero tag on unmapped token",
                )),
            },
        }
    }
    while let Some(entry) = stack.pop() {
        let Some((label, open_idx, open)) = entry else {
            continue;
        };
        diags.push(Diagnostic::new(
            DiagnosticKind::AutoClosed,
            Some(open_idx),
            format!("open tag for {label} auto-closed"),
        ));
        if let Some((_, end)) =
            last_mapped_in_sentence(open_idx, token_map.len().saturating_sub(1), open.sentence)
        {
            close_span(&mut mentions, label, open, end);
        }
    }
    (mentions, diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn unmatched_close_is_dropped() {
        let (a, d) = decode("a </ent> b", FormatKind::MinimalXml);
        assert_eq!(a.tokens, toks("a b"));
        assert!(a.events.is_empty());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UnmatchedClose);
    }

    #[test]
    fn consecutive_head_tags_stay_on_one_token() {
        let (a, d) = decode("x <ent2> <ent2> y", FormatKind::HeadwordXml);
        assert!(d.is_empty());
        assert_eq!(a.tokens, toks("x y"));
        let head = TagEvent::new(TagKind::Head("2".into()), 0, Side::After);
        assert_eq!(a.events, vec![head.clone(), head]);
    }

    #[test]
    fn explicit_tags_span_two_atoms() {
        let (a, d) = decode(
            "<ent id=COREF_3> cat </ent> <ent x",
            FormatKind::ExplicitXml,
        );
        assert!(d.is_empty());
        assert_eq!(a.tokens, toks("cat <ent x"));
        assert_eq!(a.events.len(), 2);
        assert_eq!(a.render(), "<ent id=COREF_3> cat </ent> <ent x");
    }

    #[test]
    fn garbled_tags_become_tokens() {
        let (a, _) = decode("<ent> <ent#1> </en> <zero> w|[x]", FormatKind::MinimalXml);
        assert_eq!(a.tokens.len(), 5);
        assert!(a.events.is_empty());
        let (c, _) = decode("w|[x] v|e1", FormatKind::Crac);
        assert_eq!(c.tokens, toks("w|[x] v|e1"));
    }

    #[test]
    fn crac_items_in_any_order() {
        let (a, d) = decode("her|[e2,[e1] sister|e2]", FormatKind::Crac);
        assert!(d.is_empty());
        assert_eq!(a.tokens, toks("her sister"));
        assert_eq!(a.render(), "her|[e1],[e2 sister|e2]");
    }

    #[test]
    fn leading_zero_tag_attaches_before() {
        let (a, _) = decode("<zero4> rains now\n<zero5> again", FormatKind::MinimalXml);
        assert_eq!(
            a.events[0],
            TagEvent::new(TagKind::ZeroHead("4".into()), 0, Side::Before)
        );
        assert_eq!(
            a.events[1],
            TagEvent::new(TagKind::ZeroHead("5".into()), 2, Side::Before)
        );
        assert_eq!(a.breaks, vec![2]);
        assert_eq!(a.render(), "<zero4> rains now\n<zero5> again");
    }

    #[test]
    fn trailing_open_is_reported() {
        let (a, d) = decode("a b <ent1>", FormatKind::MinimalXml);
        assert!(a.events.is_empty());
        assert_eq!(d[0].kind, DiagnosticKind::DanglingOpen);
    }

    #[test]
    fn empty_events_give_no_mentions() {
        let text = AnnotatedText::plain(toks("a b"), vec![], FormatKind::MinimalXml);
        let (m, d) = events_to_mentions(&text, &[None, None], &Document::new("x"));
        assert!(m.is_empty() && d.is_empty());
    }

    #[test]
    fn format_names_parse() {
        for f in FormatKind::ALL {
            assert_eq!(f.name().parse::<FormatKind>().unwrap(), f);
        }
        assert!("xml".parse::<FormatKind>().is_err());
    }
}
