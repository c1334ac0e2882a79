//! Cleaning of model output against the original input.
//!
//! Output tokens are aligned to input tokens in three stages:
//!
//! 1. **Recursive anchoring.** Tokens that occur exactly once in the input
//!    and once in the output are anchor candidates; a longest increasing
//!    subsequence keeps the alignment monotonic. Each gap between anchors is
//!    processed again with uniqueness recomputed inside the gap.
//! 2. **Island expansion.** Every anchor grows left and right over equal
//!    adjacent tokens that are still unmatched on both sides.
//! 3. **Fuzzy matching.** Remaining gaps are paired greedily in order when
//!    the normalized character edit similarity reaches a threshold.
//!
//! [`clean`] then moves every tag from its output token to the aligned
//! input token, so the cleaned text always has exactly the input tokens.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diag::{Diagnostic, DiagnosticKind};
use crate::formats::{decode, AnnotatedText, FormatKind, Side, TagEvent, TagKind};

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Anchor,
    Expanded,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub output: usize,
    pub input: usize,
    pub kind: MatchKind,
}

/// Monotonic partial mapping from output tokens to input tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    /// Sorted ascending in both coordinates.
    pub pairs: Vec<AlignedPair>,
    pub unmatched_output: BTreeSet<usize>,
    pub unmatched_input: BTreeSet<usize>,
}

impl Alignment {
    fn from_pairs(mut pairs: Vec<AlignedPair>, n_input: usize, n_output: usize) -> Self {
        pairs.sort_by_key(|p| p.output);
        let matched_out: BTreeSet<usize> = pairs.iter().map(|p| p.output).collect();
        let matched_in: BTreeSet<usize> = pairs.iter().map(|p| p.input).collect();
        Self {
            unmatched_output: (0..n_output).filter(|o| !matched_out.contains(o)).collect(),
            unmatched_input: (0..n_input).filter(|i| !matched_in.contains(i)).collect(),
            pairs,
        }
    }

    /// Input index for each output token.
    pub fn output_to_input(&self, n_output: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n_output];
        for p in &self.pairs {
            if let Some(slot) = map.get_mut(p.output) {
                *slot = Some(p.input);
            }
        }
        map
    }

    /// Strict monotonicity in both coordinates.
    pub fn is_monotonic(&self) -> bool {
        self.pairs
            .windows(2)
            .all(|w| w[0].output < w[1].output && w[0].input < w[1].input)
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// `1 - distance / max(len)`, and 1 for two empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Longest strictly increasing subsequence of `values`, as indices.
fn longest_increasing(values: &[usize]) -> Vec<usize> {
    let mut tails: Vec<usize> = Vec::new();
    let mut prev: Vec<Option<usize>> = vec![None; values.len()];
    for (idx, &v) in values.iter().enumerate() {
        let pos = tails.partition_point(|&t| values[t] < v);
        if pos > 0 {
            prev[idx] = Some(tails[pos - 1]);
        }
        if pos == tails.len() {
            tails.push(idx);
        } else {
            tails[pos] = idx;
        }
    }
    let mut out = Vec::with_capacity(tails.len());
    let mut cur = tails.last().copied();
    while let Some(c) = cur {
        out.push(c);
        cur = prev[c];
    }
    out.reverse();
    out
}

/// Recursive unique-token anchoring.
pub fn anchor_align<S: AsRef<str>>(input: &[S], output: &[S]) -> Alignment {
    let mut pairs = Vec::new();
    let mut regions = vec![(0..input.len(), 0..output.len())];
    while let Some((ins, outs)) = regions.pop() {
        if ins.is_empty() || outs.is_empty() {
            continue;
        }
        // token -> (count in input, last input index, count in output, last output index)
        let mut counts: BTreeMap<&str, (usize, usize, usize, usize)> = BTreeMap::new();
        for i in ins.clone() {
            let c = counts.entry(input[i].as_ref()).or_default();
            c.0 += 1;
            c.1 = i;
        }
        for o in outs.clone() {
            if let Some(c) = counts.get_mut(output[o].as_ref()) {
                c.2 += 1;
                c.3 = o;
            }
        }
        let mut candidates: Vec<(usize, usize)> = counts
            .values()
            .filter(|c| c.0 == 1 && c.2 == 1)
            .map(|c| (c.3, c.1))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        candidates.sort_unstable();
        let inputs: Vec<usize> = candidates.iter().map(|c| c.1).collect();
        let kept: Vec<(usize, usize)> = longest_increasing(&inputs)
            .into_iter()
            .map(|k| candidates[k])
            .collect();

        let mut in_lo = ins.start;
        let mut out_lo = outs.start;
        for &(o, i) in &kept {
            regions.push((in_lo..i, out_lo..o));
            pairs.push(AlignedPair {
                output: o,
                input: i,
                kind: MatchKind::Anchor,
            });
            in_lo = i + 1;
            out_lo = o + 1;
        }
        regions.push((in_lo..ins.end, out_lo..outs.end));
    }
    Alignment::from_pairs(pairs, input.len(), output.len())
}

/// Island expansion around existing pairs, then greedy fuzzy matching in
/// the remaining gaps.
pub fn expand_and_fuzzy<S: AsRef<str>>(
    al: &Alignment,
    input: &[S],
    output: &[S],
    fuzzy_threshold: f64,
) -> Alignment {
    let mut out_to_in: Vec<Option<usize>> = al.output_to_input(output.len());
    let mut in_used: Vec<bool> = vec![false; input.len()];
    for p in &al.pairs {
        in_used[p.input] = true;
    }
    let mut pairs = al.pairs.clone();

    for anchor in &al.pairs {
        let (mut o, mut i) = (anchor.output, anchor.input);
        while o > 0
            && i > 0
            && out_to_in[o - 1].is_none()
            && !in_used[i - 1]
            && output[o - 1].as_ref() == input[i - 1].as_ref()
        {
            o -= 1;
            i -= 1;
            out_to_in[o] = Some(i);
            in_used[i] = true;
            pairs.push(AlignedPair {
                output: o,
                input: i,
                kind: MatchKind::Expanded,
            });
        }
        let (mut o, mut i) = (anchor.output, anchor.input);
        while o + 1 < output.len()
            && i + 1 < input.len()
            && out_to_in[o + 1].is_none()
            && !in_used[i + 1]
            && output[o + 1].as_ref() == input[i + 1].as_ref()
        {
            o += 1;
            i += 1;
            out_to_in[o] = Some(i);
            in_used[i] = true;
            pairs.push(AlignedPair {
                output: o,
                input: i,
                kind: MatchKind::Expanded,
            });
        }
    }

    pairs.sort_by_key(|p| p.output);
    let mut bounds: Vec<(usize, usize)> = Vec::with_capacity(pairs.len() + 1);
    let (mut out_lo, mut in_lo) = (0, 0);
    for p in &pairs {
        bounds.push((out_lo, in_lo));
        out_lo = p.output + 1;
        in_lo = p.input + 1;
    }
    bounds.push((out_lo, in_lo));
    let limits: Vec<(usize, usize)> = pairs
        .iter()
        .map(|p| (p.output, p.input))
        .chain(core::iter::once((output.len(), input.len())))
        .collect();
    for ((out_lo, in_lo), (out_hi, in_hi)) in bounds.into_iter().zip(limits) {
        let mut next_in = in_lo;
        for (o, token) in output.iter().enumerate().take(out_hi).skip(out_lo) {
            if next_in >= in_hi {
                break;
            }
            let hit = (next_in..in_hi)
                .find(|&i| similarity(token.as_ref(), input[i].as_ref()) >= fuzzy_threshold);
            if let Some(i) = hit {
                pairs.push(AlignedPair {
                    output: o,
                    input: i,
                    kind: MatchKind::Fuzzy,
                });
                next_in = i + 1;
            }
        }
    }
    Alignment::from_pairs(pairs, input.len(), output.len())
}

/// Full three-stage alignment.
pub fn align_tokens<S: AsRef<str>>(input: &[S], output: &[S], fuzzy_threshold: f64) -> Alignment {
    expand_and_fuzzy(&anchor_align(input, output), input, output, fuzzy_threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutput {
    /// Annotated text over exactly the input tokens.
    pub text: AnnotatedText,
    pub diagnostics: Vec<Diagnostic>,
    pub alignment: Alignment,
}

/// [`clean_with`] at the default fuzzy threshold.
pub fn clean(input_text: &str, model_output: &str, format: FormatKind) -> CleanOutput {
    clean_with(input_text, model_output, format, DEFAULT_FUZZY_THRESHOLD)
}

/// Projects the tags of `model_output` onto the whitespace tokens of
/// `input_text`.
///
/// Tags on unaligned output tokens move to the aligned neighbour (the
/// previous token for closing/head/zero tags, the next one for opening
/// tags) when the token sits in a gap that still has unaligned input;
/// otherwise they are dropped. An open/close pair is kept or dropped as a
/// unit, and pairs whose projection would cross are dropped.
pub fn clean_with(
    input_text: &str,
    model_output: &str,
    format: FormatKind,
    fuzzy_threshold: f64,
) -> CleanOutput {
    let input = AnnotatedText::from_plain_text(input_text, format);
    let (output, mut diagnostics) = decode(model_output, format);
    let alignment = align_tokens(&input.tokens, &output.tokens, fuzzy_threshold);
    let map = alignment.output_to_input(output.tokens.len());

    // For each output token: does its gap still have unaligned input?
    let mut substitutable = vec![false; output.tokens.len()];
    {
        let mut prev_in: Option<usize> = None;
        let mut o = 0;
        while o < output.tokens.len() {
            if let Some(i) = map[o] {
                prev_in = Some(i);
                o += 1;
                continue;
            }
            let gap_start = o;
            while o < output.tokens.len() && map[o].is_none() {
                o += 1;
            }
            let in_lo = prev_in.map_or(0, |i| i + 1);
            let in_hi = if o < output.tokens.len() {
                map[o].unwrap_or(in_lo)
            } else {
                input.tokens.len()
            };
            let has_input = in_hi > in_lo;
            for s in &mut substitutable[gap_start..o] {
                *s = has_input;
            }
        }
    }

    // Pair opens and closes in output order.
    let n_events = output.events.len();
    let mut partner: Vec<Option<usize>> = vec![None; n_events];
    {
        let mut stack = Vec::new();
        for (idx, e) in output.events.iter().enumerate() {
            match e.kind {
                TagKind::Open(_) => stack.push(idx),
                TagKind::Close => {
                    if let Some(open) = stack.pop() {
                        partner[idx] = Some(open);
                        partner[open] = Some(idx);
                    }
                }
                _ => {}
            }
        }
    }

    let mut projected: Vec<Option<(TagEvent, bool)>> = Vec::with_capacity(n_events);
    for e in &output.events {
        let target = match (map.get(e.anchor).copied().flatten(), e.side) {
            (Some(i), side) => Some((i, side, false)),
            (None, _) if !substitutable.get(e.anchor).copied().unwrap_or(false) => None,
            (None, Side::After) => e
                .anchor
                .checked_sub(1)
                .and_then(|o| map[o])
                .map(|i| (i, Side::After, true)),
            (None, Side::Before) => map
                .get(e.anchor + 1)
                .copied()
                .flatten()
                .map(|i| (i, Side::Before, true)),
        };
        projected
            .push(target.map(|(i, side, moved)| (TagEvent::new(e.kind.clone(), i, side), moved)));
    }
    for idx in 0..n_events {
        if projected[idx].is_none() {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::DroppedTag,
                Some(output.events[idx].anchor),
                format!(
                    "tag {:?} on unaligned output token",
                    output.events[idx].kind
                ),
            ));
            if let Some(p) = partner[idx] {
                projected[p] = None;
            }
        }
    }
    // A re-anchored head/zero tag that duplicates one already present is dropped.
    for idx in 0..n_events {
        let Some((ev, true)) = &projected[idx] else {
            continue;
        };
        if matches!(ev.kind, TagKind::Open(_) | TagKind::Close) {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::ReanchoredTag,
                Some(ev.anchor),
                "tag moved to a neighbouring token",
            ));
            continue;
        }
        let duplicate = projected
            .iter()
            .enumerate()
            .any(|(j, p)| j != idx && matches!(p, Some((other, _)) if other == ev));
        if duplicate {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::DroppedTag,
                Some(ev.anchor),
                "re-anchored tag duplicates an existing tag",
            ));
            projected[idx] = None;
        } else {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::ReanchoredTag,
                Some(ev.anchor),
                "tag moved to a neighbouring token",
            ));
        }
    }

    // Re-pair by stack in input order; inverted or crossing pairs are dropped.
    let mut order: Vec<usize> = (0..n_events).filter(|&i| projected[i].is_some()).collect();
    order.sort_by_key(|&i| projected[i].as_ref().map(|(e, _)| e.position()));
    let mut keep = vec![true; n_events];
    let mut stack: Vec<usize> = Vec::new();
    for &idx in &order {
        let (ev, _) = projected[idx].as_ref().expect("filtered");
        match ev.kind {
            TagKind::Open(_) => stack.push(idx),
            TagKind::Close => {
                let Some(open) = partner[idx] else {
                    keep[idx] = false;
                    continue;
                };
                match stack.iter().rposition(|&s| s == open) {
                    Some(pos) if pos + 1 == stack.len() => {
                        stack.pop();
                    }
                    Some(pos) => {
                        stack.remove(pos);
                        keep[idx] = false;
                        keep[open] = false;
                        diagnostics.push(Diagnostic::new(
                            DiagnosticKind::DroppedTag,
                            Some(ev.anchor),
                            "projected span would cross another",
                        ));
                    }
                    None => {
                        keep[idx] = false;
                        keep[open] = false;
                        diagnostics.push(Diagnostic::new(
                            DiagnosticKind::DroppedTag,
                            Some(ev.anchor),
                            "projected close precedes its open",
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    let events: Vec<TagEvent> = order
        .into_iter()
        .filter(|&i| keep[i])
        .filter_map(|i| projected[i].take().map(|(e, _)| e))
        .collect();

    let projected_text = AnnotatedText {
        tokens: input.tokens,
        events,
        breaks: input.breaks,
        format,
    };
    // Canonical event order: the fixed point of render + decode.
    let (canonical, _) = decode(&projected_text.render(), format);
    let text = if canonical.tokens == projected_text.tokens {
        AnnotatedText {
            breaks: projected_text.breaks,
            ..canonical
        }
    } else {
        projected_text
    };
    CleanOutput {
        text,
        diagnostics,
        alignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn pairs(al: &Alignment) -> Vec<(usize, usize)> {
        al.pairs.iter().map(|p| (p.output, p.input)).collect()
    }

    #[test]
    fn identical_sequences_anchor_fully() {
        let a = toks("a b c");
        let al = anchor_align(&a, &a);
        assert_eq!(pairs(&al), vec![(0, 0), (1, 1), (2, 2)]);
        assert!(al.pairs.iter().all(|p| p.kind == MatchKind::Anchor));
    }

    #[test]
    fn repeated_tokens_become_local_anchors() {
        let a = toks("a b c b d");
        let al = anchor_align(&a, &a);
        assert_eq!(pairs(&al), vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
    }

    #[test]
    fn crossing_candidates_keep_one() {
        let al = anchor_align(&toks("a x b"), &toks("b x a"));
        assert_eq!(al.pairs.len(), 1);
        assert!(al.is_monotonic());
    }

    #[test]
    fn disjoint_vocabularies_give_nothing() {
        let al = anchor_align(&toks("a b"), &toks("c d"));
        assert!(al.pairs.is_empty());
        assert_eq!(al.unmatched_input.len(), 2);
        assert_eq!(al.unmatched_output.len(), 2);
    }

    #[test]
    fn expansion_fills_interior() {
        let input = toks("w x y z x y");
        let output = toks("w x y z x y");
        let al = anchor_align(&input, &output);
        let full = expand_and_fuzzy(&al, &input, &output, 0.5);
        assert_eq!(full.pairs.len(), 6);
        assert!(full.pairs.iter().all(|p| p.kind != MatchKind::Fuzzy));
    }

    #[test]
    fn hallucinated_duplicate_stays_unmatched() {
        let input = toks("a b c");
        let output = toks("a b b c");
        let al = align_tokens(&input, &output, 0.5);
        assert_eq!(pairs(&al), vec![(0, 0), (1, 1), (3, 2)]);
        assert_eq!(al.pairs[1].kind, MatchKind::Expanded);
        assert_eq!(al.unmatched_output, [2].into_iter().collect());
    }

    #[test]
    fn fuzzy_pairs_spelling_variants() {
        let al = align_tokens(&toks("colour"), &toks("color"), 0.5);
        assert_eq!(
            al.pairs,
            vec![AlignedPair {
                output: 0,
                input: 0,
                kind: MatchKind::Fuzzy
            }]
        );
        assert!((similarity("colour", "color") - 10.0 / 12.0).abs() < 1e-12);
        let none = align_tokens(&toks("colour"), &toks("color"), 0.9);
        assert!(none.pairs.is_empty());
    }

    #[test]
    fn clean_drops_loop_tags() {
        let out = clean("a b", "a <ent1> b a <ent1> b a b", FormatKind::HeadwordXml);
        assert_eq!(out.text.tokens, vec!["a", "b"]);
        assert_eq!(
            out.text.events,
            vec![TagEvent::new(TagKind::Head("1".into()), 0, Side::After)]
        );
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::DroppedTag));
    }

    #[test]
    fn clean_moves_tag_from_misspelled_head() {
        let out = clean(
            "When Lison visits",
            "When Lisonn <ent1> visits",
            FormatKind::HeadwordXml,
        );
        assert_eq!(out.text.tokens, vec!["When", "Lison", "visits"]);
        assert_eq!(
            out.text.events,
            vec![TagEvent::new(TagKind::Head("1".into()), 1, Side::After)]
        );
    }

    #[test]
    fn clean_keeps_correct_output() {
        let text = "When <ent1> Lison </ent> visits";
        let out = clean("When Lison visits", text, FormatKind::MinimalXml);
        assert!(out.diagnostics.is_empty());
        assert_eq!(out.text.render(), text);
    }
}
