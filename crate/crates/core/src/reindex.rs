//! Per-window chain renumbering.
//!
//! Chains visible in the context are shown to the model as `0..N-1` in order
//! of first appearance. Indices `>= N` in the model's answer denote new
//! chains and receive fresh global ids.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diag::{Diagnostic, DiagnosticKind};
use crate::formats::{AnnotatedText, TagKind};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdMap {
    pub local_to_global: BTreeMap<u32, String>,
    pub global_to_local: BTreeMap<String, u32>,
    /// Chains visible in the context.
    pub n_context: u32,
}

impl IdMap {
    pub fn local(&self, global: &str) -> Option<u32> {
        self.global_to_local.get(global).copied()
    }

    pub fn global(&self, local: u32) -> Option<&str> {
        self.local_to_global.get(&local).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_to_global.is_empty()
    }

    /// Smallest index not yet in use.
    pub fn next_local(&self) -> u32 {
        self.local_to_global.keys().next_back().map_or(0, |k| k + 1)
    }

    pub fn insert(&mut self, local: u32, global: String) {
        self.global_to_local.insert(global.clone(), local);
        self.local_to_global.insert(local, global);
    }

    /// Index for `global`, assigning the next free one if unseen.
    pub fn local_or_assign(&mut self, global: &str) -> u32 {
        if let Some(l) = self.local(global) {
            return l;
        }
        let l = self.next_local();
        self.insert(l, global.into());
        l
    }
}

/// Hands out `e<n>` ids above every id already in use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    next: u64,
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn from_existing<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let max = ids
            .into_iter()
            .filter_map(|id| id.strip_prefix('e').and_then(|n| n.parse::<u64>().ok()))
            .max();
        Self {
            next: max.map_or(1, |m| m + 1),
        }
    }

    pub fn peek(&self) -> String {
        format!("e{}", self.next)
    }

    pub fn allocate(&mut self) -> String {
        let id = self.peek();
        self.next += 1;
        id
    }
}

/// Rewrites the labels of `context` through `map`, assigning new indices to
/// chains the map has not seen. `n_context` becomes the size of the map.
pub fn localize_into(context: &AnnotatedText, map: &mut IdMap) -> AnnotatedText {
    let mut out = context.clone();
    for e in &mut out.events {
        if let Some(global) = e.kind.label() {
            let l = map.local_or_assign(global);
            e.kind = e.kind.with_label(l.to_string());
        }
    }
    map.n_context = map.len() as u32;
    out
}

/// Numbers the context chains `0..N-1` by first appearance.
pub fn localize(context: &AnnotatedText) -> (AnnotatedText, IdMap) {
    let mut map = IdMap::default();
    let text = localize_into(context, &mut map);
    (text, map)
}

fn parse_local(label: &str) -> Option<u32> {
    if label.is_empty() || !label.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    label.parse().ok()
}

/// Maps local indices back to global ids. Unknown indices become new
/// chains in order of first appearance; `map` is extended so that a repeated
/// new index stays in one chain. Events with labels that are not
/// non-negative integers are dropped along with their closing tag.
pub fn globalize(
    predicted: &AnnotatedText,
    map: &mut IdMap,
    alloc: &mut IdAllocator,
) -> (AnnotatedText, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let n = predicted.events.len();
    let mut keep = vec![true; n];
    let mut labels: Vec<Option<String>> = vec![None; n];
    let mut stack: Vec<usize> = Vec::new();
    for (idx, e) in predicted.events.iter().enumerate() {
        match &e.kind {
            TagKind::Close => {
                if let Some(open) = stack.pop() {
                    keep[idx] = keep[open];
                }
                continue;
            }
            TagKind::Open(_) => stack.push(idx),
            _ => {}
        }
        let label = e.kind.label().unwrap_or_default();
        match parse_local(label) {
            Some(l) => {
                let global = match map.global(l) {
                    Some(g) => String::from(g),
                    None => {
                        let g = alloc.allocate();
                        map.insert(l, g.clone());
                        g
                    }
                };
                labels[idx] = Some(global);
            }
            None => {
                keep[idx] = false;
                diags.push(Diagnostic::new(
                    DiagnosticKind::InvalidLabel,
                    Some(e.anchor),
                    format!("chain index {label:?} is not a non-negative integer"),
                ));
            }
        }
    }
    let mut out = predicted.clone();
    out.events = predicted
        .events
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(i, e)| {
            let mut e = e.clone();
            if let Some(g) = labels[i].take() {
                e.kind = e.kind.with_label(g);
            }
            e
        })
        .collect();
    (out, diags)
}
