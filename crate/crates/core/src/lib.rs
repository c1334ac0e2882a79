//! Core of the corefline toolkit.
//!
//! Everything here is pure and allocation-only (`no_std` + `alloc`): the
//! CorefUD object model and its CoNLL-U codec, the four inline annotation
//! formats, the alignment-based cleaner that projects model output back onto
//! the input tokens, per-window chain reindexing, the windowed annotation
//! loop (generic over a [`pipeline::ModelBackend`]) and head-matched
//! coreference scoring.
//!
//! File IO, concrete backends and the command line live in the `corefline`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod align;
pub mod conllu;
pub mod diag;
pub mod formats;
pub mod metrics;
pub mod pipeline;
pub mod reindex;

pub use conllu::{
    parse_conllu, serialize_conllu, serialize_documents, Chain, ConlluError, Corpus, Dataset,
    Document, Mention, NodeId, Sentence, Span, Token, TokenRef,
};
pub use diag::{Diagnostic, DiagnosticKind};
pub use formats::{AnnotatedText, FormatKind, TagEvent, TagKind};
