use alloc::string::String;
use serde::{Deserialize, Serialize};

/// Non-fatal findings reported by decoding, cleaning, reindexing and merging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Token index the finding refers to, in the coordinate system of the
    /// stage that produced it (output tokens for decoding, input tokens
    /// after projection).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnmatchedClose,
    DanglingOpen,
    AutoClosed,
    OrphanTag,
    ReanchoredTag,
    DroppedTag,
    UnmappedToken,
    InvalidLabel,
    CrossSentenceSpan,
    DuplicateMention,
    BackendFailure,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind, token: Option<usize>, detail: impl Into<String>) -> Self {
        Self {
            kind,
            token,
            detail: detail.into(),
        }
    }
}
