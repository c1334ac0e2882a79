use std::path::{Path, PathBuf};

use corefline_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_TOKEN_ENV: &str = "COREFLINE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Replays the gold completions of a CoNLL-U file.
    Oracle,
    /// Replays recorded completions from JSONL.
    Replay,
    Http,
    /// Returns every window unannotated.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Overrides `pipeline.max_retries`.
    #[serde(default)]
    pub retries: Option<u32>,
    /// Completions file for `replay`.
    #[serde(default)]
    pub replay: Option<PathBuf>,
    /// Gold CoNLL-U for `oracle`; defaults to the job input.
    #[serde(default)]
    pub gold: Option<PathBuf>,
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_timeout() -> u64 {
    300
}

impl BackendConfig {
    pub fn of_kind(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            model: None,
            token_env: None,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            retries: None,
            replay: None,
            gold: None,
        }
    }
}

/// A reproducible job. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Where raw completions are written as replay JSONL.
    #[serde(default)]
    pub record: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl JobConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() && path.as_os_str() != "-" {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        fix(&mut self.record);
        fix(&mut self.diagnostics);
        if let Some(b) = &mut self.backend {
            fix(&mut b.replay);
            fix(&mut b.gold);
        }
    }

    /// Pipeline settings with the backend retry override applied.
    pub fn effective_pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        if let Some(r) = self.backend.as_ref().and_then(|b| b.retries) {
            p.max_retries = r;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            JobConfig::from_json(r#"{"pipeline": {"sentences_per_batch": 2}, "extra": 1}"#)
                .is_err()
        );
        assert!(JobConfig::from_json(r#"{"pipeline": {"batch": 2}}"#).is_err());
        assert!(JobConfig::from_json(r#"{"backend": {"kind": "empty", "url": "x"}}"#).is_err());
    }

    #[test]
    fn partial_pipeline_keeps_defaults() {
        let cfg = JobConfig::from_json(r#"{"pipeline": {"context_budget": 3072, "format": "minimal"}, "backend": {"kind": "oracle", "retries": 5}}"#).unwrap();
        let p = cfg.effective_pipeline();
        assert_eq!(p.context_budget, 3072);
        assert_eq!(p.sentences_per_batch, 4);
        assert_eq!(p.max_retries, 5);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut cfg = JobConfig::from_json(r#"{"input": "a.conllu", "output": "-", "backend": {"kind": "replay", "replay": "/abs.jsonl"}}"#).unwrap();
        cfg.resolve_paths(Path::new("/jobs"));
        assert_eq!(cfg.input.unwrap(), PathBuf::from("/jobs/a.conllu"));
        assert_eq!(cfg.output.unwrap(), PathBuf::from("-"));
        assert_eq!(
            cfg.backend.unwrap().replay.unwrap(),
            PathBuf::from("/abs.jsonl")
        );
    }
}
