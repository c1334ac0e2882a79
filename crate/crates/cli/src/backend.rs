use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use corefline_core::pipeline::{
    BackendError, BackendInfo, Completion, EmptyBackend, GenerationRequest, ModelBackend,
    OracleBackend, PipelineConfig,
};
use corefline_core::Document;
use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, BackendKind, DEFAULT_TOKEN_ENV};
use crate::error::{CliError, Result};
use crate::io::{from_jsonl, load_documents, read_text};

pub type SharedBackend = Box<dyn ModelBackend + Send + Sync>;

/// Plain text-completion endpoint: `{model, prompt, max_tokens, temperature}`
/// in, `choices[0].text` out.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
    max_tokens: u32,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
        max_tokens: u32,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            max_tokens,
        }
    }
}

impl ModelBackend for HttpBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: format!("http:{}", self.model),
            max_context: None,
            single_flight: false,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt: request.prompt,
            max_tokens: self.max_tokens,
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(BackendError::fatal(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::fatal(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::fatal("response has no choices"))
    }
}

/// Serves recorded completions keyed by document and window.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    completions: BTreeMap<(String, usize), String>,
}

impl ReplayBackend {
    pub fn new(records: impl IntoIterator<Item = Completion>) -> Self {
        Self {
            completions: records
                .into_iter()
                .map(|c| ((c.doc_id, c.window_index), c.completion))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(from_jsonl::<Completion>(
            &read_text(path)?,
            path,
        )?))
    }
}

impl ModelBackend for ReplayBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "replay".into(),
            max_context: None,
            single_flight: false,
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        self.completions
            .get(&(request.doc_id.to_string(), request.window_index))
            .cloned()
            .ok_or_else(|| {
                BackendError::fatal(format!(
                    "no recorded completion for {} window {}",
                    request.doc_id, request.window_index
                ))
            })
    }
}

/// Builds the configured backend. `input` is the job input, used as gold by
/// the oracle when no gold file is given.
pub fn build_backend(
    cfg: &BackendConfig,
    pipeline: &PipelineConfig,
    input: &[Document],
) -> Result<SharedBackend> {
    Ok(match cfg.kind {
        BackendKind::Empty => Box::new(EmptyBackend),
        BackendKind::Oracle => {
            let gold = match &cfg.gold {
                Some(p) => load_documents(p)?,
                None => input.to_vec(),
            };
            Box::new(
                OracleBackend::new(&gold, pipeline).map_err(|e| CliError::Data(e.to_string()))?,
            )
        }
        BackendKind::Replay => {
            let path = cfg
                .replay
                .as_deref()
                .ok_or_else(|| CliError::Config("replay backend needs `replay`".into()))?;
            Box::new(ReplayBackend::load(path)?)
        }
        BackendKind::Http => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Config("http backend needs `endpoint`".into()))?;
            let model = cfg
                .model
                .clone()
                .ok_or_else(|| CliError::Config("http backend needs `model`".into()))?;
            let var = cfg.token_env.as_deref().unwrap_or(DEFAULT_TOKEN_ENV);
            let token = std::env::var(var).ok().filter(|t| !t.is_empty());
            if token.is_none() {
                log::warn!("{var} is not set; sending requests without authorization");
            }
            Box::new(HttpBackend::new(
                endpoint,
                model,
                token,
                cfg.max_tokens,
                Duration::from_secs(cfg.timeout_secs),
            ))
        }
    })
}
