//! Harmonization agent backed by a vision-language model behind an
//! OpenAI-compatible chat-completions endpoint.
//!
//! The agent sends the page image, the numbered source annotations and the
//! target conventions, parses the returned plan, and checks it with
//! [`harmony_core::harmonizer::validate_plan`] before handing it back. Rejected
//! plans are retried with the violations fed back into the prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod transcript;

pub use client::VlmAgent;
pub use parse::{parse_plan, ParseError};
pub use prompt::{build_request, ChatRequest};
pub use transcript::{AgentTranscript, TranscriptSink};

pub const DEFAULT_API_KEY_ENV: &str = "HARMONIZER_VLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Upper bound on requests in flight across all pages.
    pub max_concurrency: usize,
    pub temperature: f64,
    /// First retry delay after a transport failure; doubles per retry.
    pub backoff_base_ms: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "vlm".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            max_retries: 2,
            max_concurrency: 4,
            temperature: 0.0,
            backoff_base_ms: 1000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("timeout_secs must be positive")]
    Timeout,
    #[error("max_concurrency must be at least 1")]
    Concurrency,
    #[error("endpoint must be an http(s) URL, got {0:?}")]
    Endpoint(String),
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.timeout_secs == 0 {
            return Err(ConfigError::Timeout);
        }
        if self.max_concurrency == 0 {
            return Err(ConfigError::Concurrency);
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(ConfigError::Endpoint(self.endpoint.clone()));
        }
        Ok(())
    }
}
