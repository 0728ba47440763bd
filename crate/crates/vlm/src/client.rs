//! The HTTP agent: request, parse, validate, retry.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use harmony_core::harmonizer::{validate_plan, Agent, AgentError, HarmonizationPlan, RuleSet};
use harmony_core::taxonomy::TaxonomyMapping;
use harmony_core::PageRecord;
use rand::Rng;
use serde_json::Value;

use crate::parse::parse_plan;
use crate::prompt::build_request;
use crate::transcript::{AgentTranscript, TranscriptSink};
use crate::{AgentConfig, ConfigError};

/// Counting semaphore that also remembers the highest occupancy seen.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
    capacity: usize,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(capacity: usize) -> Self {
        Self {
            free: Mutex::new(capacity),
            cv: Condvar::new(),
            capacity,
            peak: AtomicUsize::new(0),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        self.peak.fetch_max(self.capacity - *free, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Exchange {
    Transport {
        status: Option<u16>,
        body: Option<String>,
        message: String,
    },
    Reply {
        status: u16,
        body: String,
    },
}

/// Text content of the first choice of a chat-completions response.
fn message_content(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err("response has no choices[0].message.content".into()),
    }
}

/// Agent that asks a vision-language model for each page's plan.
pub struct VlmAgent {
    config: AgentConfig,
    api_key: Option<String>,
    http: ureq::Agent,
    gate: Gate,
    transcripts: Arc<TranscriptSink>,
}

impl VlmAgent {
    /// Reads the API key from the configured environment variable. A missing
    /// key is allowed for local endpoints that do not check one.
    pub fn new(config: AgentConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} is not set; sending requests without authorization",
                config.api_key_env
            );
        }
        let http: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            gate: Gate::new(config.max_concurrency),
            config,
            api_key,
            http,
            transcripts: Arc::new(TranscriptSink::in_memory()),
        })
    }

    pub fn with_transcripts(mut self, sink: Arc<TranscriptSink>) -> Self {
        self.transcripts = sink;
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn transcripts(&self) -> &Arc<TranscriptSink> {
        &self.transcripts
    }

    /// Largest number of requests that were in flight at the same time.
    pub fn peak_in_flight(&self) -> usize {
        self.gate.peak.load(Ordering::SeqCst)
    }

    fn send(&self, body: &Value) -> Exchange {
        let _permit = self.gate.acquire();
        let mut req = self.http.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string();
                match text {
                    Ok(body) if (200..300).contains(&status) => Exchange::Reply { status, body },
                    Ok(body) => Exchange::Transport {
                        status: Some(status),
                        message: format!("HTTP {status}"),
                        body: Some(body),
                    },
                    Err(e) => Exchange::Transport {
                        status: Some(status),
                        body: None,
                        message: format!("reading response: {e}"),
                    },
                }
            }
            Err(e) => Exchange::Transport {
                status: None,
                body: None,
                message: e.to_string(),
            },
        }
    }

    fn backoff(&self, failures: u32) -> Duration {
        let base = self.config.backoff_base_ms;
        if base == 0 {
            return Duration::ZERO;
        }
        let exp = base.saturating_mul(1u64 << (failures - 1).min(16));
        let jitter = rand::rng().random_range(0..=base / 2);
        Duration::from_millis(exp.saturating_add(jitter))
    }
}

impl Agent for VlmAgent {
    fn name(&self) -> &str {
        "vlm"
    }

    fn retries_internally(&self) -> bool {
        true
    }

    fn propose(
        &self,
        page: &PageRecord,
        mapping: &TaxonomyMapping,
        rules: &RuleSet,
    ) -> Result<HarmonizationPlan, AgentError> {
        let max_attempts = 1 + self.config.max_retries;
        let mut feedback: Vec<String> = Vec::new();
        let mut transport_failures = 0;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            let (request, prompt) = build_request(page, mapping, rules, &self.config, &feedback)?;
            let body = serde_json::to_value(&request).expect("request serializes");
            let started = Instant::now();
            let exchange = self.send(&body);
            let latency_ms = started.elapsed().as_millis() as u64;
            let mut transcript = AgentTranscript {
                page_id: page.image_id,
                attempt,
                prompt,
                status: None,
                raw_response: None,
                parse_outcome: String::new(),
                validator_outcome: "not_run".into(),
                latency_ms,
            };

            let plan = match exchange {
                Exchange::Transport { status, body, message } => {
                    transcript.status = status;
                    transcript.raw_response = body;
                    transcript.parse_outcome = format!("transport_error: {message}");
                    self.transcripts.record(transcript);
                    last = message;
                    transport_failures += 1;
                    if attempt < max_attempts {
                        std::thread::sleep(self.backoff(transport_failures));
                    }
                    continue;
                }
                Exchange::Reply { status, body } => {
                    transcript.status = Some(status);
                    let parsed = message_content(&body).and_then(|content| {
                        transcript.raw_response = Some(content.clone());
                        parse_plan(&content).map_err(|e| e.to_string())
                    });
                    if transcript.raw_response.is_none() {
                        transcript.raw_response = Some(body);
                    }
                    match parsed {
                        Ok(plan) => plan,
                        Err(e) => {
                            transcript.parse_outcome = format!("parse_error: {e}");
                            self.transcripts.record(transcript);
                            feedback.push(format!("the response could not be parsed: {e}"));
                            last = e;
                            continue;
                        }
                    }
                }
            };
            transcript.parse_outcome = "ok".into();

            match validate_plan(page, &plan, rules) {
                Ok(()) => {
                    transcript.validator_outcome = "accepted".into();
                    self.transcripts.record(transcript);
                    return Ok(plan);
                }
                Err(violations) => {
                    let text = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
                    transcript.validator_outcome = text.clone();
                    self.transcripts.record(transcript);
                    log::debug!("page {} attempt {attempt}: plan rejected: {text}", page.image_id);
                    feedback.push(text.clone());
                    last = text;
                }
            }
        }
        Err(AgentError::Failed {
            attempts: max_attempts,
            reason: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(message_content(body).unwrap(), "hi");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(message_content(parts).unwrap(), "ab");
        assert!(message_content("{}").is_err());
        assert!(message_content("<html>").is_err());
    }

    #[test]
    fn gate_bounds_occupancy() {
        let gate = Arc::new(Gate::new(2));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = Arc::clone(&gate);
                std::thread::spawn(move || {
                    let _p = g.acquire();
                    std::thread::sleep(Duration::from_millis(10));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(gate.peak.load(Ordering::SeqCst), 2);
        assert_eq!(*gate.free.lock().unwrap(), 2);
    }

    #[test]
    fn backoff_grows() {
        let agent = VlmAgent::new(AgentConfig {
            backoff_base_ms: 100,
            ..AgentConfig::default()
        })
        .unwrap();
        let d1 = agent.backoff(1).as_millis();
        let d3 = agent.backoff(3).as_millis();
        assert!((100..=150).contains(&d1));
        assert!((400..=450).contains(&d3));
    }
}
