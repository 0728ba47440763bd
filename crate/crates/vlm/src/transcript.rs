//! Per-attempt audit records.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub page_id: u64,
    pub attempt: u32,
    /// Text part of the request (the image is omitted).
    pub prompt: String,
    /// HTTP status, when a response arrived.
    pub status: Option<u16>,
    /// Model output exactly as received; replays `parse_plan` offline.
    pub raw_response: Option<String>,
    /// `ok`, `transport_error: ...` or `parse_error: ...`.
    pub parse_outcome: String,
    /// `accepted`, the violation list, or `not_run`.
    pub validator_outcome: String,
    pub latency_ms: u64,
}

/// Append-only store for transcripts, shared across worker threads.
///
/// Records are kept in memory and, when a file is attached, appended to it as
/// JSON lines as soon as they are recorded.
#[derive(Debug, Default)]
pub struct TranscriptSink {
    records: Mutex<Vec<AgentTranscript>>,
    file: Option<Mutex<BufWriter<File>>>,
}

impl TranscriptSink {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Mutex::default(),
            file: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn record(&self, t: AgentTranscript) {
        if let Some(f) = &self.file {
            let mut f = f.lock().expect("transcript file lock");
            let line = serde_json::to_string(&t).expect("transcripts serialize");
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                log::error!("could not append transcript: {e}");
            }
        }
        self.records.lock().expect("transcript lock").push(t);
    }

    pub fn records(&self) -> Vec<AgentTranscript> {
        self.records.lock().expect("transcript lock").clone()
    }
}
