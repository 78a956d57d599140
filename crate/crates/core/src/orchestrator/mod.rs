//! Per-order session state machine and the engine that drives it.

mod engine;
mod intent;
mod session;

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Engine, OrderOptions};
pub use intent::{parse_order, Intent};
pub use session::{
    is_declared, replay_state, EventPayload, PourTelemetry, Session, SessionEvent, SessionState, SessionView, Stimulus,
    TRANSITIONS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    /// Resolve anomalies from the rule table instead of asking.
    pub unattended: bool,
    /// Orders whose best recipe scores below this fail.
    pub min_retrieval_score: f64,
    /// Simulation seed for sessions that do not supply one.
    pub default_seed: u64,
    /// Every n-th pour sample is kept in telemetry events.
    pub telemetry_stride: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { unattended: false, min_retrieval_score: 0.2, default_seed: 0, telemetry_stride: 10 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("{stimulus} is not accepted in state {state}")]
    IllegalStimulus { state: SessionState, stimulus: String },
    #[error("no outstanding prompt {0:?}")]
    UnknownAnomalyId(String),
    #[error("{choice:?} is not an option for {anomaly_id:?}")]
    IllegalOption { anomaly_id: String, choice: String },
}

/// Event timestamp source.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

/// Starts at a fixed instant and advances one millisecond per reading.
#[derive(Debug)]
pub struct StepClock {
    next_ms: AtomicI64,
}

impl StepClock {
    pub fn starting_at(start: DateTime<Utc>) -> Self {
        StepClock { next_ms: AtomicI64::new(start.timestamp_millis()) }
    }
}

impl Default for StepClock {
    fn default() -> Self {
        Self::starting_at(DateTime::<Utc>::UNIX_EPOCH)
    }
}

impl Clock for StepClock {
    fn now(&self) -> String {
        let ms = self.next_ms.fetch_add(1, Ordering::Relaxed);
        DateTime::<Utc>::from_timestamp_millis(ms)
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpeechError {
    #[error("utterance is not valid UTF-8")]
    NotText,
    #[error("empty utterance")]
    Empty,
}

pub trait SpeechInput: Send + Sync {
    fn transcribe(&self, audio: &[u8]) -> Result<String, SpeechError>;
}

pub trait SpeechOutput: Send + Sync {
    fn speak(&self, text: &str);
}

/// Text stands in for audio in both directions; spoken lines are kept.
#[derive(Debug, Default)]
pub struct TextLoopback {
    spoken: Mutex<Vec<String>>,
}

impl TextLoopback {
    pub fn spoken(&self) -> Vec<String> {
        self.spoken.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl SpeechInput for TextLoopback {
    fn transcribe(&self, audio: &[u8]) -> Result<String, SpeechError> {
        let text = std::str::from_utf8(audio).map_err(|_| SpeechError::NotText)?.trim();
        if text.is_empty() {
            return Err(SpeechError::Empty);
        }
        Ok(text.to_string())
    }
}

impl SpeechOutput for TextLoopback {
    fn speak(&self, text: &str) {
        self.spoken.lock().unwrap_or_else(|e| e.into_inner()).push(text.to_string());
    }
}
