//! Uniform access to chat-with-images and image-editing services, plus
//! fixture-driven mocks for offline runs.
//!
//! Every logical call is metered through a [`CallLedger`]; retries are
//! counted separately from calls so budget accounting stays exact. Requests
//! are identified by a stable 16-hex-char fingerprint of their content
//! (temperature excluded, so repeated vote runs can be scripted as reply
//! sequences).

mod http;
mod limiter;
mod mock;

pub use http::{HttpChatBackend, HttpImageEditBackend};
pub use limiter::{Clock, RateLimiter, SystemClock, VirtualClock};
pub use mock::{MockBackend, ReplySpec};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited after exhausting retries")]
    RateLimited,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("auth env var {0} is not set")]
    AuthMissing(String),
    #[error("response is not a decodable image: {0}")]
    Decode(String),
    #[error("no scripted reply for fingerprint {0}")]
    UnknownFingerprint(String),
    #[error("http status {0}")]
    HttpStatus(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

/// Pipeline roles a backend call can be made for. The first four are VLM
/// (chat) roles; `Synthesizer` is the image-editing role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    Reasoner,
    Verifier,
    Judge,
    Synthesizer,
}

impl Role {
    pub const VLM_ROLES: [Role; 4] = [Role::Planner, Role::Reasoner, Role::Verifier, Role::Judge];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Reasoner => "reasoner",
            Role::Verifier => "verifier",
            Role::Judge => "judge",
            Role::Synthesizer => "synthesizer",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planner" => Ok(Role::Planner),
            "reasoner" => Ok(Role::Reasoner),
            "verifier" => Ok(Role::Verifier),
            "judge" => Ok(Role::Judge),
            "synthesizer" => Ok(Role::Synthesizer),
            other => Err(format!("unknown role: {other}")),
        }
    }
}

/// An image referenced by path plus content hash, so transcripts stay
/// verifiable after files move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub content_hash: String,
}

impl ImageRef {
    pub fn from_file(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let bytes = std::fs::read(&path)?;
        Ok(ImageRef {
            path,
            content_hash: content_hash(&bytes),
        })
    }
}

/// Truncated sha256 of raw bytes; the hash used for image identity and
/// request fingerprints.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex_prefix(&digest, 16)
}

fn hex_prefix(digest: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChatPart {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub model_id: String,
    pub parts: Vec<ChatPart>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.parts.iter().any(|p| matches!(p, ChatPart::Text { .. })) {
            return Err(BackendError::Precondition("chat request needs a text part".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Precondition("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::Precondition("max_output_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub model_id: String,
    pub source_image: ImageRef,
    pub instruction_text: String,
}

impl SynthRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.instruction_text.trim().is_empty() {
            return Err(BackendError::Precondition("instruction text is empty".into()));
        }
        Ok(())
    }
}

/// Stable request identity: sha256 of (role, model, text parts, image
/// hashes), truncated to 16 hex chars. Temperature is deliberately excluded.
pub fn chat_fingerprint(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.role.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(req.model_id.as_bytes());
    hasher.update([0u8]);
    for part in &req.parts {
        match part {
            ChatPart::Text { text } => {
                hasher.update(b"t:");
                hasher.update(text.as_bytes());
            }
            ChatPart::Image { image } => {
                hasher.update(b"i:");
                hasher.update(image.content_hash.as_bytes());
            }
        }
        hasher.update([0x1f]);
    }
    hex_prefix(&hasher.finalize(), 16)
}

pub fn synth_fingerprint(req: &SynthRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(Role::Synthesizer.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(req.model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(req.instruction_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(req.source_image.content_hash.as_bytes());
    hex_prefix(&hasher.finalize(), 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    HttpImageEdit,
    Mock,
}

/// Declarative backend wiring. `auth_env_var` names the environment variable
/// holding the secret; the secret itself is read at call time and never
/// stored or serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    /// Mock backends replay this fixture file.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
}

fn default_model_id() -> String {
    "default-model".into()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_rpm() -> u32 {
    60
}

impl BackendConfig {
    pub fn mock(fixture: Option<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: String::new(),
            auth_env_var: String::new(),
            model_id: default_model_id(),
            timeout_secs: default_timeout(),
            max_retries: 0,
            requests_per_minute: default_rpm(),
            fixture,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(BackendError::Config("timeout must be > 0".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(BackendError::Config("requests_per_minute must be > 0".into()));
        }
        if matches!(self.kind, BackendKind::HttpChat | BackendKind::HttpImageEdit)
            && self.endpoint_url.is_empty()
        {
            return Err(BackendError::Config("http backend needs endpoint_url".into()));
        }
        Ok(())
    }
}

/// Monotone call counters shared across pipeline workers.
#[derive(Debug, Clone, Default)]
pub struct CallLedger {
    inner: Arc<Mutex<LedgerSnapshot>>,
}

/// Point-in-time copy of the ledger, also its serialized form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub vlm_calls: u64,
    pub synth_calls: u64,
    pub retries: u64,
    pub per_role: BTreeMap<String, u64>,
}

impl LedgerSnapshot {
    /// vlm_calls must equal the sum of the per-role VLM counters.
    pub fn is_consistent(&self) -> bool {
        let sum: u64 = Role::VLM_ROLES
            .iter()
            .map(|r| self.per_role.get(r.as_str()).copied().unwrap_or(0))
            .sum();
        sum == self.vlm_calls
    }
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_vlm(&self, role: Role) {
        let mut inner = self.inner.lock().unwrap();
        inner.vlm_calls += 1;
        *inner.per_role.entry(role.as_str().to_string()).or_insert(0) += 1;
    }

    pub fn record_synth(&self) {
        self.inner.lock().unwrap().synth_calls += 1;
    }

    pub fn record_retry(&self) {
        self.inner.lock().unwrap().retries += 1;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().unwrap().clone()
    }
}

/// Chat-with-images service: returns the reply text verbatim. One successful
/// call increments the VLM counter for the request's role exactly once.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest, ledger: &CallLedger) -> Result<String, BackendError>;
}

/// Image-editing service: renders the instructed view of the source image
/// and persists it at `out_path`. Synth calls are never counted as VLM calls.
pub trait SynthBackend: Send + Sync {
    fn synthesize(
        &self,
        req: &SynthRequest,
        out_path: &Path,
        ledger: &CallLedger,
    ) -> Result<ImageRef, BackendError>;
}

pub fn build_chat_backend(cfg: &BackendConfig) -> Result<Arc<dyn ChatBackend>, BackendError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::HttpChat => Ok(Arc::new(HttpChatBackend::new(cfg.clone()))),
        BackendKind::Mock => Ok(Arc::new(mock_from_config(cfg)?)),
        BackendKind::HttpImageEdit => {
            Err(BackendError::Config("http_image_edit cannot serve chat".into()))
        }
    }
}

pub fn build_synth_backend(cfg: &BackendConfig) -> Result<Arc<dyn SynthBackend>, BackendError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::HttpImageEdit => Ok(Arc::new(HttpImageEditBackend::new(cfg.clone()))),
        BackendKind::Mock => Ok(Arc::new(mock_from_config(cfg)?)),
        BackendKind::HttpChat => {
            Err(BackendError::Config("http_chat cannot serve image edits".into()))
        }
    }
}

fn mock_from_config(cfg: &BackendConfig) -> Result<MockBackend, BackendError> {
    match &cfg.fixture {
        Some(path) => MockBackend::from_fixture(path),
        None => Ok(MockBackend::empty()),
    }
}
