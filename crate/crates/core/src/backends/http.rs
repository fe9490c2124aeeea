//! HTTP chat and image-edit backends.
//!
//! Chat speaks the OpenAI-compatible shape: POST JSON with a single user
//! message whose content is a list of text and data-URL image parts; the
//! reply is the first choice's message content. Image editing POSTs
//! `{model, image, prompt}` with base64 PNG payloads and expects `{image}`
//! back. Unknown response fields are ignored.
//!
//! Retry policy: 429 and 5xx are retried with exponential backoff (base 1 s,
//! cap 30 s, jittered); other 4xx are not. Retried requests are byte-identical
//! to the original. Bearer tokens are read from the configured environment
//! variable at call time and never persisted.

use super::{
    content_hash, BackendConfig, BackendError, CallLedger, ChatBackend, ChatPart, ChatRequest,
    ImageRef, RateLimiter, SynthBackend, SynthRequest,
};
use crate::backends::{Clock, SystemClock};
use crate::imageio::decode_rgba8;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use serde::Deserialize;
use serde_json::json;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

const BACKOFF_BASE_MS: u64 = 1_000;
const BACKOFF_CAP_MS: u64 = 30_000;

struct HttpCommon {
    cfg: BackendConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl HttpCommon {
    fn new(cfg: BackendConfig, clock: Arc<dyn Clock>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = RateLimiter::new(cfg.requests_per_minute, clock.clone());
        Self {
            cfg,
            agent,
            limiter,
            clock,
        }
    }

    fn auth_header(&self) -> Result<Option<String>, BackendError> {
        if self.cfg.auth_env_var.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.cfg.auth_env_var) {
            Ok(secret) => Ok(Some(format!("Bearer {secret}"))),
            Err(_) => Err(BackendError::AuthMissing(self.cfg.auth_env_var.clone())),
        }
    }

    /// Sends `body`, retrying 429/5xx up to `max_retries` times. The body is
    /// serialized once so every retry is byte-identical.
    fn post_json(
        &self,
        body: &serde_json::Value,
        ledger: &CallLedger,
    ) -> Result<serde_json::Value, BackendError> {
        let auth = self.auth_header()?;
        let payload = serde_json::to_string(body)
            .map_err(|e| BackendError::Protocol(format!("serialize request: {e}")))?;
        let mut attempt: u32 = 0;
        loop {
            self.limiter.acquire();
            let mut request = self
                .agent
                .post(&self.cfg.endpoint_url)
                .header("Content-Type", "application/json");
            if let Some(auth) = &auth {
                request = request.header("Authorization", auth);
            }
            let outcome = request.send(payload.as_bytes());
            let status = match outcome {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        let value: serde_json::Value = response
                            .body_mut()
                            .read_json()
                            .map_err(|e| BackendError::Protocol(e.to_string()))?;
                        return Ok(value);
                    }
                    status
                }
                Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout),
                Err(e) => return Err(BackendError::Transport(e.to_string())),
            };
            let retryable = status == 429 || (500..600).contains(&status);
            if retryable && attempt < self.cfg.max_retries {
                attempt += 1;
                ledger.record_retry();
                self.clock.sleep(backoff_delay(attempt));
                continue;
            }
            return Err(if status == 429 {
                BackendError::RateLimited
            } else {
                BackendError::HttpStatus(status)
            });
        }
    }
}

fn backoff_delay(attempt: u32) -> Duration {
    let exp = BACKOFF_BASE_MS.saturating_mul(1u64 << (attempt - 1).min(10));
    let capped = exp.min(BACKOFF_CAP_MS);
    // Half-jitter: the deterministic half keeps backoff monotone-ish, the
    // random half decorrelates concurrent workers.
    let jittered = capped / 2 + rand::rng().random_range(0..=capped / 2);
    Duration::from_millis(jittered)
}

pub struct HttpChatBackend {
    common: HttpCommon,
}

impl HttpChatBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        Self::with_clock(cfg, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(cfg: BackendConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            common: HttpCommon::new(cfg, clock),
        }
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: serde_json::Value,
}

fn content_to_text(content: &serde_json::Value) -> Option<String> {
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => {
            let mut out = String::new();
            for part in parts {
                if let Some(text) = part.get("text").and_then(|t| t.as_str()) {
                    out.push_str(text);
                }
            }
            Some(out)
        }
        _ => None,
    }
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, req: &ChatRequest, ledger: &CallLedger) -> Result<String, BackendError> {
        req.validate()?;
        let mut content = Vec::new();
        for part in &req.parts {
            match part {
                ChatPart::Text { text } => content.push(json!({"type": "text", "text": text})),
                ChatPart::Image { image } => {
                    let bytes = std::fs::read(&image.path).map_err(|e| {
                        BackendError::Precondition(format!("image {}: {e}", image.path.display()))
                    })?;
                    let url = format!("data:image/png;base64,{}", BASE64.encode(bytes));
                    content.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
            }
        }
        let body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let value = self.common.post_json(&body, ledger)?;
        let completion: ChatCompletion = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("malformed chat response: {e}")))?;
        let reply = completion
            .choices
            .first()
            .and_then(|c| content_to_text(&c.message.content))
            .ok_or_else(|| BackendError::Protocol("response has no message content".into()))?;
        ledger.record_vlm(req.role);
        Ok(reply)
    }
}

pub struct HttpImageEditBackend {
    common: HttpCommon,
}

impl HttpImageEditBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        Self::with_clock(cfg, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(cfg: BackendConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            common: HttpCommon::new(cfg, clock),
        }
    }
}

#[derive(Deserialize)]
struct ImageEditResponse {
    image: String,
}

impl SynthBackend for HttpImageEditBackend {
    fn synthesize(
        &self,
        req: &SynthRequest,
        out_path: &Path,
        ledger: &CallLedger,
    ) -> Result<ImageRef, BackendError> {
        req.validate()?;
        let source = std::fs::read(&req.source_image.path).map_err(|e| {
            BackendError::Precondition(format!(
                "source image {}: {e}",
                req.source_image.path.display()
            ))
        })?;
        let body = json!({
            "model": req.model_id,
            "image": BASE64.encode(&source),
            "prompt": req.instruction_text,
        });
        let value = self.common.post_json(&body, ledger)?;
        let response: ImageEditResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("malformed edit response: {e}")))?;
        let bytes = BASE64
            .decode(response.image.as_bytes())
            .map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
        decode_rgba8(&bytes).map_err(|e| BackendError::Decode(e.to_string()))?;
        if let Some(parent) = out_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| BackendError::Transport(e.to_string()))?;
        }
        std::fs::write(out_path, &bytes).map_err(|e| BackendError::Transport(e.to_string()))?;
        ledger.record_synth();
        Ok(ImageRef {
            path: out_path.to_path_buf(),
            content_hash: content_hash(&bytes),
        })
    }
}
