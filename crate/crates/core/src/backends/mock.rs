//! Fixture-driven mock backends for offline runs.
//!
//! Fixture files are JSON lines, one entry per line (`#` comments allowed):
//!
//! ```text
//! {"strict": true}
//! {"default": "Answer: A"}
//! {"fingerprint": "0123456789abcdef", "reply": "B"}
//! {"fingerprint": "fedcba9876543210", "replies": ["reject...", "accept..."]}
//! {"role": "verifier", "replies": ["ACCEPT: no ...", "ACCEPT: yes ..."]}
//! {"role": "reasoner", "replies": ["B", {"error": "timeout"}, "B"]}
//! {"role": "synthesizer", "fail": true, "reply": "scripted outage"}
//! ```
//!
//! Lookup order is exact fingerprint, then role default, then the global
//! default. Reply sequences advance per call and repeat their last entry
//! once exhausted; an `{"error": ...}` element makes that call fail. In
//! strict mode an unscripted request is an error.
//!
//! The synthesizer side is a deterministic geometric stub: it applies the
//! requested motion as a 2D affine proxy (horizontal shift from dx, vertical
//! from dy, uniform scale from dz, in-plane rotation from roll) and stamps
//! the instruction fingerprint into the PNG metadata. It exists to make the
//! pipeline, persistence, and verifier plumbing testable offline, not to be
//! geometrically meaningful.

use super::{
    chat_fingerprint, content_hash, synth_fingerprint, BackendError, CallLedger, ChatBackend,
    ChatRequest, ImageRef, Role, SynthBackend, SynthRequest,
};
use crate::geometry::CameraMotion;
use crate::imageio::{load_rgba8, save_rgba8_with_text, Rgba8Image};
use crate::instructions::{parse_numerical, DirectiveTable, ParseMode};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

/// Pixels of image shift per meter of lateral/vertical camera translation.
const PIXELS_PER_METER: f64 = 40.0;
/// Magnification per meter of forward motion.
const SCALE_PER_METER: f64 = 0.25;

/// One scripted reply: text, or a scripted backend failure.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ReplySpec {
    Text(String),
    Error { error: String },
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    fingerprint: Option<String>,
    role: Option<String>,
    reply: Option<String>,
    replies: Option<Vec<ReplySpec>>,
    default: Option<String>,
    strict: Option<bool>,
    fail: Option<bool>,
}

#[derive(Debug, Clone)]
struct Script {
    replies: Vec<ReplySpec>,
    cursor: usize,
}

impl Script {
    fn next(&mut self) -> Result<String, BackendError> {
        let idx = self.cursor.min(self.replies.len().saturating_sub(1));
        self.cursor += 1;
        match self.replies.get(idx) {
            Some(ReplySpec::Text(reply)) => Ok(reply.clone()),
            Some(ReplySpec::Error { error }) => Err(BackendError::Scripted(error.clone())),
            None => Ok(String::new()),
        }
    }
}

pub struct MockBackend {
    strict: bool,
    default_reply: Option<String>,
    by_fingerprint: Mutex<HashMap<String, Script>>,
    by_role: Mutex<HashMap<String, Script>>,
    directives: DirectiveTable,
}

impl MockBackend {
    /// A mock with no scripted replies; useful with role defaults added
    /// programmatically or when only the synthesizer stub is needed.
    pub fn empty() -> Self {
        MockBackend {
            strict: false,
            default_reply: None,
            by_fingerprint: Mutex::new(HashMap::new()),
            by_role: Mutex::new(HashMap::new()),
            directives: DirectiveTable::default_table(),
        }
    }

    pub fn from_fixture(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))?;
        Self::from_fixture_str(&text)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))
    }

    pub fn from_fixture_str(text: &str) -> Result<Self, String> {
        let mut backend = MockBackend::empty();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line)
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            backend.apply_line(parsed, lineno + 1)?;
        }
        Ok(backend)
    }

    fn apply_line(&mut self, line: FixtureLine, lineno: usize) -> Result<(), String> {
        if let Some(strict) = line.strict {
            self.strict = strict;
            return Ok(());
        }
        if let Some(default) = line.default {
            self.default_reply = Some(default);
            return Ok(());
        }
        let mut replies = match (line.replies, line.reply) {
            (Some(seq), None) if !seq.is_empty() => seq,
            (None, Some(one)) => vec![ReplySpec::Text(one)],
            (None, None) if line.fail == Some(true) => {
                vec![ReplySpec::Text(String::from("scripted failure"))]
            }
            _ => return Err(format!("line {lineno}: need exactly one of reply/replies")),
        };
        // `fail: true` turns every reply of the entry into an error.
        if line.fail.unwrap_or(false) {
            replies = replies
                .into_iter()
                .map(|r| match r {
                    ReplySpec::Text(text) => ReplySpec::Error { error: text },
                    err => err,
                })
                .collect();
        }
        let script = Script { replies, cursor: 0 };
        match (line.fingerprint, line.role) {
            (Some(fp), None) => {
                self.by_fingerprint.lock().unwrap().insert(fp, script);
            }
            (None, Some(role)) => {
                self.by_role.lock().unwrap().insert(role, script);
            }
            _ => return Err(format!("line {lineno}: need exactly one of fingerprint/role")),
        }
        Ok(())
    }

    /// Programmatic scripting, mirrors a `{"fingerprint": ...}` fixture line.
    pub fn script_fingerprint(&self, fingerprint: impl Into<String>, replies: Vec<String>) {
        self.by_fingerprint.lock().unwrap().insert(
            fingerprint.into(),
            Script { replies: replies.into_iter().map(ReplySpec::Text).collect(), cursor: 0 },
        );
    }

    /// Programmatic scripting, mirrors a `{"role": ...}` fixture line.
    pub fn script_role(&self, role: Role, replies: Vec<String>) {
        self.by_role.lock().unwrap().insert(
            role.as_str().to_string(),
            Script { replies: replies.into_iter().map(ReplySpec::Text).collect(), cursor: 0 },
        );
    }

    pub fn script_role_failure(&self, role: Role, message: impl Into<String>) {
        self.by_role.lock().unwrap().insert(
            role.as_str().to_string(),
            Script { replies: vec![ReplySpec::Error { error: message.into() }], cursor: 0 },
        );
    }

    fn lookup(&self, fingerprint: &str, role: &str) -> Result<String, BackendError> {
        if let Some(script) = self.by_fingerprint.lock().unwrap().get_mut(fingerprint) {
            return script.next();
        }
        if let Some(script) = self.by_role.lock().unwrap().get_mut(role) {
            return script.next();
        }
        if self.strict {
            return Err(BackendError::UnknownFingerprint(fingerprint.to_string()));
        }
        match &self.default_reply {
            Some(reply) => Ok(reply.clone()),
            None => Err(BackendError::UnknownFingerprint(fingerprint.to_string())),
        }
    }

    fn motion_from_instruction(&self, text: &str) -> CameraMotion {
        if let Ok(m) = parse_numerical(text, ParseMode::Lenient) {
            return m;
        }
        // Directive renderings look like "zoom in" or "zoom in (x0.50)".
        let base = text.split('(').next().unwrap_or(text);
        if let Some(m) = self.directives.motion(base) {
            let scale = text
                .split_once("(x")
                .and_then(|(_, rest)| rest.trim_end_matches(')').parse::<f64>().ok())
                .unwrap_or(1.0);
            return CameraMotion::new(
                m.dx * scale,
                m.dy * scale,
                m.dz * scale,
                m.yaw * scale,
                m.pitch * scale,
                m.roll * scale,
            );
        }
        CameraMotion::IDENTITY
    }
}

impl ChatBackend for MockBackend {
    fn chat(&self, req: &ChatRequest, ledger: &CallLedger) -> Result<String, BackendError> {
        req.validate()?;
        let reply = self.lookup(&chat_fingerprint(req), req.role.as_str())?;
        ledger.record_vlm(req.role);
        Ok(reply)
    }
}

impl SynthBackend for MockBackend {
    fn synthesize(
        &self,
        req: &SynthRequest,
        out_path: &Path,
        ledger: &CallLedger,
    ) -> Result<ImageRef, BackendError> {
        req.validate()?;
        let source = load_rgba8(&req.source_image.path).map_err(|e| {
            BackendError::Precondition(format!(
                "source image {}: {e}",
                req.source_image.path.display()
            ))
        })?;
        let fingerprint = synth_fingerprint(req);
        // A scripted failure for the synthesizer role (or this fingerprint)
        // simulates a generation outage.
        {
            let mut by_fp = self.by_fingerprint.lock().unwrap();
            let mut by_role = self.by_role.lock().unwrap();
            let script = by_fp
                .get_mut(&fingerprint)
                .or_else(|| by_role.get_mut(Role::Synthesizer.as_str()));
            if let Some(script) = script {
                script.next()?;
            }
        }
        let motion = self.motion_from_instruction(&req.instruction_text);
        let transformed = affine_proxy(&source, &motion);
        save_rgba8_with_text(
            out_path,
            &transformed,
            &[
                ("instruction-hash".to_string(), fingerprint),
                ("generator".to_string(), "mock-stub".to_string()),
            ],
        )
        .map_err(|e| BackendError::Decode(e.to_string()))?;
        let bytes = std::fs::read(out_path).map_err(|e| BackendError::Transport(e.to_string()))?;
        ledger.record_synth();
        Ok(ImageRef {
            path: out_path.to_path_buf(),
            content_hash: content_hash(&bytes),
        })
    }
}

/// Inverse-mapped nearest-neighbor affine. Content shifts opposite the
/// camera translation; forward motion magnifies; roll rotates in-plane.
fn affine_proxy(src: &Rgba8Image, motion: &CameraMotion) -> Rgba8Image {
    let (w, h) = (src.width as i64, src.height as i64);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let shift_x = -motion.dx * PIXELS_PER_METER;
    let shift_y = motion.dy * PIXELS_PER_METER;
    let scale = (1.0 + SCALE_PER_METER * motion.dz).clamp(0.2, 5.0);
    let theta = motion.roll.to_radians();
    let (s, c) = theta.sin_cos();
    let mut data = vec![0u8; (w * h * 4) as usize];
    for y in 0..h {
        for x in 0..w {
            // Invert: un-shift, un-rotate, un-scale around the center.
            let ux = x as f64 - cx - shift_x;
            let uy = y as f64 - cy - shift_y;
            let rx = (c * ux + s * uy) / scale;
            let ry = (-s * ux + c * uy) / scale;
            let sx = (rx + cx).round() as i64;
            let sy = (ry + cy).round() as i64;
            let dst = ((y * w + x) * 4) as usize;
            if sx >= 0 && sx < w && sy >= 0 && sy < h {
                let srci = ((sy * w + sx) * 4) as usize;
                data[dst..dst + 4].copy_from_slice(&src.data[srci..srci + 4]);
            } else {
                // Revealed region: opaque black.
                data[dst + 3] = 255;
            }
        }
    }
    Rgba8Image {
        width: src.width,
        height: src.height,
        data,
    }
}
