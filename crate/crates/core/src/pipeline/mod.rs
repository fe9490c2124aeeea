//! The run-condition state machine: baseline, simple mode (plan → synthesize
//! → reason), iterative mode with verifier-gated refinement rounds, the
//! text-reflection baseline, and K-run majority voting.
//!
//! Budget contract per vote run, enforced by tests: baseline 1 VLM call,
//! simple 2, text reflection 1+R, iterative at most 2+2N. Every run
//! produces a final answer even when synthesis or verification fail — those
//! vote runs degrade to baseline behavior and are flagged.

pub mod prompts;
pub mod transcript;

pub use prompts::VerifierVerdict;
pub use transcript::{
    call_budget, load_record, read_results, CallBudget, ChosenView, OrderedSink, RoundTrace,
    RunRecord, RunSummary, Stage, StageEvent, TranscriptWriter, VoteRunTrace,
};

use crate::backends::{
    build_chat_backend, build_synth_backend, chat_fingerprint, synth_fingerprint, BackendConfig,
    BackendError, BackendKind, CallLedger, ChatBackend, ChatPart, ChatRequest, ImageRef,
    MockBackend, Role, SynthBackend, SynthRequest,
};
use crate::benchmark::Sample;
use crate::geometry::CameraMotion;
use crate::instructions::{
    discrete_to_motion, parse_numerical, planner_prompt, DirectiveTable, DiscreteDirective,
    InstructionFormat, ParseMode, ViewInstruction,
};
use crate::judging::{
    attribute_error, judge_answer, normalize_answer_key, AttributionError, AttributionInput,
    RUBRIC_PROMPT_VERSION,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which condition to run: single-pass baseline, one plan-synth-reason pass,
/// verifier-gated refinement, or text-only self-reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Simple,
    Iterative { n: u32 },
    TextReflection { r: u32 },
}

impl Condition {
    /// Stable directory/label form: `baseline`, `simple`, `iterative-n2`,
    /// `text-reflection-r1`.
    pub fn dir_name(&self) -> String {
        match self {
            Condition::Baseline => "baseline".into(),
            Condition::Simple => "simple".into(),
            Condition::Iterative { n } => format!("iterative-n{n}"),
            Condition::TextReflection { r } => format!("text-reflection-r{r}"),
        }
    }

    pub fn is_generative(&self) -> bool {
        matches!(self, Condition::Simple | Condition::Iterative { .. })
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Condition::Iterative { n } if *n == 0 => {
                Err("iterative requires n >= 1 (n = 0 is simple mode)".into())
            }
            Condition::TextReflection { r } if *r == 0 => {
                Err("text_reflection requires r >= 1 (r = 0 is the baseline)".into())
            }
            _ => Ok(()),
        }
    }
}

/// Backend wiring per pipeline role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleBackends {
    pub planner: BackendConfig,
    pub reasoner: BackendConfig,
    pub verifier: BackendConfig,
    pub judge: BackendConfig,
    pub synthesizer: BackendConfig,
}

impl RoleBackends {
    /// Every role served by one mock fixture; the common offline setup.
    pub fn all_mock(fixture: Option<PathBuf>) -> Self {
        let mock = BackendConfig::mock(fixture);
        RoleBackends {
            planner: mock.clone(),
            reasoner: mock.clone(),
            verifier: mock.clone(),
            judge: mock.clone(),
            synthesizer: mock,
        }
    }

    fn get(&self, role: Role) -> &BackendConfig {
        match role {
            Role::Planner => &self.planner,
            Role::Reasoner => &self.reasoner,
            Role::Verifier => &self.verifier,
            Role::Judge => &self.judge,
            Role::Synthesizer => &self.synthesizer,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub condition: Condition,
    pub instruction_format: InstructionFormat,
    /// Majority-vote runs per sample.
    pub k: u32,
    pub seed: u64,
    /// Sampling temperature for every VLM role; recorded per run.
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Attribute errors on incorrect generation-condition records with a
    /// judge call.
    pub attribute_errors: bool,
    pub backends: RoleBackends,
}

impl RunConfig {
    pub fn mock_default(condition: Condition, fixture: Option<PathBuf>) -> Self {
        RunConfig {
            condition,
            instruction_format: InstructionFormat::Numerical,
            k: 1,
            seed: 0,
            temperature: 1.0,
            max_output_tokens: 1024,
            attribute_errors: true,
            backends: RoleBackends::all_mock(fixture),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.condition.validate().map_err(EngineError::Config)?;
        if self.k == 0 {
            return Err(EngineError::Config("k must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(EngineError::Config("temperature must be >= 0".into()));
        }
        for role in [Role::Planner, Role::Reasoner, Role::Verifier, Role::Judge, Role::Synthesizer]
        {
            self.backends
                .get(role)
                .validate()
                .map_err(|e| EngineError::Config(format!("{}: {e}", role.as_str())))?;
        }
        Ok(())
    }

    /// Content hash over the canonical JSON form; the resume key component
    /// that keeps changed configs from reusing stale records.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Most frequent normalized answer; ties break toward the earliest vote run.
pub fn majority_vote<F: Fn(&str) -> String>(answers: &[String], normalize: F) -> Option<String> {
    if answers.is_empty() {
        return None;
    }
    let keys: Vec<String> = answers.iter().map(|a| normalize(a)).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for key in &keys {
        *counts.entry(key).or_insert(0) += 1;
    }
    let best = *counts.values().max().expect("non-empty");
    keys.iter().find(|k| counts[k.as_str()] == best).cloned()
}

/// Outcome of a manifest run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub completed: usize,
    pub skipped: usize,
    pub failed_samples: usize,
    pub cancelled: bool,
}

pub struct Engine {
    cfg: RunConfig,
    config_hash: String,
    manifest_hash: String,
    out_root: PathBuf,
    data_root: PathBuf,
    chat: BTreeMap<Role, std::sync::Arc<dyn ChatBackend>>,
    synth: std::sync::Arc<dyn SynthBackend>,
}

impl Engine {
    pub fn new(
        cfg: RunConfig,
        out_root: impl Into<PathBuf>,
        data_root: impl Into<PathBuf>,
        manifest_hash: impl Into<String>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        let config_hash = cfg.content_hash();
        // Mock backends sharing a fixture file share one instance, so a
        // single file can script a whole run across roles.
        let mut mock_cache: BTreeMap<Option<PathBuf>, std::sync::Arc<MockBackend>> = BTreeMap::new();
        let mut mock_for = |cfg: &BackendConfig| -> Result<std::sync::Arc<MockBackend>, BackendError> {
            if let Some(existing) = mock_cache.get(&cfg.fixture) {
                return Ok(existing.clone());
            }
            let backend = std::sync::Arc::new(match &cfg.fixture {
                Some(path) => MockBackend::from_fixture(path)?,
                None => MockBackend::empty(),
            });
            mock_cache.insert(cfg.fixture.clone(), backend.clone());
            Ok(backend)
        };
        let mut chat: BTreeMap<Role, std::sync::Arc<dyn ChatBackend>> = BTreeMap::new();
        for role in Role::VLM_ROLES {
            let role_cfg = cfg.backends.get(role);
            let backend: std::sync::Arc<dyn ChatBackend> = match role_cfg.kind {
                BackendKind::Mock => mock_for(role_cfg)?,
                _ => build_chat_backend(role_cfg)?,
            };
            chat.insert(role, backend);
        }
        let synth_cfg = cfg.backends.get(Role::Synthesizer);
        let synth: std::sync::Arc<dyn SynthBackend> = match synth_cfg.kind {
            BackendKind::Mock => mock_for(synth_cfg)?,
            _ => build_synth_backend(synth_cfg)?,
        };
        Ok(Engine {
            cfg,
            config_hash,
            manifest_hash: manifest_hash.into(),
            out_root: out_root.into(),
            data_root: data_root.into(),
            chat,
            synth,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out_root(&self) -> &Path {
        &self.out_root
    }

    pub fn transcript_dir(&self, sample_id: &str) -> PathBuf {
        self.out_root
            .join("transcripts")
            .join(sample_id)
            .join(self.cfg.condition.dir_name())
    }

    fn relativize(&self, image: &ImageRef) -> ImageRef {
        ImageRef {
            path: image
                .path
                .strip_prefix(&self.out_root)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| image.path.clone()),
            content_hash: image.content_hash.clone(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn chat_call(
        &self,
        ctx: &VoteCtx<'_>,
        stage: Stage,
        role: Role,
        vote_run: Option<u32>,
        round: u32,
        parts: Vec<ChatPart>,
        events: &mut Vec<StageEvent>,
    ) -> Result<String, BackendError> {
        let req = ChatRequest {
            role,
            model_id: self.cfg.backends.get(role).model_id.clone(),
            parts,
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
        };
        let fingerprint = chat_fingerprint(&req);
        let result = self.chat[&role].chat(&req, ctx.ledger);
        let call_ref = ctx
            .writer
            .write_call(
                role.as_str(),
                &fingerprint,
                serde_json::to_value(&req).expect("request serializes"),
                result.as_deref().map_err(|e| e.to_string()).as_deref().map_err(|e| e.as_str()),
            )
            .ok();
        events.push(StageEvent {
            stage,
            vote_run,
            round,
            ok: result.is_ok(),
            fingerprint: Some(fingerprint),
            call_ref,
            detail: result.as_ref().err().map(|e| e.to_string()),
            timestamp_ms: transcript::now_millis(),
        });
        result
    }

    fn synth_call(
        &self,
        ctx: &VoteCtx<'_>,
        vote_run: u32,
        round: u32,
        instruction_text: &str,
        events: &mut Vec<StageEvent>,
    ) -> Result<ImageRef, BackendError> {
        let req = SynthRequest {
            model_id: self.cfg.backends.get(Role::Synthesizer).model_id.clone(),
            source_image: ctx.source.clone(),
            instruction_text: instruction_text.to_string(),
        };
        let fingerprint = synth_fingerprint(&req);
        let out_path = ctx.writer.view_path(vote_run, round);
        let result = self.synth.synthesize(&req, &out_path, ctx.ledger);
        let call_ref = ctx
            .writer
            .write_call(
                Role::Synthesizer.as_str(),
                &fingerprint,
                serde_json::to_value(&req).expect("request serializes"),
                match &result {
                    Ok(image) => Ok(image.content_hash.as_str()),
                    Err(e) => Err(e.to_string()),
                }
                .as_deref()
                .map_err(|e| e.as_str()),
            )
            .ok();
        events.push(StageEvent {
            stage: Stage::Synth,
            vote_run: Some(vote_run),
            round,
            ok: result.is_ok(),
            fingerprint: Some(fingerprint),
            call_ref,
            detail: result.as_ref().err().map(|e| e.to_string()),
            timestamp_ms: transcript::now_millis(),
        });
        result
    }

    fn parse_planner_reply(&self, reply: &str) -> Result<ViewInstruction, String> {
        match self.cfg.instruction_format {
            InstructionFormat::Numerical => parse_numerical(reply, ParseMode::Lenient)
                .map(|motion| ViewInstruction::Numerical { motion })
                .map_err(|e| e.to_string()),
            InstructionFormat::Discrete => parse_discrete_reply(reply),
            InstructionFormat::Natural => {
                ViewInstruction::natural(reply.trim()).map_err(|e| e.to_string())
            }
        }
    }

    fn reason(
        &self,
        ctx: &VoteCtx<'_>,
        vote_run: u32,
        round: u32,
        view: Option<&ImageRef>,
        events: &mut Vec<StageEvent>,
    ) -> Result<String, BackendError> {
        let prompt = prompts::reasoner_prompt(&ctx.sample.question, &ctx.sample.choices, view.is_some());
        let mut parts = vec![
            ChatPart::Text { text: prompt },
            ChatPart::Image { image: ctx.source.clone() },
        ];
        if let Some(view) = view {
            parts.push(ChatPart::Image { image: view.clone() });
        }
        self.chat_call(ctx, Stage::Reason, Role::Reasoner, Some(vote_run), round, parts, events)
    }

    fn plan(
        &self,
        ctx: &VoteCtx<'_>,
        vote_run: u32,
        round: u32,
        prompt: &str,
        flags: &mut Vec<String>,
        events: &mut Vec<StageEvent>,
    ) -> Option<(ViewInstruction, Option<CameraMotion>)> {
        let parts = vec![
            ChatPart::Text { text: prompt.to_string() },
            ChatPart::Image { image: ctx.source.clone() },
        ];
        let reply = match self.chat_call(ctx, Stage::Plan, Role::Planner, Some(vote_run), round, parts, events)
        {
            Ok(reply) => reply,
            Err(e) => {
                push_flag(flags, format!("plan_call_failure: {e}"));
                return None;
            }
        };
        match self.parse_planner_reply(&reply) {
            Ok(instruction) => {
                let motion = match &instruction {
                    ViewInstruction::Numerical { motion } => Some(*motion),
                    ViewInstruction::Discrete { directive } => {
                        discrete_to_motion(directive, &DirectiveTable::default_table()).ok()
                    }
                    ViewInstruction::Natural { .. } => None,
                };
                Some((instruction, motion))
            }
            Err(reason) => {
                push_flag(flags, "plan_parse_failure".to_string());
                if let Some(event) = events.last_mut() {
                    event.detail = Some(format!("plan_parse_failure: {reason}"));
                }
                None
            }
        }
    }

    fn vote_baseline(&self, ctx: &VoteCtx<'_>, vote: u32, events: &mut Vec<StageEvent>) -> VoteRunTrace {
        let mut flags = Vec::new();
        let answer = match self.reason(ctx, vote, 0, None, events) {
            Ok(answer) => Some(answer),
            Err(e) => {
                push_flag(&mut flags, format!("vote_run_failed: {e}"));
                None
            }
        };
        VoteRunTrace {
            index: vote,
            answer,
            flags,
            rounds: Vec::new(),
            chosen_view: ChosenView::Original { image: ctx.sample.image.clone() },
            vlm_calls: 0,
            synth_calls: 0,
        }
    }

    fn vote_simple(&self, ctx: &VoteCtx<'_>, vote: u32, events: &mut Vec<StageEvent>) -> VoteRunTrace {
        let mut flags = Vec::new();
        let mut rounds = Vec::new();
        let prompt = planner_prompt(&ctx.sample.question, self.cfg.instruction_format);
        let view = match self.plan(ctx, vote, 0, &prompt, &mut flags, events) {
            Some((instruction, motion)) => {
                let text = instruction.synthesizer_text();
                match self.synth_call(ctx, vote, 0, &text, events) {
                    Ok(view) => {
                        rounds.push(RoundTrace {
                            round: 0,
                            instruction_text: Some(text),
                            motion,
                            view: Some(view.clone()),
                            verdict: None,
                        });
                        Some(view)
                    }
                    Err(e) => {
                        push_flag(&mut flags, format!("synth_failure: {e}"));
                        rounds.push(RoundTrace {
                            round: 0,
                            instruction_text: Some(text),
                            motion,
                            view: None,
                            verdict: None,
                        });
                        None
                    }
                }
            }
            None => None,
        };
        let answer = match self.reason(ctx, vote, 0, view.as_ref(), events) {
            Ok(answer) => Some(answer),
            Err(e) => {
                push_flag(&mut flags, format!("vote_run_failed: {e}"));
                None
            }
        };
        let chosen_view = match view {
            Some(image) => ChosenView::Generated { round: 0, image },
            None => ChosenView::Original { image: ctx.sample.image.clone() },
        };
        VoteRunTrace {
            index: vote,
            answer,
            flags,
            rounds,
            chosen_view,
            vlm_calls: 0,
            synth_calls: 0,
        }
    }

    fn vote_iterative(
        &self,
        ctx: &VoteCtx<'_>,
        vote: u32,
        n: u32,
        events: &mut Vec<StageEvent>,
    ) -> VoteRunTrace {
        let mut flags = Vec::new();
        let mut rounds: Vec<RoundTrace> = Vec::new();
        let base_prompt = planner_prompt(&ctx.sample.question, self.cfg.instruction_format);
        // Accepted views collected as (round, mean score, image).
        let mut accepted: Vec<(u32, f64, ImageRef)> = Vec::new();

        let mut current: Option<(String, ImageRef)> = match self.plan(ctx, vote, 0, &base_prompt, &mut flags, events) {
            Some((instruction, motion)) => {
                let text = instruction.synthesizer_text();
                match self.synth_call(ctx, vote, 0, &text, events) {
                    Ok(view) => {
                        rounds.push(RoundTrace {
                            round: 0,
                            instruction_text: Some(text.clone()),
                            motion,
                            view: Some(view.clone()),
                            verdict: None,
                        });
                        Some((text, view))
                    }
                    Err(e) => {
                        push_flag(&mut flags, format!("synth_failure: {e}"));
                        rounds.push(RoundTrace {
                            round: 0,
                            instruction_text: Some(text),
                            motion,
                            view: None,
                            verdict: None,
                        });
                        None
                    }
                }
            }
            None => None,
        };

        if current.is_some() {
            for round in 1..=n {
                let (instruction_text, view) = current.clone().expect("loop precondition");
                let verify_parts = vec![
                    ChatPart::Text {
                        text: prompts::verifier_prompt(&ctx.sample.question, &instruction_text),
                    },
                    ChatPart::Image { image: ctx.source.clone() },
                    ChatPart::Image { image: view.clone() },
                ];
                let reply = match self.chat_call(
                    ctx,
                    Stage::Verify,
                    Role::Verifier,
                    Some(vote),
                    round - 1,
                    verify_parts,
                    events,
                ) {
                    Ok(reply) => reply,
                    Err(e) => {
                        push_flag(&mut flags, format!("verify_call_failure: {e}"));
                        break;
                    }
                };
                let verdict = match prompts::parse_verifier_reply(&reply) {
                    Some(verdict) => verdict,
                    None => {
                        push_flag(&mut flags, "verifier_unparseable".to_string());
                        VerifierVerdict::accept_with_warning()
                    }
                };
                let verdict_round = rounds.len() as u32 - 1;
                if let Some(last) = rounds.last_mut() {
                    last.verdict = Some(verdict.clone());
                }
                if verdict.accepted {
                    accepted.push((verdict_round, verdict.mean_score(), view));
                    break;
                }
                // Rejected: re-plan with the feedback appended, then re-synthesize.
                let revised = prompts::replan_prompt(&base_prompt, &instruction_text, &verdict.feedback);
                match self.plan(ctx, vote, round, &revised, &mut flags, events) {
                    Some((instruction, motion)) => {
                        let text = instruction.synthesizer_text();
                        match self.synth_call(ctx, vote, round, &text, events) {
                            Ok(new_view) => {
                                rounds.push(RoundTrace {
                                    round,
                                    instruction_text: Some(text.clone()),
                                    motion,
                                    view: Some(new_view.clone()),
                                    verdict: None,
                                });
                                current = Some((text, new_view));
                            }
                            Err(e) => {
                                push_flag(&mut flags, format!("synth_failure: {e}"));
                                rounds.push(RoundTrace {
                                    round,
                                    instruction_text: Some(text),
                                    motion,
                                    view: None,
                                    verdict: None,
                                });
                                break;
                            }
                        }
                    }
                    None => break,
                }
            }
        }

        // I* = best accepted view: highest mean verifier score, ties to the
        // latest round; fall back to the original image when none accepted.
        let best = accepted
            .into_iter()
            .max_by(|(ra, sa, _), (rb, sb, _)| {
                sa.partial_cmp(sb).expect("finite scores").then(ra.cmp(rb))
            })
            .map(|(round, _, image)| (round, image));
        let answer = match self.reason(ctx, vote, n, best.as_ref().map(|(_, v)| v), events) {
            Ok(answer) => Some(answer),
            Err(e) => {
                push_flag(&mut flags, format!("vote_run_failed: {e}"));
                None
            }
        };
        let chosen_view = match best {
            Some((round, image)) => ChosenView::Generated { round, image },
            None => ChosenView::Original { image: ctx.sample.image.clone() },
        };
        VoteRunTrace {
            index: vote,
            answer,
            flags,
            rounds,
            chosen_view,
            vlm_calls: 0,
            synth_calls: 0,
        }
    }

    fn vote_reflection(
        &self,
        ctx: &VoteCtx<'_>,
        vote: u32,
        r: u32,
        events: &mut Vec<StageEvent>,
    ) -> VoteRunTrace {
        let mut flags = Vec::new();
        let mut answer = match self.reason(ctx, vote, 0, None, events) {
            Ok(answer) => Some(answer),
            Err(e) => {
                push_flag(&mut flags, format!("vote_run_failed: {e}"));
                None
            }
        };
        if answer.is_some() {
            for round in 1..=r {
                let prior = answer.clone().expect("checked above");
                let parts = vec![
                    ChatPart::Text {
                        text: prompts::reflection_prompt(&ctx.sample.question, &ctx.sample.choices, &prior),
                    },
                    ChatPart::Image { image: ctx.source.clone() },
                ];
                match self.chat_call(ctx, Stage::Reflect, Role::Reasoner, Some(vote), round, parts, events)
                {
                    // The last round's answer wins.
                    Ok(revised) => answer = Some(revised),
                    Err(e) => {
                        push_flag(&mut flags, format!("reflection_call_failure: {e}"));
                        break;
                    }
                }
            }
        }
        VoteRunTrace {
            index: vote,
            answer,
            flags,
            rounds: Vec::new(),
            chosen_view: ChosenView::Original { image: ctx.sample.image.clone() },
            vlm_calls: 0,
            synth_calls: 0,
        }
    }

    /// Runs one sample under the configured condition: K sequential vote
    /// runs, majority vote, judging, and (when applicable) error
    /// attribution. Writes the transcript and returns the full record.
    pub fn run_sample(&self, sample: &Sample) -> Result<RunRecord, EngineError> {
        let dir = self.transcript_dir(&sample.id);
        let writer = TranscriptWriter::create(dir)?;
        let ledger = CallLedger::new();
        let mut events: Vec<StageEvent> = Vec::new();
        let mut vote_runs: Vec<VoteRunTrace> = Vec::new();

        let source_path = self.data_root.join(&sample.image);
        let source = ImageRef::from_file(&source_path);
        match source {
            Ok(source) => {
                let ctx = VoteCtx {
                    sample,
                    source: &source,
                    ledger: &ledger,
                    writer: &writer,
                };
                for vote in 0..self.cfg.k {
                    let before = ledger.snapshot();
                    let mut trace = match self.cfg.condition {
                        Condition::Baseline => self.vote_baseline(&ctx, vote, &mut events),
                        Condition::Simple => self.vote_simple(&ctx, vote, &mut events),
                        Condition::Iterative { n } => self.vote_iterative(&ctx, vote, n, &mut events),
                        Condition::TextReflection { r } => {
                            self.vote_reflection(&ctx, vote, r, &mut events)
                        }
                    };
                    let after = ledger.snapshot();
                    trace.vlm_calls = (after.vlm_calls - before.vlm_calls) as u32;
                    trace.synth_calls = (after.synth_calls - before.synth_calls) as u32;
                    vote_runs.push(trace);
                }
            }
            Err(e) => {
                let mut trace = VoteRunTrace {
                    index: 0,
                    answer: None,
                    flags: vec![format!("source_image_unreadable: {e}")],
                    rounds: Vec::new(),
                    chosen_view: ChosenView::Original { image: sample.image.clone() },
                    vlm_calls: 0,
                    synth_calls: 0,
                };
                push_flag(&mut trace.flags, "vote_run_failed: source image unreadable".into());
                vote_runs.push(trace);
            }
        }

        let votes: Vec<String> = vote_runs.iter().filter_map(|v| v.answer.clone()).collect();
        let failed = votes.is_empty();
        let final_answer = majority_vote(&votes, |raw| normalize_answer_key(raw, &sample.choices));

        let mut judgment = None;
        let mut error_label = None;
        let mut error_label_source = None;
        let mut attribution_deferred = false;
        if let Some(answer) = &final_answer {
            let judge_cfg = self.cfg.backends.get(Role::Judge);
            let before = ledger.snapshot().vlm_calls;
            match judge_answer(
                self.chat[&Role::Judge].as_ref(),
                &judge_cfg.model_id,
                answer,
                &sample.question,
                &sample.choices,
                &sample.ground_truth,
                &ledger,
            ) {
                Ok(verdict) => {
                    if ledger.snapshot().vlm_calls > before {
                        events.push(StageEvent {
                            stage: Stage::Judge,
                            vote_run: None,
                            round: 0,
                            ok: true,
                            fingerprint: None,
                            call_ref: None,
                            detail: Some("semantic answer judging".into()),
                            timestamp_ms: transcript::now_millis(),
                        });
                    }
                    judgment = Some(verdict);
                }
                Err(e) => {
                    if let Some(run) = vote_runs.last_mut() {
                        push_flag(&mut run.flags, format!("judge_failure: {e}"));
                    }
                }
            }
        }

        let incorrect = matches!(
            judgment.as_ref().map(|j| j.outcome),
            Some(crate::judging::JudgeOutcome::Incorrect)
        );
        if incorrect && self.cfg.condition.is_generative() && self.cfg.attribute_errors {
            let last_run = vote_runs.last().expect("at least one vote run");
            let last_round = last_run.rounds.last();
            let input = AttributionInput {
                question: sample.question.clone(),
                instruction_text: last_round.and_then(|r| r.instruction_text.clone()),
                generated_view: last_round.and_then(|r| r.view.clone()),
                plan_parse_failure: last_run.flags.iter().any(|f| f.starts_with("plan_parse_failure") || f.starts_with("plan_call_failure")),
                synth_failure: last_run.flags.iter().any(|f| f.starts_with("synth_failure")),
            };
            let judge_cfg = self.cfg.backends.get(Role::Judge);
            let before = ledger.snapshot().vlm_calls;
            match attribute_error(self.chat[&Role::Judge].as_ref(), &judge_cfg.model_id, &input, &ledger)
            {
                Ok(label) => {
                    error_label = Some(label.label);
                    error_label_source = Some(label.source);
                }
                Err(AttributionError::NotApplicable(_)) => {
                    // e.g. planning produced nothing usable; mechanically a
                    // wrong instruction.
                    error_label = Some(crate::judging::ErrorKind::WrongInstruction);
                    error_label_source = Some(crate::judging::LabelSource::Automated);
                }
                Err(_) => attribution_deferred = true,
            }
            // Event `ok` tracks the chat call itself (which is what the
            // ledger counts); deferral is recorded in the detail.
            if ledger.snapshot().vlm_calls > before {
                events.push(StageEvent {
                    stage: Stage::Attribute,
                    vote_run: None,
                    round: 0,
                    ok: true,
                    fingerprint: None,
                    call_ref: None,
                    detail: Some(if attribution_deferred {
                        "error attribution (deferred)".into()
                    } else {
                        "error attribution".into()
                    }),
                    timestamp_ms: transcript::now_millis(),
                });
            }
        }

        // Relativize generated-view paths so records are portable and
        // byte-stable across output roots.
        for run in &mut vote_runs {
            for round in &mut run.rounds {
                if let Some(view) = &round.view {
                    round.view = Some(self.relativize(view));
                }
            }
            if let ChosenView::Generated { image, round } = &run.chosen_view {
                run.chosen_view = ChosenView::Generated {
                    round: *round,
                    image: self.relativize(image),
                };
            }
        }
        let chosen_view = vote_runs
            .last()
            .map(|run| run.chosen_view.clone())
            .unwrap_or(ChosenView::Original { image: sample.image.clone() });

        let record = RunRecord {
            schema_version: transcript::RECORD_SCHEMA_VERSION,
            sample_id: sample.id.clone(),
            condition: self.cfg.condition.dir_name(),
            instruction_format: self.cfg.instruction_format.as_str().to_string(),
            k: self.cfg.k,
            seed: self.cfg.seed,
            temperature: self.cfg.temperature,
            config_hash: self.config_hash.clone(),
            manifest_hash: self.manifest_hash.clone(),
            rubric_version: RUBRIC_PROMPT_VERSION.to_string(),
            vote_runs,
            votes,
            final_answer,
            failed,
            chosen_view,
            judgment,
            error_label,
            error_label_source,
            attribution_deferred,
            events,
            ledger: ledger.snapshot(),
        };
        // The budget recomputation doubles as an engine self-check.
        if let Err(mismatch) = call_budget(&record) {
            return Err(EngineError::Config(format!(
                "internal ledger mismatch on sample {}: {mismatch}",
                sample.id
            )));
        }
        writer.write_record(&record)?;
        Ok(record)
    }

    /// Runs samples under a bounded worker pool, streaming one summary line
    /// per sample to `results_path` in manifest order. With `resume`,
    /// samples whose transcript matches the current config and manifest are
    /// loaded instead of re-executed.
    pub fn run_samples(
        &self,
        samples: &[Sample],
        workers: usize,
        resume: bool,
        results_path: &Path,
        cancel: &AtomicBool,
    ) -> Result<RunReport, EngineError> {
        if let Some(parent) = results_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(results_path)?;
        let sink = Mutex::new(OrderedSink::new(BufWriter::new(file)));
        let cursor = AtomicUsize::new(0);
        let report = Mutex::new(RunReport::default());
        let first_error: Mutex<Option<EngineError>> = Mutex::new(None);
        let workers = workers.max(1).min(samples.len().max(1));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if cancel.load(Ordering::SeqCst) {
                        break;
                    }
                    let index = cursor.fetch_add(1, Ordering::SeqCst);
                    if index >= samples.len() {
                        break;
                    }
                    let sample = &samples[index];
                    let existing = if resume {
                        load_record(&self.transcript_dir(&sample.id)).filter(|record| {
                            record.config_hash == self.config_hash
                                && record.manifest_hash == self.manifest_hash
                        })
                    } else {
                        None
                    };
                    let (record, skipped) = match existing {
                        Some(record) => (record, true),
                        None => match self.run_sample(sample) {
                            Ok(record) => (record, false),
                            Err(e) => {
                                let mut slot = first_error.lock().unwrap();
                                if slot.is_none() {
                                    *slot = Some(e);
                                }
                                cancel.store(true, Ordering::SeqCst);
                                break;
                            }
                        },
                    };
                    let summary = RunSummary::from_record(&record);
                    {
                        let mut report = report.lock().unwrap();
                        report.completed += 1;
                        if skipped {
                            report.skipped += 1;
                        }
                        if summary.failed {
                            report.failed_samples += 1;
                        }
                    }
                    let line = serde_json::to_string(&summary).expect("summary serializes");
                    let mut sink = sink.lock().unwrap();
                    if let Err(e) = sink.push(index, line) {
                        let mut slot = first_error.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(EngineError::Io(e));
                        }
                        cancel.store(true, Ordering::SeqCst);
                        break;
                    }
                });
            }
        });

        if let Some(error) = first_error.into_inner().unwrap() {
            return Err(error);
        }
        let mut report = report.into_inner().unwrap();
        report.cancelled = cancel.load(Ordering::SeqCst);
        Ok(report)
    }
}

struct VoteCtx<'a> {
    sample: &'a Sample,
    source: &'a ImageRef,
    ledger: &'a CallLedger,
    writer: &'a TranscriptWriter,
}

fn push_flag(flags: &mut Vec<String>, flag: String) {
    if !flags.contains(&flag) {
        flags.push(flag);
    }
}

/// Resolves a discrete-format planner reply against the default vocabulary:
/// exactly one directive name must occur in the reply, optionally followed
/// by a magnitude token like `x0.5`.
fn parse_discrete_reply(reply: &str) -> Result<ViewInstruction, String> {
    let normalized = reply
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let padded = format!(" {normalized} ");
    let table = DirectiveTable::default_table();
    let mut matches: Vec<&str> = Vec::new();
    for name in table.names() {
        let needle = format!(" {} ", name.replace('_', " "));
        if padded.contains(&needle) {
            matches.push(name);
        }
    }
    // Compound names contain their parts ("side view left" also matches
    // "move left" when spelled out); prefer the longest match when one
    // subsumes another.
    matches.sort_by_key(|name| std::cmp::Reverse(name.len()));
    let distinct: Vec<&str> = matches
        .iter()
        .filter(|name| {
            !matches.iter().any(|longer| {
                longer.len() > name.len() && longer.replace('_', " ").contains(&name.replace('_', " "))
            })
        })
        .copied()
        .collect();
    match distinct.as_slice() {
        [single] => {
            let magnitude = regex::Regex::new(r"x\s*([0-9]+(?:\.[0-9]+)?)")
                .expect("magnitude regex")
                .captures(&normalized)
                .and_then(|c| c[1].parse::<f64>().ok());
            Ok(ViewInstruction::Discrete {
                directive: DiscreteDirective {
                    name: single.to_string(),
                    magnitude_override: magnitude,
                },
            })
        }
        [] => Err(format!("no directive name found in reply: {reply:?}")),
        many => Err(format!("multiple directives named: {many:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_rules() {
        let id = |s: &str| s.to_string();
        assert_eq!(
            majority_vote(&["A".into(), "A".into(), "B".into()], id),
            Some("A".into())
        );
        // Three-way tie breaks toward the earliest vote run.
        assert_eq!(
            majority_vote(&["A".into(), "B".into(), "C".into()], id),
            Some("A".into())
        );
        assert_eq!(majority_vote(&[], id), None);
    }

    #[test]
    fn majority_vote_with_choice_normalization() {
        use crate::benchmark::Choice;
        let choices = vec![
            Choice { id: "A".into(), text: "right".into() },
            Choice { id: "B".into(), text: "left".into() },
        ];
        let votes = vec!["b.".to_string(), "B".to_string(), "B) left".to_string()];
        let result = majority_vote(&votes, |raw| normalize_answer_key(raw, &choices));
        assert_eq!(result, Some("B".into()));
    }

    #[test]
    fn condition_validation_and_names() {
        assert!(Condition::Iterative { n: 0 }.validate().is_err());
        assert!(Condition::TextReflection { r: 0 }.validate().is_err());
        assert_eq!(Condition::Iterative { n: 2 }.dir_name(), "iterative-n2");
        assert_eq!(Condition::TextReflection { r: 1 }.dir_name(), "text-reflection-r1");
        assert!(Condition::Simple.is_generative());
        assert!(!Condition::Baseline.is_generative());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::mock_default(Condition::Simple, None);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.k = 3;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn discrete_reply_parsing() {
        let instr = parse_discrete_reply("I would zoom in here").unwrap();
        match instr {
            ViewInstruction::Discrete { directive } => {
                assert_eq!(directive.name, "zoom_in");
                assert_eq!(directive.magnitude_override, None);
            }
            other => panic!("{other:?}"),
        }
        let instr = parse_discrete_reply("pan_left x0.5").unwrap();
        match instr {
            ViewInstruction::Discrete { directive } => {
                assert_eq!(directive.name, "pan_left");
                assert_eq!(directive.magnitude_override, Some(0.5));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_discrete_reply("just look around").is_err());
        assert!(parse_discrete_reply("zoom in then zoom out").is_err());
        // Compound directive is not confused with its embedded parts.
        let instr = parse_discrete_reply("side view left").unwrap();
        match instr {
            ViewInstruction::Discrete { directive } => assert_eq!(directive.name, "side_view_left"),
            other => panic!("{other:?}"),
        }
    }
}
