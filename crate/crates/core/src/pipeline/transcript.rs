//! Run records, per-sample transcript persistence, and the ordered results
//! sink.
//!
//! Layout per (sample, condition): `record.json` with the full trace,
//! `views/` holding generated PNGs named `vote{v}-round{r}.png`, and
//! `calls/` holding one JSON file per backend call (requests are stored
//! without any auth material; secrets never enter a request struct).
//!
//! The results stream is an append-only JSON-lines file of [`RunSummary`]
//! rows. Summaries carry no timestamps, so two runs with identical config,
//! fixtures, and seed produce byte-identical results files.

use super::prompts::VerifierVerdict;
use crate::backends::{ImageRef, LedgerSnapshot};
use crate::benchmark::{JudgedRecord, Outcome};
use crate::geometry::CameraMotion;
use crate::judging::{ErrorKind, JudgeMethod, JudgeOutcome, JudgeVerdict, LabelSource};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    Synth,
    Verify,
    Reason,
    Reflect,
    Judge,
    Attribute,
}

impl Stage {
    /// Stages whose successful events are VLM chat calls.
    pub fn is_vlm(&self) -> bool {
        matches!(
            self,
            Stage::Plan | Stage::Verify | Stage::Reason | Stage::Reflect | Stage::Judge | Stage::Attribute
        )
    }

    /// Stages counted against the per-vote-run budget (judging and
    /// attribution run after voting and are accounted separately).
    pub fn in_vote_budget(&self) -> bool {
        matches!(self, Stage::Plan | Stage::Verify | Stage::Reason | Stage::Reflect)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    /// 0-based vote run; judging/attribution events use the sentinel
    /// `u32::MAX` rendered as `None` here.
    pub vote_run: Option<u32>,
    pub round: u32,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    /// Relative path of the persisted call file under the transcript dir.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub call_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Wall-clock milliseconds since the Unix epoch. Excluded from summaries.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChosenView {
    /// The original image I_0 (baseline, text reflection, or every view
    /// rejected / failed).
    Original { image: String },
    /// A generated view accepted for reasoning.
    Generated { round: u32, image: ImageRef },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<CameraMotion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view: Option<ImageRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerifierVerdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteRunTrace {
    pub index: u32,
    /// Raw reasoner answer; `None` when the vote run failed outright.
    pub answer: Option<String>,
    pub flags: Vec<String>,
    pub rounds: Vec<RoundTrace>,
    pub chosen_view: ChosenView,
    pub vlm_calls: u32,
    pub synth_calls: u32,
}

/// Full per-sample execution trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub sample_id: String,
    pub condition: String,
    pub instruction_format: String,
    pub k: u32,
    pub seed: u64,
    pub temperature: f64,
    pub config_hash: String,
    pub manifest_hash: String,
    pub rubric_version: String,
    pub vote_runs: Vec<VoteRunTrace>,
    /// Raw answers of the successful vote runs, in vote order.
    pub votes: Vec<String>,
    pub final_answer: Option<String>,
    /// True when every vote run failed (excluded from accuracy).
    pub failed: bool,
    /// The last vote run's chosen view.
    pub chosen_view: ChosenView,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgment: Option<JudgeVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_label: Option<ErrorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_label_source: Option<LabelSource>,
    pub attribution_deferred: bool,
    pub events: Vec<StageEvent>,
    pub ledger: LedgerSnapshot,
}

impl RunRecord {
    pub fn outcome(&self) -> Option<Outcome> {
        if self.failed {
            return Some(Outcome::Failed);
        }
        self.judgment.as_ref().map(|j| match j.outcome {
            JudgeOutcome::Correct => Outcome::Correct,
            JudgeOutcome::Incorrect => Outcome::Incorrect,
        })
    }
}

/// Recomputed call counts; must agree with the live ledger or the engine has
/// a bookkeeping bug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallBudget {
    pub per_run_vlm: Vec<u32>,
    pub per_run_synth: Vec<u32>,
    /// Max across vote runs (uniform on scripted runs).
    pub vlm_per_vote_run: u32,
    pub synth_per_vote_run: u32,
    pub total_vlm: u64,
    pub total_synth: u64,
}

#[derive(Debug, thiserror::Error)]
#[error("ledger mismatch: events say vlm={events_vlm} synth={events_synth}, ledger says vlm={ledger_vlm} synth={ledger_synth}")]
pub struct LedgerMismatch {
    pub events_vlm: u64,
    pub events_synth: u64,
    pub ledger_vlm: u64,
    pub ledger_synth: u64,
}

/// Recomputes per-vote-run and total call counts from stage events and
/// cross-checks them against the record's live ledger.
pub fn call_budget(record: &RunRecord) -> Result<CallBudget, LedgerMismatch> {
    let runs = record.vote_runs.len().max(1);
    let mut per_run_vlm = vec![0u32; runs];
    let mut per_run_synth = vec![0u32; runs];
    let mut total_vlm = 0u64;
    let mut total_synth = 0u64;
    for event in &record.events {
        if !event.ok {
            continue;
        }
        if event.stage.is_vlm() {
            total_vlm += 1;
        }
        if event.stage == Stage::Synth {
            total_synth += 1;
        }
        if let Some(run) = event.vote_run {
            let run = run as usize;
            if run < runs {
                if event.stage.in_vote_budget() && event.stage.is_vlm() {
                    per_run_vlm[run] += 1;
                }
                if event.stage == Stage::Synth {
                    per_run_synth[run] += 1;
                }
            }
        }
    }
    if total_vlm != record.ledger.vlm_calls || total_synth != record.ledger.synth_calls {
        return Err(LedgerMismatch {
            events_vlm: total_vlm,
            events_synth: total_synth,
            ledger_vlm: record.ledger.vlm_calls,
            ledger_synth: record.ledger.synth_calls,
        });
    }
    Ok(CallBudget {
        vlm_per_vote_run: per_run_vlm.iter().copied().max().unwrap_or(0),
        synth_per_vote_run: per_run_synth.iter().copied().max().unwrap_or(0),
        per_run_vlm,
        per_run_synth,
        total_vlm,
        total_synth,
    })
}

/// One results-stream line. Carries no timestamps or absolute paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub sample_id: String,
    pub condition: String,
    pub instruction_format: String,
    pub k: u32,
    pub seed: u64,
    pub config_hash: String,
    pub manifest_hash: String,
    pub final_answer: Option<String>,
    pub votes: Vec<String>,
    pub failed: bool,
    pub outcome: Option<Outcome>,
    pub judge_method: Option<JudgeMethod>,
    pub error_label: Option<ErrorKind>,
    pub error_label_source: Option<LabelSource>,
    pub attribution_deferred: bool,
    pub chosen_view: ChosenView,
    pub flags: Vec<String>,
    pub vlm_calls: u64,
    pub synth_calls: u64,
    pub retries: u64,
    pub per_run_vlm: Vec<u32>,
    pub per_run_synth: Vec<u32>,
}

impl RunSummary {
    pub fn from_record(record: &RunRecord) -> Self {
        let budget = call_budget(record).ok();
        let mut flags: Vec<String> = Vec::new();
        for run in &record.vote_runs {
            for flag in &run.flags {
                if !flags.contains(flag) {
                    flags.push(flag.clone());
                }
            }
        }
        RunSummary {
            sample_id: record.sample_id.clone(),
            condition: record.condition.clone(),
            instruction_format: record.instruction_format.clone(),
            k: record.k,
            seed: record.seed,
            config_hash: record.config_hash.clone(),
            manifest_hash: record.manifest_hash.clone(),
            final_answer: record.final_answer.clone(),
            votes: record.votes.clone(),
            failed: record.failed,
            outcome: record.outcome(),
            judge_method: record.judgment.as_ref().map(|j| j.method),
            error_label: record.error_label,
            error_label_source: record.error_label_source,
            attribution_deferred: record.attribution_deferred,
            chosen_view: record.chosen_view.clone(),
            flags,
            vlm_calls: record.ledger.vlm_calls,
            synth_calls: record.ledger.synth_calls,
            retries: record.ledger.retries,
            per_run_vlm: budget.as_ref().map(|b| b.per_run_vlm.clone()).unwrap_or_default(),
            per_run_synth: budget.map(|b| b.per_run_synth).unwrap_or_default(),
        }
    }

    /// Adapter into the aggregation grain. `None` when the record was never
    /// judged (answered but unjudgeable records are excluded from accuracy).
    pub fn to_judged(&self) -> Option<JudgedRecord> {
        self.outcome.map(|outcome| JudgedRecord {
            sample_id: self.sample_id.clone(),
            outcome,
            error_label: self.error_label,
        })
    }
}

pub fn read_results(path: &Path) -> std::io::Result<Vec<RunSummary>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let summary: RunSummary = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{} line {}: {e}", path.display(), idx + 1),
            )
        })?;
        out.push(summary);
    }
    Ok(out)
}

/// Writes lines tagged with a sequence number in strictly increasing order,
/// buffering out-of-order arrivals; completed lines are flushed immediately
/// so an interrupted run keeps everything already released.
pub struct OrderedSink<W: Write> {
    out: W,
    next: usize,
    pending: BTreeMap<usize, String>,
}

impl<W: Write> OrderedSink<W> {
    pub fn new(out: W) -> Self {
        OrderedSink {
            out,
            next: 0,
            pending: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, index: usize, line: String) -> std::io::Result<()> {
        self.pending.insert(index, line);
        while let Some(line) = self.pending.remove(&self.next) {
            self.out.write_all(line.as_bytes())?;
            self.out.write_all(b"\n")?;
            self.next += 1;
        }
        self.out.flush()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }
}

/// Per-sample transcript directory handle; hands out call file paths and
/// persists requests/responses as they happen.
pub struct TranscriptWriter {
    dir: PathBuf,
    seq: AtomicU32,
}

#[derive(Debug, Serialize)]
struct CallFile<'a> {
    fingerprint: &'a str,
    role: &'a str,
    request: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

impl TranscriptWriter {
    pub fn create(dir: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir.join("views"))?;
        std::fs::create_dir_all(dir.join("calls"))?;
        Ok(TranscriptWriter { dir, seq: AtomicU32::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn view_path(&self, vote_run: u32, round: u32) -> PathBuf {
        self.dir.join("views").join(format!("vote{vote_run}-round{round}.png"))
    }

    /// Persists one call; returns the transcript-relative reference.
    pub fn write_call(
        &self,
        role: &str,
        fingerprint: &str,
        request: serde_json::Value,
        response: Result<&str, &str>,
    ) -> std::io::Result<String> {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        let name = format!("calls/{seq:03}-{role}.json");
        let file = CallFile {
            fingerprint,
            role,
            request,
            response: response.ok(),
            error: response.err(),
        };
        let body = serde_json::to_string_pretty(&file).expect("call file serializes");
        std::fs::write(self.dir.join(&name), body)?;
        Ok(name)
    }

    pub fn write_record(&self, record: &RunRecord) -> std::io::Result<()> {
        let body = serde_json::to_string_pretty(record).expect("record serializes");
        std::fs::write(self.dir.join("record.json"), body)
    }
}

pub fn load_record(dir: &Path) -> Option<RunRecord> {
    let text = std::fs::read_to_string(dir.join("record.json")).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
