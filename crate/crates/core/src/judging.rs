//! Answer correctness (deterministic string matching first, semantic judge
//! when ambiguous), error attribution over failed generation-condition runs,
//! and the IC/CO/RN novel-view quality rubric.

use crate::backends::{BackendError, CallLedger, ChatBackend, ChatPart, ChatRequest, ImageRef, Role};
use crate::benchmark::Choice;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Version stamp recorded alongside every judge/rubric transcript; bump when
/// any judging prompt text changes.
pub const RUBRIC_PROMPT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    Correct,
    Incorrect,
    Ambiguous,
}

fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    collapsed
        .join(" ")
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

const DECORATIONS: &[char] = &['.', ')', ':', '-', ']'];

/// Extracts a leading option letter. Entire-residue forms ("B", "(b)",
/// "b.") return `(letter, "")`; decorated prefixes ("b) the red car")
/// return the trailing text. A bare letter followed by plain text is not
/// treated as an option letter ("a red car" is not choice A).
fn leading_letter(normalized: &str) -> Option<(String, String)> {
    let mut rest = normalized;
    let wrapped = rest.starts_with('(');
    if wrapped {
        rest = &rest[1..];
    }
    let letter: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    if letter.is_empty() || letter.chars().count() > 1 {
        return None;
    }
    rest = &rest[letter.len()..];
    let mut decorated = false;
    if wrapped {
        if !rest.starts_with(')') {
            return None;
        }
        rest = &rest[1..];
        decorated = true;
    }
    while rest.starts_with(DECORATIONS) {
        rest = &rest[1..];
        decorated = true;
    }
    let trailing = rest.trim_start();
    if trailing.is_empty() {
        return Some((letter, String::new()));
    }
    if decorated {
        return Some((letter, trailing.to_string()));
    }
    None
}

/// Deterministic answer matching: normalization, exact option-letter match,
/// else unique choice-text containment. Zero or multiple candidate choices
/// yield `Ambiguous`.
pub fn match_answer(raw: &str, choices: &[Choice], ground_truth: &str) -> MatchOutcome {
    match match_choice(raw, choices) {
        Some(choice_id) => {
            if choice_id == ground_truth {
                MatchOutcome::Correct
            } else {
                MatchOutcome::Incorrect
            }
        }
        None => MatchOutcome::Ambiguous,
    }
}

/// The single choice id the raw answer deterministically asserts, if any.
pub fn match_choice(raw: &str, choices: &[Choice]) -> Option<String> {
    let normalized = normalize_text(raw);
    if normalized.is_empty() {
        return None;
    }
    let find_by_letter = |letter: &str| {
        choices
            .iter()
            .find(|c| normalize_text(&c.id) == letter)
            .map(|c| c.id.clone())
    };
    let mut candidates: Vec<String> = Vec::new();
    if let Some((letter, trailing)) = leading_letter(&normalized) {
        if let Some(id) = find_by_letter(&letter) {
            if trailing.is_empty() {
                return Some(id);
            }
            candidates.push(id);
        }
    }
    for choice in choices {
        let text = normalize_text(&choice.text);
        if !text.is_empty() && normalized.contains(&text) && !candidates.contains(&choice.id) {
            candidates.push(choice.id.clone());
        }
    }
    match candidates.as_slice() {
        [single] => Some(single.clone()),
        _ => None,
    }
}

/// Normalization used by majority voting: the asserted choice id when the
/// deterministic matcher resolves one, else the normalized raw text.
pub fn normalize_answer_key(raw: &str, choices: &[Choice]) -> String {
    match_choice(raw, choices).unwrap_or_else(|| normalize_text(raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOutcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMethod {
    StringMatch,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub outcome: JudgeOutcome,
    pub method: JudgeMethod,
    pub matched_choice: Option<String>,
    /// Populated for semantic verdicts only.
    pub rationale: String,
}

fn judge_request(model_id: &str, parts: Vec<ChatPart>) -> ChatRequest {
    ChatRequest {
        role: Role::Judge,
        model_id: model_id.to_string(),
        parts,
        temperature: 0.0,
        max_output_tokens: 256,
    }
}

/// Resolves an ambiguous raw answer with one judge call. Callers must gate
/// this on [`match_answer`] returning `Ambiguous`; deterministic answers
/// never reach the judge.
pub fn semantic_judge(
    backend: &dyn ChatBackend,
    model_id: &str,
    raw: &str,
    question: &str,
    choices: &[Choice],
    ground_truth: &str,
    ledger: &CallLedger,
) -> Result<JudgeVerdict, BackendError> {
    let mut prompt = String::from(
        "A raw answer to a multiple-choice question must be matched to one choice.\n",
    );
    prompt.push_str(&format!("Question: {question}\nChoices:\n"));
    for c in choices {
        prompt.push_str(&format!("{}. {}\n", c.id, c.text));
    }
    prompt.push_str(&format!(
        "Raw answer: {raw}\n\nWhich single choice does the raw answer assert? \
         Reply with exactly one choice id, or the word none if it asserts no single choice."
    ));
    let reply = backend.chat(
        &judge_request(model_id, vec![ChatPart::Text { text: prompt }]),
        ledger,
    )?;
    let normalized = normalize_text(&reply);
    let matched = choices
        .iter()
        .find(|c| {
            let id = normalize_text(&c.id);
            normalized == id
                || leading_letter(&normalized).is_some_and(|(letter, _)| letter == id)
        })
        .map(|c| c.id.clone());
    let verdict = match &matched {
        Some(id) => JudgeVerdict {
            outcome: if id == ground_truth {
                JudgeOutcome::Correct
            } else {
                JudgeOutcome::Incorrect
            },
            method: JudgeMethod::Semantic,
            matched_choice: matched.clone(),
            rationale: format!("judge selected {id}"),
        },
        None => JudgeVerdict {
            outcome: JudgeOutcome::Incorrect,
            method: JudgeMethod::Semantic,
            matched_choice: None,
            rationale: "unresolvable".to_string(),
        },
    };
    Ok(verdict)
}

/// String matching first, semantic judge only when ambiguous.
pub fn judge_answer(
    backend: &dyn ChatBackend,
    model_id: &str,
    raw: &str,
    question: &str,
    choices: &[Choice],
    ground_truth: &str,
    ledger: &CallLedger,
) -> Result<JudgeVerdict, BackendError> {
    match match_answer(raw, choices, ground_truth) {
        MatchOutcome::Correct => Ok(JudgeVerdict {
            outcome: JudgeOutcome::Correct,
            method: JudgeMethod::StringMatch,
            matched_choice: match_choice(raw, choices),
            rationale: String::new(),
        }),
        MatchOutcome::Incorrect => Ok(JudgeVerdict {
            outcome: JudgeOutcome::Incorrect,
            method: JudgeMethod::StringMatch,
            matched_choice: match_choice(raw, choices),
            rationale: String::new(),
        }),
        MatchOutcome::Ambiguous => {
            semantic_judge(backend, model_id, raw, question, choices, ground_truth, ledger)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    WrongInstruction,
    BadGeneration,
    VlFailure,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::WrongInstruction => "wrong_instruction",
            ErrorKind::BadGeneration => "bad_generation",
            ErrorKind::VlFailure => "vl_failure",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ErrorKind::WrongInstruction => "Wrong Instr.",
            ErrorKind::BadGeneration => "Bad Gen.",
            ErrorKind::VlFailure => "VL Failure",
        }
    }
}

impl std::str::FromStr for ErrorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wrong_instruction" => Ok(ErrorKind::WrongInstruction),
            "bad_generation" => Ok(ErrorKind::BadGeneration),
            "vl_failure" => Ok(ErrorKind::VlFailure),
            other => Err(format!("unknown error label: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Automated,
    ManualOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabel {
    pub label: ErrorKind,
    pub source: LabelSource,
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("backend error during attribution: {0}")]
    Backend(#[from] BackendError),
    #[error("judge reply could not be attributed: {0}")]
    Unattributed(String),
    #[error("record is not attributable: {0}")]
    NotApplicable(String),
}

/// What error attribution needs to know about an incorrect record from a
/// generation condition.
#[derive(Debug, Clone)]
pub struct AttributionInput {
    pub question: String,
    /// The final instruction text sent to the synthesizer, if any was parsed.
    pub instruction_text: Option<String>,
    /// The last generated view, if synthesis produced one.
    pub generated_view: Option<ImageRef>,
    pub plan_parse_failure: bool,
    pub synth_failure: bool,
}

/// Attribution cascade: mechanical engine flags first, then one judge call
/// asking whether the instruction targets a useful view and whether the
/// image realizes it. (no, *) → wrong instruction, (yes, no) → bad
/// generation, (yes, yes) → VL failure.
pub fn attribute_error(
    backend: &dyn ChatBackend,
    model_id: &str,
    input: &AttributionInput,
    ledger: &CallLedger,
) -> Result<ErrorLabel, AttributionError> {
    let automated = |label| Ok(ErrorLabel { label, source: LabelSource::Automated });
    if input.plan_parse_failure {
        return automated(ErrorKind::WrongInstruction);
    }
    if input.synth_failure {
        return automated(ErrorKind::BadGeneration);
    }
    let (instruction, view) = match (&input.instruction_text, &input.generated_view) {
        (Some(i), Some(v)) => (i, v),
        _ => {
            return Err(AttributionError::NotApplicable(
                "no instruction or generated view on record".into(),
            ))
        }
    };
    let prompt = format!(
        "A camera-motion instruction was used to synthesize the attached view to help answer a \
         question, but the final answer was wrong.\n\
         Question: {question}\n\
         Instruction: {instruction}\n\n\
         Answer two yes/no sub-questions about the attached synthesized view:\n\
         1. Does the instruction target a viewpoint that could answer the question?\n\
         2. Does the image faithfully realize the instruction?\n\
         Reply with exactly two lines:\n\
         INSTRUCTION_OK: yes or no\n\
         GENERATION_OK: yes or no",
        question = input.question,
    );
    let reply = backend.chat(
        &judge_request(
            model_id,
            vec![
                ChatPart::Text { text: prompt },
                ChatPart::Image { image: view.clone() },
            ],
        ),
        ledger,
    )?;
    let instruction_ok = parse_yes_no(&reply, "instruction_ok");
    let generation_ok = parse_yes_no(&reply, "generation_ok");
    match (instruction_ok, generation_ok) {
        (Some(false), _) => automated(ErrorKind::WrongInstruction),
        (Some(true), Some(false)) => automated(ErrorKind::BadGeneration),
        (Some(true), Some(true)) => automated(ErrorKind::VlFailure),
        _ => Err(AttributionError::Unattributed(reply)),
    }
}

fn parse_yes_no(reply: &str, label: &str) -> Option<bool> {
    let lower = reply.to_lowercase();
    let pos = lower.find(label)?;
    let tail = &lower[pos + label.len()..];
    let value = tail.trim_start_matches([':', ' ', '\t']);
    if value.starts_with("yes") || value.starts_with("true") {
        Some(true)
    } else if value.starts_with("no") || value.starts_with("false") {
        Some(false)
    } else {
        None
    }
}

/// Loads the manual-override sidecar: lines of `sample_id label`, `#`
/// comments allowed. Overrides are merged over automated labels at report
/// time.
pub fn load_override_sidecar(path: &Path) -> Result<BTreeMap<String, ErrorKind>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (id, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(label), None) => (id, label),
            _ => return Err(format!("line {}: expected 'sample_id label'", idx + 1)),
        };
        let kind: ErrorKind = label
            .parse()
            .map_err(|e| format!("line {}: {e}", idx + 1))?;
        map.insert(id.to_string(), kind);
    }
    Ok(map)
}

/// 1–5 Likert scores for a generated novel view: instruction compliance,
/// consistency with the original, rationality of new content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvsScore {
    pub ic: u8,
    pub co: u8,
    pub rn: u8,
    pub avg: f64,
}

impl NvsScore {
    pub fn new(ic: u8, co: u8, rn: u8) -> Self {
        NvsScore {
            ic,
            co,
            rn,
            avg: (ic as u64 + co as u64 + rn as u64) as f64 / 3.0,
        }
    }
}

/// Benchmark-level means: the mean of per-item scores per dimension, and
/// their average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvsMeans {
    pub ic: f64,
    pub co: f64,
    pub rn: f64,
    pub avg: f64,
    pub count: usize,
}

pub fn nvs_means(scores: &[NvsScore]) -> Option<NvsMeans> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let ic = scores.iter().map(|s| s.ic as f64).sum::<f64>() / n;
    let co = scores.iter().map(|s| s.co as f64).sum::<f64>() / n;
    let rn = scores.iter().map(|s| s.rn as f64).sum::<f64>() / n;
    Some(NvsMeans {
        ic,
        co,
        rn,
        avg: (ic + co + rn) / 3.0,
        count: scores.len(),
    })
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("backend error while scoring {dimension}: {source}")]
    Backend {
        dimension: &'static str,
        source: BackendError,
    },
    #[error("no 1-5 score parseable for {dimension} after retry")]
    ScoringFailed { dimension: &'static str },
}

const IC_PROMPT: &str = "Compare the camera viewpoint of the second (generated) image against \
the first (ground-truth target) image: camera position, orientation, viewing angle, and which \
scene regions are visible. Ignore rendering style and image-quality differences. Score 1-5 for \
how well the generated view achieves the same camera viewpoint.\nReply with one line: SCORE: <1-5>";

const CO_PROMPT: &str = "You are given three images: the source view, the ground-truth target \
view, and a generated view. Check each identifiable object and background element of the source \
for identity, appearance, and spatial-arrangement consistency in the generated view. Score 1-5 \
for consistency with the original scene.\nReply with one line: SCORE: <1-5>";

const RN_PROMPT: &str = "You are given the ground-truth target view and a generated view. Judge \
only the regions of the generated view that were not visible in the source and had to be \
synthesized: coherent geometry, consistent materials and lighting, seamless integration. Use \
the ground-truth target as reference. Score 1-5 for the plausibility of the new content.\nReply \
with one line: SCORE: <1-5>";

fn parse_score(reply: &str) -> Option<u8> {
    let lower = reply.to_lowercase();
    if let Some(pos) = lower.find("score") {
        for c in lower[pos..].chars() {
            if let Some(d) = c.to_digit(10) {
                if (1..=5).contains(&d) {
                    return Some(d as u8);
                }
                return None;
            }
        }
    }
    // Fall back to the first standalone digit 1-5.
    let bytes = lower.as_bytes();
    for (i, c) in lower.char_indices() {
        if let Some(d) = c.to_digit(10) {
            let before_ok = i == 0 || !bytes[i - 1].is_ascii_digit();
            let after_ok = i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_digit();
            if before_ok && after_ok && (1..=5).contains(&d) {
                return Some(d as u8);
            }
        }
    }
    None
}

fn rubric_call(
    backend: &dyn ChatBackend,
    model_id: &str,
    dimension: &'static str,
    prompt: &str,
    images: &[&ImageRef],
    ledger: &CallLedger,
) -> Result<u8, ScoringError> {
    let mut parts = vec![ChatPart::Text { text: format!("{prompt}\n[rubric v{RUBRIC_PROMPT_VERSION}]") }];
    for image in images {
        parts.push(ChatPart::Image { image: (*image).clone() });
    }
    let req = judge_request(model_id, parts);
    // One retry on an unparseable score.
    for _ in 0..2 {
        let reply = backend
            .chat(&req, ledger)
            .map_err(|source| ScoringError::Backend { dimension, source })?;
        if let Some(score) = parse_score(&reply) {
            return Ok(score);
        }
    }
    Err(ScoringError::ScoringFailed { dimension })
}

/// Scores one (source, ground-truth target, generated) triple with three
/// rubric calls.
pub fn score_nvs(
    backend: &dyn ChatBackend,
    model_id: &str,
    source: &ImageRef,
    gt_view: &ImageRef,
    generated: &ImageRef,
    ledger: &CallLedger,
) -> Result<NvsScore, ScoringError> {
    let ic = rubric_call(backend, model_id, "IC", IC_PROMPT, &[gt_view, generated], ledger)?;
    let co = rubric_call(backend, model_id, "CO", CO_PROMPT, &[source, gt_view, generated], ledger)?;
    let rn = rubric_call(backend, model_id, "RN", RN_PROMPT, &[gt_view, generated], ledger)?;
    Ok(NvsScore::new(ic, co, rn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use crate::benchmark::round_half_up;

    fn choices() -> Vec<Choice> {
        vec![
            Choice { id: "A".into(), text: "the bus".into() },
            Choice { id: "B".into(), text: "the red car".into() },
        ]
    }

    #[test]
    fn exact_letter_match() {
        assert_eq!(match_answer("B", &choices(), "B"), MatchOutcome::Correct);
        assert_eq!(match_answer("b", &choices(), "B"), MatchOutcome::Correct);
        assert_eq!(match_answer("(B)", &choices(), "B"), MatchOutcome::Correct);
        assert_eq!(match_answer("B.", &choices(), "B"), MatchOutcome::Correct);
        assert_eq!(match_answer("B)", &choices(), "B"), MatchOutcome::Correct);
        assert_eq!(match_answer("A", &choices(), "B"), MatchOutcome::Incorrect);
    }

    #[test]
    fn letter_with_agreeing_text() {
        assert_eq!(
            match_answer("B) the red car", &choices(), "B"),
            MatchOutcome::Correct
        );
    }

    #[test]
    fn unique_text_containment() {
        assert_eq!(
            match_answer("it is the red car", &choices(), "B"),
            MatchOutcome::Correct
        );
    }

    #[test]
    fn hedged_answer_is_ambiguous() {
        assert_eq!(match_answer("either B or C", &choices(), "B"), MatchOutcome::Ambiguous);
    }

    #[test]
    fn contradictory_letter_and_text_is_ambiguous() {
        assert_eq!(
            match_answer("A) the red car", &choices(), "B"),
            MatchOutcome::Ambiguous
        );
    }

    #[test]
    fn bare_article_is_not_choice_a() {
        // "a red car" must not read as option letter A.
        assert_eq!(match_answer("a blue truck", &choices(), "A"), MatchOutcome::Ambiguous);
    }

    #[test]
    fn matching_is_invariant_to_case_whitespace_punctuation() {
        for raw in ["B", "  b  ", "B.", "b!", "\tB)\n", "B:"] {
            assert_eq!(match_answer(raw, &choices(), "B"), MatchOutcome::Correct, "{raw:?}");
        }
    }

    #[test]
    fn vote_normalization_maps_variants_to_choice_id() {
        let cs = vec![
            Choice { id: "A".into(), text: "right".into() },
            Choice { id: "B".into(), text: "left".into() },
        ];
        for raw in ["b.", "B", "B) left"] {
            assert_eq!(normalize_answer_key(raw, &cs), "B", "{raw:?}");
        }
        assert_eq!(normalize_answer_key("no idea", &cs), "no idea");
    }

    #[test]
    fn semantic_judge_resolves_and_rejects() {
        let backend = MockBackend::empty();
        backend.script_role(Role::Judge, vec!["B".into(), "none".into()]);
        let ledger = CallLedger::new();
        let verdict = semantic_judge(&backend, "judge", "hmm", "q", &choices(), "B", &ledger).unwrap();
        assert_eq!(verdict.outcome, JudgeOutcome::Correct);
        assert_eq!(verdict.method, JudgeMethod::Semantic);
        assert_eq!(verdict.matched_choice.as_deref(), Some("B"));
        let verdict = semantic_judge(&backend, "judge", "hmm", "q", &choices(), "B", &ledger).unwrap();
        assert_eq!(verdict.outcome, JudgeOutcome::Incorrect);
        assert_eq!(verdict.rationale, "unresolvable");
        assert_eq!(ledger.snapshot().per_role.get("judge"), Some(&2));
    }

    #[test]
    fn deterministic_answers_never_reach_the_judge() {
        let backend = MockBackend::empty();
        let ledger = CallLedger::new();
        let verdict = judge_answer(&backend, "judge", "B", "q", &choices(), "B", &ledger).unwrap();
        assert_eq!(verdict.method, JudgeMethod::StringMatch);
        assert_eq!(verdict.outcome, JudgeOutcome::Correct);
        assert_eq!(ledger.snapshot().per_role.get("judge"), None);
    }

    fn attribution_input(plan_fail: bool, synth_fail: bool, with_view: bool) -> AttributionInput {
        AttributionInput {
            question: "Which is taller?".into(),
            instruction_text: Some("move up".into()),
            generated_view: with_view.then(|| ImageRef {
                path: "views/round-1.png".into(),
                content_hash: "deadbeefdeadbeef".into(),
            }),
            plan_parse_failure: plan_fail,
            synth_failure: synth_fail,
        }
    }

    #[test]
    fn attribution_mechanical_rules() {
        let backend = MockBackend::empty();
        let ledger = CallLedger::new();
        let label = attribute_error(&backend, "judge", &attribution_input(true, false, true), &ledger)
            .unwrap();
        assert_eq!(label.label, ErrorKind::WrongInstruction);
        let label = attribute_error(&backend, "judge", &attribution_input(false, true, true), &ledger)
            .unwrap();
        assert_eq!(label.label, ErrorKind::BadGeneration);
        assert_eq!(ledger.snapshot().vlm_calls, 0, "mechanical rules need no judge");
    }

    #[test]
    fn attribution_judge_cascade() {
        let cases = [
            ("INSTRUCTION_OK: no\nGENERATION_OK: yes", ErrorKind::WrongInstruction),
            ("INSTRUCTION_OK: yes\nGENERATION_OK: no", ErrorKind::BadGeneration),
            ("INSTRUCTION_OK: yes\nGENERATION_OK: yes", ErrorKind::VlFailure),
        ];
        for (reply, expected) in cases {
            let backend = MockBackend::empty();
            backend.script_role(Role::Judge, vec![reply.into()]);
            let ledger = CallLedger::new();
            let label =
                attribute_error(&backend, "judge", &attribution_input(false, false, true), &ledger)
                    .unwrap();
            assert_eq!(label.label, expected, "{reply}");
            assert_eq!(label.source, LabelSource::Automated);
        }
    }

    #[test]
    fn attribution_defers_on_unparseable_reply() {
        let backend = MockBackend::empty();
        backend.script_role(Role::Judge, vec!["who knows".into()]);
        let ledger = CallLedger::new();
        let err = attribute_error(&backend, "judge", &attribution_input(false, false, true), &ledger)
            .unwrap_err();
        assert!(matches!(err, AttributionError::Unattributed(_)));
    }

    #[test]
    fn sidecar_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overrides.txt");
        std::fs::write(&path, "# overrides\nsample-1 vl_failure\nsample-2 bad_generation\n").unwrap();
        let map = load_override_sidecar(&path).unwrap();
        assert_eq!(map["sample-1"], ErrorKind::VlFailure);
        assert_eq!(map["sample-2"], ErrorKind::BadGeneration);
        std::fs::write(&path, "sample-3 nonsense\n").unwrap();
        assert!(load_override_sidecar(&path).is_err());
    }

    #[test]
    fn nvs_score_avg_is_exact() {
        let s = NvsScore::new(5, 5, 5);
        assert_eq!(s.avg, 5.0);
        let s = NvsScore::new(2, 3, 4);
        assert!((s.avg - 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("SCORE: 4"), Some(4));
        assert_eq!(parse_score("score:3 because ..."), Some(3));
        assert_eq!(parse_score("I would say 2 overall"), Some(2));
        assert_eq!(parse_score("SCORE: 9"), None);
        assert_eq!(parse_score("no digits here"), None);
        assert_eq!(parse_score("resolution 1024 looks fine"), None);
    }

    fn fake_image(name: &str) -> ImageRef {
        ImageRef { path: name.into(), content_hash: format!("{name:0<16}") }
    }

    #[test]
    fn score_nvs_three_calls_and_retry() {
        let backend = MockBackend::empty();
        backend.script_role(
            Role::Judge,
            vec!["SCORE: 3".into(), "unclear".into(), "SCORE: 2".into(), "SCORE: 5".into()],
        );
        let ledger = CallLedger::new();
        let score = score_nvs(
            &backend,
            "judge",
            &fake_image("src"),
            &fake_image("gt"),
            &fake_image("gen"),
            &ledger,
        )
        .unwrap();
        assert_eq!((score.ic, score.co, score.rn), (3, 2, 5));
        // Four calls: IC, CO (retried once), RN.
        assert_eq!(ledger.snapshot().per_role.get("judge"), Some(&4));
    }

    #[test]
    fn score_nvs_fails_after_retry() {
        let backend = MockBackend::empty();
        backend.script_role(Role::Judge, vec!["??".into()]);
        let ledger = CallLedger::new();
        let err = score_nvs(
            &backend,
            "judge",
            &fake_image("src"),
            &fake_image("gt"),
            &fake_image("gen"),
            &ledger,
        )
        .unwrap_err();
        assert!(matches!(err, ScoringError::ScoringFailed { dimension: "IC" }));
    }

    /// 168-item fixture whose per-dimension means display as 2.964 / 2.637 /
    /// 2.458 and whose overall average rounds to 2.687.
    #[test]
    fn nvs_means_reproduce_first_reference_row() {
        let mut scores = Vec::new();
        for i in 0..168usize {
            let ic = if i < 162 { 3 } else { 2 }; // sum 498
            let co = if i < 107 { 3 } else { 2 }; // sum 443
            let rn = if i < 77 { 3 } else { 2 }; // sum 413
            scores.push(NvsScore::new(ic, co, rn));
        }
        let means = nvs_means(&scores).unwrap();
        assert_eq!(round_half_up(means.ic, 3), 2.964);
        assert_eq!(round_half_up(means.co, 3), 2.637);
        assert_eq!(round_half_up(means.rn, 3), 2.458);
        assert_eq!(round_half_up(means.avg, 3), 2.687);
    }

    /// 1000-item fixture with exact means 2.941 / 2.696 / 2.683 → avg 2.773.
    #[test]
    fn nvs_means_reproduce_second_reference_row() {
        let mut scores = Vec::new();
        for i in 0..1000usize {
            let ic = if i < 941 { 3 } else { 2 }; // sum 2941
            let co = if i < 696 { 3 } else { 2 }; // sum 2696
            let rn = if i < 683 { 3 } else { 2 }; // sum 2683
            scores.push(NvsScore::new(ic, co, rn));
        }
        let means = nvs_means(&scores).unwrap();
        assert_eq!(means.ic, 2.941);
        assert_eq!(means.co, 2.696);
        assert_eq!(means.rn, 2.683);
        assert_eq!(round_half_up(means.avg, 3), 2.773);
    }
}
