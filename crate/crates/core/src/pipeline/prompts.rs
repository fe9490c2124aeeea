//! Deterministic prompt templates for the Reasoner, Verifier, and reflection
//! rounds, plus the structured verifier-reply protocol.

use crate::benchmark::Choice;
use serde::{Deserialize, Serialize};

fn choices_block(choices: &[Choice]) -> String {
    let mut out = String::new();
    for c in choices {
        out.push_str(&format!("{}. {}\n", c.id, c.text));
    }
    out
}

/// Reasoner prompt. With `with_view`, the request carries the original image
/// followed by a synthesized novel view of the same scene.
pub fn reasoner_prompt(question: &str, choices: &[Choice], with_view: bool) -> String {
    let mut out = String::new();
    if with_view {
        out.push_str(
            "You are given two images: the original photo, then a synthesized view of the same \
             scene from a different camera position. Use both, but trust the original where they \
             disagree.\n\n",
        );
    } else {
        out.push_str("You are given one image.\n\n");
    }
    out.push_str(&format!("Question: {question}\nChoices:\n{}", choices_block(choices)));
    out.push_str("\nReply with the letter of the single best choice.");
    out
}

/// Text self-reflection round: critique the prior answer and re-answer over
/// the original image only.
pub fn reflection_prompt(question: &str, choices: &[Choice], prior_answer: &str) -> String {
    format!(
        "You previously answered a question about this image.\n\nQuestion: {question}\nChoices:\n{}\
         \nYour previous answer: {prior_answer}\n\nCritique your previous answer against the \
         image, then re-answer. Reply with the letter of the single best choice.",
        choices_block(choices)
    )
}

/// Verifier prompt: gate a synthesized view on object visibility, generation
/// quality, and scene consistency, with diagnostic feedback on rejection.
pub fn verifier_prompt(question: &str, instruction_text: &str) -> String {
    format!(
        "You are given the original image and a synthesized view of the same scene, generated \
         from this camera instruction: {instruction_text}\n\nThe view is meant to help answer: \
         {question}\n\nRate the synthesized view 1-5 on each criterion and decide whether to \
         accept it:\n\
         - visibility: are the objects the question asks about visible?\n\
         - quality: is the generation free of artifacts and distortions?\n\
         - consistency: does the scene stay consistent with the original?\n\n\
         Reply with exactly five lines:\n\
         ACCEPT: yes or no\n\
         VISIBILITY: <1-5>\n\
         QUALITY: <1-5>\n\
         CONSISTENCY: <1-5>\n\
         FEEDBACK: <one sentence of diagnostic feedback for the camera planner>"
    )
}

/// Re-plan prompt: the original planner prompt plus the rejected instruction
/// and the verifier's feedback, clearly delimited.
pub fn replan_prompt(base_prompt: &str, prior_instruction: &str, feedback: &str) -> String {
    format!(
        "{base_prompt}\n\n--- previous attempt ---\nPrevious instruction: {prior_instruction}\n\
         Verifier feedback: {feedback}\n--- end previous attempt ---\n\nPropose a revised camera \
         motion that addresses the feedback."
    )
}

/// Verifier verdict: accept flag, three 1-5 scores, diagnostic feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub accepted: bool,
    pub visibility_score: u8,
    pub quality_score: u8,
    pub consistency_score: u8,
    pub feedback: String,
}

impl VerifierVerdict {
    pub fn mean_score(&self) -> f64 {
        (self.visibility_score as f64 + self.quality_score as f64 + self.consistency_score as f64)
            / 3.0
    }

    /// The stand-in verdict for unparseable verifier replies: accept with a
    /// warning rather than burn budget re-planning a possibly fine view.
    pub fn accept_with_warning() -> Self {
        VerifierVerdict {
            accepted: true,
            visibility_score: 3,
            quality_score: 3,
            consistency_score: 3,
            feedback: "verifier reply unparseable; accepted with warning".into(),
        }
    }
}

fn find_labeled_value<'a>(lower: &'a str, label: &str) -> Option<&'a str> {
    let pos = lower.find(label)?;
    let tail = &lower[pos + label.len()..];
    let tail = tail.trim_start_matches([':', ' ', '\t']);
    Some(tail)
}

fn parse_flag(value: &str) -> Option<bool> {
    if value.starts_with("yes") || value.starts_with("true") || value.starts_with("accept") {
        Some(true)
    } else if value.starts_with("no") || value.starts_with("false") || value.starts_with("reject") {
        Some(false)
    } else {
        None
    }
}

fn parse_five_point(value: &str) -> Option<u8> {
    let d = value.chars().next()?.to_digit(10)?;
    (1..=5).contains(&d).then_some(d as u8)
}

/// Parses the structured verifier reply; `None` means unparseable (handled
/// as accept-with-warning by the engine).
pub fn parse_verifier_reply(reply: &str) -> Option<VerifierVerdict> {
    let lower = reply.to_lowercase();
    let accepted = parse_flag(find_labeled_value(&lower, "accept")?)?;
    let visibility = parse_five_point(find_labeled_value(&lower, "visibility")?)?;
    let quality = parse_five_point(find_labeled_value(&lower, "quality")?)?;
    let consistency = parse_five_point(find_labeled_value(&lower, "consistency")?)?;
    // Feedback is free text: take the raw line after the label.
    let feedback = lower
        .find("feedback")
        .map(|pos| {
            reply[pos + "feedback".len()..]
                .trim_start_matches([':', ' ', '\t'])
                .lines()
                .next()
                .unwrap_or("")
                .trim()
                .to_string()
        })
        .unwrap_or_default();
    let feedback = if !accepted && feedback.is_empty() {
        "(verifier gave no feedback)".to_string()
    } else {
        feedback
    };
    Some(VerifierVerdict {
        accepted,
        visibility_score: visibility,
        quality_score: quality,
        consistency_score: consistency,
        feedback,
    })
}

/// Renders a verdict in the exact reply grammar; fixture authoring helper.
pub fn render_verifier_reply(verdict: &VerifierVerdict) -> String {
    format!(
        "ACCEPT: {}\nVISIBILITY: {}\nQUALITY: {}\nCONSISTENCY: {}\nFEEDBACK: {}",
        if verdict.accepted { "yes" } else { "no" },
        verdict.visibility_score,
        verdict.quality_score,
        verdict.consistency_score,
        verdict.feedback
    )
}
