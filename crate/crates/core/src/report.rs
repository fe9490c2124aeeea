//! Report generation over results streams: per-category accuracy tables,
//! error-label distributions, call-budget tables, and baseline comparisons,
//! rendered as aligned text, CSV, and a machine-readable JSON summary.

use crate::benchmark::{
    aggregate, compare, round_half_up, BenchmarkError, Category, CategoryStats, Comparison, Sample,
};
use crate::judging::ErrorKind;
use crate::pipeline::RunSummary;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("results reference more than one manifest (hashes {0} and {1}); refusing to mix")]
    MixedManifests(String, String),
    #[error("results manifest hash {got} does not match the provided manifest ({want})")]
    ManifestMismatch { got: String, want: String },
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BudgetLine {
    pub samples: u64,
    /// Max successful VLM calls in any vote run (uniform on mock runs).
    pub vlm_per_vote_run: u32,
    pub synth_per_vote_run: u32,
    pub total_vlm: u64,
    pub total_synth: u64,
    pub total_retries: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// Stats per condition label, in label order.
    pub per_condition: BTreeMap<String, CategoryStats>,
    pub budgets: BTreeMap<String, BudgetLine>,
    /// Records that produced an answer but could not be judged; excluded
    /// from accuracy.
    pub unjudged: u64,
    pub manifest_hash: Option<String>,
    /// (base condition stats from `--compare` file) → deltas per condition.
    pub comparison: Option<BTreeMap<String, Comparison>>,
}

fn check_single_manifest(results: &[RunSummary]) -> Result<Option<String>, ReportError> {
    let mut hash: Option<String> = None;
    for summary in results {
        match &hash {
            None => hash = Some(summary.manifest_hash.clone()),
            Some(existing) if *existing != summary.manifest_hash => {
                return Err(ReportError::MixedManifests(
                    existing.clone(),
                    summary.manifest_hash.clone(),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(hash)
}

/// Builds the report for one results stream. `expected_manifest_hash`, when
/// given, must match every line (mixed-manifest results are rejected).
pub fn build_report(
    results: &[RunSummary],
    manifest: &[Sample],
    expected_manifest_hash: Option<&str>,
) -> Result<Report, ReportError> {
    let manifest_hash = check_single_manifest(results)?;
    if let (Some(got), Some(want)) = (&manifest_hash, expected_manifest_hash) {
        if got != want {
            return Err(ReportError::ManifestMismatch {
                got: got.clone(),
                want: want.to_string(),
            });
        }
    }
    let mut by_condition: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for summary in results {
        by_condition.entry(summary.condition.clone()).or_default().push(summary);
    }
    let mut per_condition = BTreeMap::new();
    let mut budgets = BTreeMap::new();
    let mut unjudged = 0u64;
    for (condition, summaries) in &by_condition {
        let judged: Vec<_> = summaries.iter().filter_map(|s| s.to_judged()).collect();
        unjudged += summaries.iter().filter(|s| !s.failed && s.outcome.is_none()).count() as u64;
        per_condition.insert(condition.clone(), aggregate(&judged, manifest)?);
        let mut line = BudgetLine {
            samples: summaries.len() as u64,
            ..BudgetLine::default()
        };
        for s in summaries.iter() {
            line.vlm_per_vote_run =
                line.vlm_per_vote_run.max(s.per_run_vlm.iter().copied().max().unwrap_or(0));
            line.synth_per_vote_run = line
                .synth_per_vote_run
                .max(s.per_run_synth.iter().copied().max().unwrap_or(0));
            line.total_vlm += s.vlm_calls;
            line.total_synth += s.synth_calls;
            line.total_retries += s.retries;
        }
        budgets.insert(condition.clone(), line);
    }
    Ok(Report {
        per_condition,
        budgets,
        unjudged,
        manifest_hash,
        comparison: None,
    })
}

/// Adds delta columns against a base results stream (the `--compare` file).
/// Conditions are compared pairwise when both sides contain them; a base
/// stream with a single condition compares against every condition of the
/// main stream.
pub fn attach_comparison(
    report: &mut Report,
    base_results: &[RunSummary],
    manifest: &[Sample],
) -> Result<(), ReportError> {
    let base_report = build_report(base_results, manifest, report.manifest_hash.as_deref())?;
    let mut deltas = BTreeMap::new();
    let single_base = (base_report.per_condition.len() == 1)
        .then(|| base_report.per_condition.values().next().expect("len checked"));
    for (condition, stats) in &report.per_condition {
        let base_stats = base_report.per_condition.get(condition).or(single_base);
        if let Some(base_stats) = base_stats {
            deltas.insert(condition.clone(), compare(base_stats, stats)?);
        }
    }
    report.comparison = Some(deltas);
    Ok(())
}

fn fmt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", round_half_up(v, 1)),
        None => "-".to_string(),
    }
}

/// Aligned-text tables: accuracy, error distribution, call budget, and
/// optional comparison deltas.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let widths = [22usize, 9, 9, 9, 10, 9, 9];
    let header = ["Condition", "Orient.", "Loc.", "Size", "Multi-obj", "Overall", "Macro"];
    out.push_str("Accuracy (%)\n");
    for (i, h) in header.iter().enumerate() {
        out.push_str(&format!("{h:>width$}", width = widths[i]));
    }
    out.push('\n');
    for (condition, stats) in &report.per_condition {
        out.push_str(&format!("{condition:>22}"));
        for category in Category::ALL {
            out.push_str(&format!(
                "{:>width$}",
                fmt_pct(stats.per_category[&category].accuracy().map(|a| a * 100.0)),
                width = widths[1]
            ));
        }
        out.push_str(&format!(
            "{:>9}{:>9}\n",
            fmt_pct(stats.overall.accuracy().map(|a| a * 100.0)),
            fmt_pct(stats.macro_accuracy.map(|a| a * 100.0)),
        ));
        if stats.failures > 0 {
            out.push_str(&format!("{:>22}  {} sample(s) failed, excluded\n", "", stats.failures));
        }
    }
    if let Some(comparison) = &report.comparison {
        out.push_str("\nDeltas vs base (pp, relative %)\n");
        for (condition, cmp) in comparison {
            out.push_str(&format!("{condition:>22}"));
            for category in Category::ALL {
                match &cmp.per_category[&category] {
                    Some(d) => out.push_str(&format!(
                        "{:>+9.1}",
                        round_half_up(d.abs_pp, 1)
                    )),
                    None => out.push_str(&format!("{:>9}", "-")),
                }
            }
            match &cmp.overall {
                Some(d) => {
                    out.push_str(&format!("{:>+9.1}", round_half_up(d.abs_pp, 1)));
                    match d.rel_gain_pct {
                        Some(rel) => {
                            out.push_str(&format!("{:>+8.1}%", round_half_up(rel, 1)));
                        }
                        None => out.push_str(&format!("{:>9}", "-")),
                    }
                }
                None => out.push_str(&format!("{:>9}{:>9}", "-", "-")),
            }
            out.push('\n');
        }
    }
    out.push_str("\nError distribution\n");
    out.push_str(&format!(
        "{:>22}{:>18}{:>8}{:>8}\n",
        "Condition", "Error Type", "#", "%"
    ));
    for (condition, stats) in &report.per_condition {
        let pct = stats.errors.percentages();
        for kind in [ErrorKind::WrongInstruction, ErrorKind::BadGeneration, ErrorKind::VlFailure] {
            let count = stats.errors.counts.get(&kind).copied().unwrap_or(0);
            out.push_str(&format!(
                "{:>22}{:>18}{:>8}{:>8.1}\n",
                condition,
                kind.label(),
                count,
                pct.get(&kind).copied().unwrap_or(0.0)
            ));
        }
        out.push_str(&format!(
            "{:>22}{:>18}{:>8}{:>8}\n",
            condition,
            "Total",
            stats.errors.total_attributed(),
            100
        ));
        if stats.errors.unattributed > 0 {
            out.push_str(&format!(
                "{:>22}{:>18}{:>8}\n",
                condition, "(unattributed)", stats.errors.unattributed
            ));
        }
    }
    out.push_str("\nCall budget\n");
    out.push_str(&format!(
        "{:>22}{:>9}{:>13}{:>15}{:>11}{:>13}{:>9}\n",
        "Condition", "Samples", "VLM/vote", "Synth/vote", "VLM total", "Synth total", "Retries"
    ));
    for (condition, line) in &report.budgets {
        out.push_str(&format!(
            "{:>22}{:>9}{:>13}{:>15}{:>11}{:>13}{:>9}\n",
            condition,
            line.samples,
            line.vlm_per_vote_run,
            line.synth_per_vote_run,
            line.total_vlm,
            line.total_synth,
            line.total_retries
        ));
    }
    if report.unjudged > 0 {
        out.push_str(&format!("\n{} record(s) answered but unjudged, excluded\n", report.unjudged));
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_row(fields: &[String]) -> String {
    fields.iter().map(|f| csv_escape(f)).collect::<Vec<_>>().join(",")
}

/// Accuracy table as CSV, mirroring the text layout; delta columns included
/// when a comparison is attached.
pub fn render_accuracy_csv(report: &Report) -> String {
    let mut out = String::new();
    let mut header = vec![
        "condition".to_string(),
        "orientation".into(),
        "location".into(),
        "size".into(),
        "multi_object".into(),
        "overall".into(),
        "macro".into(),
        "failures".into(),
    ];
    if report.comparison.is_some() {
        header.push("delta_pp".into());
        header.push("relative_gain_pct".into());
    }
    out.push_str(&csv_row(&header));
    out.push('\n');
    for (condition, stats) in &report.per_condition {
        let mut row = vec![condition.clone()];
        for category in Category::ALL {
            row.push(fmt_pct(stats.per_category[&category].accuracy().map(|a| a * 100.0)));
        }
        row.push(fmt_pct(stats.overall.accuracy().map(|a| a * 100.0)));
        row.push(fmt_pct(stats.macro_accuracy.map(|a| a * 100.0)));
        row.push(stats.failures.to_string());
        if let Some(comparison) = &report.comparison {
            match comparison.get(condition).and_then(|c| c.overall.as_ref()) {
                Some(d) => {
                    row.push(format!("{:+.1}", round_half_up(d.abs_pp, 1)));
                    row.push(
                        d.rel_gain_pct
                            .map(|r| format!("{:+.1}", round_half_up(r, 1)))
                            .unwrap_or_else(|| "-".into()),
                    );
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        out.push_str(&csv_row(&row));
        out.push('\n');
    }
    out
}

pub fn render_errors_csv(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("condition,error_type,count,percent\n");
    for (condition, stats) in &report.per_condition {
        let pct = stats.errors.percentages();
        for kind in [ErrorKind::WrongInstruction, ErrorKind::BadGeneration, ErrorKind::VlFailure] {
            out.push_str(&csv_row(&[
                condition.clone(),
                kind.as_str().to_string(),
                stats.errors.counts.get(&kind).copied().unwrap_or(0).to_string(),
                format!("{:.1}", pct.get(&kind).copied().unwrap_or(0.0)),
            ]));
            out.push('\n');
        }
        if stats.errors.unattributed > 0 {
            out.push_str(&csv_row(&[
                condition.clone(),
                "unattributed".into(),
                stats.errors.unattributed.to_string(),
                String::new(),
            ]));
            out.push('\n');
        }
    }
    out
}

pub fn render_budget_csv(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("condition,samples,vlm_per_vote_run,synth_per_vote_run,total_vlm,total_synth,total_retries\n");
    for (condition, line) in &report.budgets {
        out.push_str(&csv_row(&[
            condition.clone(),
            line.samples.to_string(),
            line.vlm_per_vote_run.to_string(),
            line.synth_per_vote_run.to_string(),
            line.total_vlm.to_string(),
            line.total_synth.to_string(),
            line.total_retries.to_string(),
        ]));
        out.push('\n');
    }
    out
}

/// Machine-readable summary of everything the tables show.
pub fn render_json(report: &Report) -> serde_json::Value {
    serde_json::to_value(report).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{Choice, Outcome, SampleSource};
    use crate::pipeline::ChosenView;

    fn sample(id: &str, category: Category) -> Sample {
        Sample {
            schema_version: 1,
            id: id.into(),
            image: format!("{id}.png"),
            question: "q".into(),
            choices: vec![
                Choice { id: "A".into(), text: "left".into() },
                Choice { id: "B".into(), text: "right".into() },
            ],
            ground_truth: "A".into(),
            category,
            subcategory: "s".into(),
            source: SampleSource::Other,
        }
    }

    fn summary(id: &str, condition: &str, outcome: Outcome, label: Option<ErrorKind>) -> RunSummary {
        RunSummary {
            sample_id: id.into(),
            condition: condition.into(),
            instruction_format: "numerical".into(),
            k: 1,
            seed: 0,
            config_hash: "c".into(),
            manifest_hash: "m".into(),
            final_answer: Some("A".into()),
            votes: vec!["A".into()],
            failed: outcome == Outcome::Failed,
            outcome: Some(outcome),
            judge_method: None,
            error_label: label,
            error_label_source: None,
            attribution_deferred: false,
            chosen_view: ChosenView::Original { image: format!("{id}.png") },
            flags: vec![],
            vlm_calls: 2,
            synth_calls: 1,
            retries: 0,
            per_run_vlm: vec![2],
            per_run_synth: vec![1],
        }
    }

    #[test]
    fn report_builds_and_renders() {
        let manifest = vec![
            sample("a", Category::Orientation),
            sample("b", Category::Location),
            sample("c", Category::Size),
        ];
        let results = vec![
            summary("a", "simple", Outcome::Correct, None),
            summary("b", "simple", Outcome::Incorrect, Some(ErrorKind::BadGeneration)),
            summary("c", "simple", Outcome::Failed, None),
        ];
        let report = build_report(&results, &manifest, Some("m")).unwrap();
        let stats = &report.per_condition["simple"];
        assert_eq!(stats.overall.n, 2);
        assert_eq!(stats.failures, 1);
        assert_eq!(stats.errors.counts[&ErrorKind::BadGeneration], 1);
        let text = render_text(&report);
        assert!(text.contains("simple"));
        assert!(text.contains("Bad Gen."));
        let csv = render_accuracy_csv(&report);
        assert!(csv.starts_with("condition,orientation"));
        assert_eq!(report.budgets["simple"].vlm_per_vote_run, 2);
    }

    #[test]
    fn report_rejects_mixed_manifests() {
        let manifest = vec![sample("a", Category::Orientation)];
        let mut results = vec![summary("a", "simple", Outcome::Correct, None)];
        let mut other = summary("a", "simple", Outcome::Correct, None);
        other.manifest_hash = "different".into();
        results.push(other);
        assert!(matches!(
            build_report(&results, &manifest, None),
            Err(ReportError::MixedManifests(..))
        ));
    }

    #[test]
    fn comparison_single_base_condition() {
        let manifest: Vec<Sample> =
            (0..10).map(|i| sample(&format!("s{i}"), Category::Orientation)).collect();
        let base: Vec<RunSummary> = (0..10)
            .map(|i| {
                summary(
                    &format!("s{i}"),
                    "baseline",
                    if i < 5 { Outcome::Correct } else { Outcome::Incorrect },
                    None,
                )
            })
            .collect();
        let aug: Vec<RunSummary> = (0..10)
            .map(|i| {
                summary(
                    &format!("s{i}"),
                    "simple",
                    if i < 7 { Outcome::Correct } else { Outcome::Incorrect },
                    None,
                )
            })
            .collect();
        let mut report = build_report(&aug, &manifest, None).unwrap();
        attach_comparison(&mut report, &base, &manifest).unwrap();
        let delta = report.comparison.as_ref().unwrap()["simple"].overall.unwrap();
        assert_eq!(round_half_up(delta.abs_pp, 1), 20.0);
        let text = render_text(&report);
        assert!(text.contains("Deltas vs base"));
    }

    #[test]
    fn empty_results_render_without_division() {
        let manifest = vec![sample("a", Category::Orientation)];
        let report = build_report(&[], &manifest, None).unwrap();
        let text = render_text(&report);
        assert!(text.contains("Accuracy"));
        assert!(render_accuracy_csv(&report).lines().count() == 1, "header only");
    }
}
