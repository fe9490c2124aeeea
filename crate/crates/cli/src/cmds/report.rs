use crate::{EXIT_CONFIG, EXIT_OK};
use anyhow::Context;
use std::path::Path;
use viewloop_core::benchmark::{load_manifest, manifest_file_hash, ImageCheck};
use viewloop_core::judging::{load_override_sidecar, LabelSource};
use viewloop_core::pipeline::{read_results, RunSummary};
use viewloop_core::report::{
    attach_comparison, build_report, render_accuracy_csv, render_budget_csv, render_errors_csv,
    render_json, render_text,
};

fn apply_overrides(results: &mut [RunSummary], sidecar: &Path) -> anyhow::Result<usize> {
    let map = load_override_sidecar(sidecar).map_err(anyhow::Error::msg)?;
    let mut applied = 0;
    for summary in results.iter_mut() {
        if let Some(kind) = map.get(&summary.sample_id) {
            summary.error_label = Some(*kind);
            summary.error_label_source = Some(LabelSource::ManualOverride);
            applied += 1;
        }
    }
    Ok(applied)
}

pub fn execute(
    results_path: &Path,
    manifest_path: &Path,
    compare_path: Option<&Path>,
    overrides_path: Option<&Path>,
    out_dir: Option<&Path>,
) -> anyhow::Result<u8> {
    let mut results = read_results(results_path).context("reading results")?;
    if results.is_empty() {
        eprintln!("warning: results file is empty; emitting empty tables");
    }
    let manifest = match load_manifest(manifest_path, None, ImageCheck::Skip) {
        Ok(manifest) => manifest,
        Err(e) => {
            eprintln!("manifest error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Some(sidecar) = overrides_path {
        let applied = apply_overrides(&mut results, sidecar)?;
        eprintln!("applied {applied} manual label override(s)");
    }
    let manifest_hash = manifest_file_hash(manifest_path)?;
    let mut report = match build_report(&results, &manifest.samples, Some(&manifest_hash)) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("report error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Some(compare) = compare_path {
        let base = read_results(compare).context("reading compare results")?;
        if let Err(e) = attach_comparison(&mut report, &base, &manifest.samples) {
            eprintln!("report error: {e}");
            return Ok(EXIT_CONFIG);
        }
    }
    let text = render_text(&report);
    print!("{text}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), &text)?;
        std::fs::write(dir.join("report_accuracy.csv"), render_accuracy_csv(&report))?;
        std::fs::write(dir.join("report_errors.csv"), render_errors_csv(&report))?;
        std::fs::write(dir.join("report_budget.csv"), render_budget_csv(&report))?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&render_json(&report))?,
        )?;
        println!("report written under {}", dir.display());
    }
    Ok(EXIT_OK)
}
