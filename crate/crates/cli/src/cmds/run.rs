use crate::{cancelled, parse_image_check, RunOverrideArgs, EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL};
use anyhow::Context;
use std::path::Path;
use viewloop_core::benchmark::{load_manifest, manifest_file_hash};
use viewloop_core::config::{default_config, load_config, Overrides};
use viewloop_core::pipeline::Engine;

pub fn execute(
    manifest_path: &Path,
    config_path: Option<&Path>,
    data_root: &Path,
    out_root: &Path,
    resume: bool,
    image_check: &str,
    override_args: &RunOverrideArgs,
) -> anyhow::Result<u8> {
    let overrides = Overrides {
        condition: override_args.condition.clone(),
        format: override_args.format.clone(),
        k: override_args.k,
        n: override_args.n,
        r: override_args.r,
        seed: override_args.seed,
        workers: override_args.workers,
        temperature: override_args.temperature,
    };
    let loaded = match config_path {
        Some(path) => load_config(path, &overrides),
        None => default_config(&overrides),
    };
    let loaded = match loaded {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let manifest = match load_manifest(manifest_path, Some(data_root), parse_image_check(image_check))
    {
        Ok(manifest) => manifest,
        Err(e) => {
            eprintln!("manifest error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    for warning in &manifest.warnings {
        eprintln!("warning: {warning}");
    }
    let manifest_hash = manifest_file_hash(manifest_path).context("hashing manifest")?;
    let engine = match Engine::new(loaded.run, out_root, data_root, manifest_hash) {
        Ok(engine) => engine,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let results_path = out_root.join("results.jsonl");
    let report = engine
        .run_samples(
            &manifest.samples,
            loaded.workers,
            resume,
            &results_path,
            cancelled(),
        )
        .context("running samples")?;
    println!(
        "completed {} sample(s) ({} resumed), {} failed; results: {}",
        report.completed,
        report.skipped,
        report.failed_samples,
        results_path.display()
    );
    if report.cancelled {
        eprintln!("interrupted: in-flight samples drained, results flushed; rerun to resume");
        return Ok(EXIT_PARTIAL);
    }
    Ok(if report.failed_samples > 0 { EXIT_PARTIAL } else { EXIT_OK })
}
