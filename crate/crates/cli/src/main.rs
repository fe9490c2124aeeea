//! Operator CLI: run evaluation conditions, generate report tables, prepare
//! image-pair data, score novel-view quality, and validate manifests.
//!
//! Exit codes: 0 success, 1 partial failure, 2 configuration or usage error.

mod cmds;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

static CANCELLED: AtomicBool = AtomicBool::new(false);

extern "C" fn handle_sigint(_: libc::c_int) {
    CANCELLED.store(true, Ordering::SeqCst);
}

fn install_sigint_handler() {
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGINT, handle_sigint as *const () as libc::sighandler_t);
        // Die quietly when stdout is a closed pipe (e.g. `report | head`).
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

pub fn cancelled() -> &'static AtomicBool {
    &CANCELLED
}

#[derive(Parser)]
#[command(
    name = "viewloop",
    version,
    about = "Novel-view reasoning pipeline: run conditions, report tables, prepare pair data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct RunOverrideArgs {
    /// Condition: baseline | simple | iterative | text_reflection
    #[arg(long)]
    condition: Option<String>,
    /// Instruction format: natural | discrete | numerical
    #[arg(long)]
    format: Option<String>,
    /// Majority-vote runs per sample
    #[arg(long)]
    k: Option<u32>,
    /// Verification rounds for the iterative condition
    #[arg(long)]
    n: Option<u32>,
    /// Reflection rounds for the text_reflection condition
    #[arg(long)]
    r: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one condition over a benchmark manifest, producing transcripts
    /// and a results stream. Resumable: completed (sample, condition,
    /// config) triples are skipped on rerun.
    Run {
        /// Benchmark manifest (JSON lines)
        #[arg(long)]
        manifest: PathBuf,
        /// Run config file (TOML); omit for an all-mock default config
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root against which manifest image paths resolve
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
        /// Output root (results.jsonl and transcripts/ live here)
        #[arg(long)]
        out: PathBuf,
        /// Re-run every sample even when a matching transcript exists
        #[arg(long)]
        no_resume: bool,
        /// Missing-image handling while loading the manifest
        #[arg(long, default_value = "warn", value_parser = ["skip", "warn", "fail"])]
        image_check: String,
        #[command(flatten)]
        overrides: RunOverrideArgs,
    },
    /// Render accuracy, error-distribution, and call-budget tables from a
    /// results stream (text, CSV, JSON).
    Report {
        /// Results stream produced by `run`
        #[arg(long)]
        results: PathBuf,
        /// The manifest the results were produced from
        #[arg(long)]
        manifest: PathBuf,
        /// Base results stream; adds delta columns (this run minus base)
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Manual error-label overrides: lines of `sample_id label`
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Directory for report.txt / report_*.csv / report.json; stdout only
        /// when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prepare image pairs: overlap filter, relative pose, metric-scale
    /// alignment, translation rescale, resolution bucket.
    Prep {
        /// Pairs file (JSON lines)
        #[arg(long)]
        pairs: PathBuf,
        /// Output manifest (JSON lines of pair records)
        #[arg(long)]
        out: PathBuf,
        /// Root against which image/depth/pose paths resolve; defaults to
        /// the pairs file's directory
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Minimum verified matches to keep a pair
        #[arg(long, default_value_t = 10)]
        min_matches: u32,
        /// Scale estimator: least_squares | median
        #[arg(long, default_value = "least_squares", value_parser = ["least_squares", "median"])]
        scale_mode: String,
        /// Minimum jointly-valid depth pixels for scale estimation
        #[arg(long, default_value_t = 30)]
        min_valid_pixels: usize,
        /// Resolution bucket base size
        #[arg(long, default_value_t = 1024)]
        bucket_base: u32,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Score (source, ground-truth target, generated) triples on the
    /// instruction-compliance / consistency / new-content rubric.
    NvsEval {
        /// Triples file (JSON lines: item_id, dataset, source, gt_view,
        /// generated)
        #[arg(long)]
        triples: PathBuf,
        /// Run config providing the judge backend; omit for all-mock
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root against which triple image paths resolve; defaults to the
        /// triples file's directory
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Directory for nvs_scores.jsonl and nvs_table.txt; stdout only
        /// when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a manifest: schema, duplicate ids, category totals.
    ValidateManifest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value = "skip", value_parser = ["skip", "warn", "fail"])]
        image_check: String,
    },
}

fn main() -> ExitCode {
    install_sigint_handler();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            manifest,
            config,
            data_root,
            out,
            no_resume,
            image_check,
            overrides,
        } => cmds::run::execute(
            &manifest,
            config.as_deref(),
            &data_root,
            &out,
            !no_resume,
            &image_check,
            &overrides,
        ),
        Command::Report {
            results,
            manifest,
            compare,
            overrides,
            out,
        } => cmds::report::execute(
            &results,
            &manifest,
            compare.as_deref(),
            overrides.as_deref(),
            out.as_deref(),
        ),
        Command::Prep {
            pairs,
            out,
            data_root,
            min_matches,
            scale_mode,
            min_valid_pixels,
            bucket_base,
            workers,
        } => cmds::prep::execute(
            &pairs,
            &out,
            data_root.as_deref(),
            min_matches,
            &scale_mode,
            min_valid_pixels,
            bucket_base,
            workers,
        ),
        Command::NvsEval {
            triples,
            config,
            data_root,
            out,
        } => cmds::nvs::execute(&triples, config.as_deref(), data_root.as_deref(), out.as_deref()),
        Command::ValidateManifest {
            manifest,
            data_root,
            image_check,
        } => cmds::validate::execute(&manifest, data_root.as_deref(), &image_check),
    };
    match code {
        Ok(code) => ExitCode::from(code),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

pub fn parse_image_check(name: &str) -> viewloop_core::benchmark::ImageCheck {
    match name {
        "skip" => viewloop_core::benchmark::ImageCheck::Skip,
        "fail" => viewloop_core::benchmark::ImageCheck::Fail,
        _ => viewloop_core::benchmark::ImageCheck::Warn,
    }
}
