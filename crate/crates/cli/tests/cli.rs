//! CLI contract tests: exit codes, resume behavior, comparison reports,
//! prep dispositions, and manifest validation, all against the shipped
//! fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_viewloop"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run_demo(out: &Path, extra: &[&str]) -> Output {
    let demo = fixtures().join("demo");
    bin()
        .arg("run")
        .args(["--manifest", demo.join("manifest.jsonl").to_str().unwrap()])
        .args(["--config", demo.join("run.toml").to_str().unwrap()])
        .args(["--data-root", demo.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .expect("spawn viewloop run")
}

#[test]
fn invalid_iterative_n_zero_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_demo(&dir.path().join("out"), &["--condition", "iterative", "--n", "0"]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config error"), "{stderr}");
}

#[test]
fn unknown_flag_exits_two() {
    let output = bin().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn demo_run_report_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run_demo(&out, &[]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let results = out.join("results.jsonl");
    let first_bytes = std::fs::read(&results).unwrap();
    assert_eq!(first_bytes.iter().filter(|b| **b == b'\n').count(), 10);

    // Rerun resumes every completed sample and reproduces the results file.
    let output = run_demo(&out, &[]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("(10 resumed)"), "{stdout}");
    assert_eq!(std::fs::read(&results).unwrap(), first_bytes);

    // Baseline run of the same manifest for a comparison report.
    let base_out = dir.path().join("base");
    let output = run_demo(&base_out, &["--condition", "baseline"]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let demo = fixtures().join("demo");
    let report_dir = dir.path().join("report");
    let output = bin()
        .arg("report")
        .args(["--results", results.to_str().unwrap()])
        .args(["--manifest", demo.join("manifest.jsonl").to_str().unwrap()])
        .args(["--compare", base_out.join("results.jsonl").to_str().unwrap()])
        .args(["--out", report_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("Deltas vs base"), "{stdout}");
    for file in [
        "report.txt",
        "report.json",
        "report_accuracy.csv",
        "report_errors.csv",
        "report_budget.csv",
    ] {
        assert!(report_dir.join(file).is_file(), "{file} missing");
    }
}

#[test]
fn prep_dispositions_flags_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let prep = fixtures().join("prep");
    let out = dir.path().join("pairs_out.jsonl");
    let run = |extra: &[&str], out: &Path| {
        bin()
            .arg("prep")
            .args(["--pairs", prep.join("pairs.jsonl").to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap()
    };
    let output = run(&[], &out);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let records: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    let by_id = |id: &str| records.iter().find(|r| r["pair_id"] == id).unwrap();
    assert_eq!(by_id("pa")["disposition"], "kept");
    assert_eq!(by_id("pa")["scale"], 2.0);
    assert_eq!(by_id("pb")["disposition"], "kept", "exactly 10 matches is kept");
    assert_eq!(by_id("pc")["disposition"], "discarded", "9 matches is discarded");
    assert!(by_id("pc")["reason"].as_str().unwrap().contains("9 verified matches"));
    assert_eq!(by_id("pd")["disposition"], "kept");
    assert!(by_id("pd")["scale"].is_null(), "no depths, no scale");
    // Output order matches input order.
    let ids: Vec<&str> = records.iter().map(|r| r["pair_id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["pa", "pb", "pc", "pd"]);

    // Deterministic across runs and worker counts.
    let out2 = dir.path().join("pairs_out2.jsonl");
    let output = run(&["--workers", "4"], &out2);
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());

    // The median estimator flag parses and runs.
    let out3 = dir.path().join("pairs_median.jsonl");
    let output = run(&["--scale-mode", "median"], &out3);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = std::fs::read_to_string(&out3).unwrap();
    assert!(text.contains("\"scale\":2.0"), "exact-multiple fixture: median also 2.0");
}

#[test]
fn prep_missing_pairs_file_exits_two() {
    let output = bin()
        .arg("prep")
        .args(["--pairs", "/nonexistent/pairs.jsonl", "--out", "/tmp/unused.jsonl"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn validate_manifest_totals() {
    let output = bin()
        .arg("validate-manifest")
        .args(["--manifest", data_dir().join("benchmark_skeleton.jsonl").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("695 valid sample(s)"), "{stdout}");
    for line in ["orientation: 225", "location: 230", "size: 45", "multi_object: 195"] {
        assert!(stdout.contains(line), "missing {line}:\n{stdout}");
    }
    assert_eq!(stdout.matches(" / ").count(), 15, "15 subcategories listed");
}

#[test]
fn validate_rejects_broken_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"schema_version\":1}\n").unwrap();
    let output = bin()
        .arg("validate-manifest")
        .args(["--manifest", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn nvs_eval_reports_means_and_failures() {
    let nvs = fixtures().join("nvs");
    let output = bin()
        .arg("nvs-eval")
        .args(["--triples", nvs.join("triples.jsonl").to_str().unwrap()])
        .args(["--config", nvs.join("judge.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("overall"), "{stdout}");
    assert!(stdout.contains("Avg 3.167"), "{stdout}");

    // A triple with a missing image fails scoring but does not sink the run:
    // partial failure exit code and a failure footer.
    let dir = tempfile::tempdir().unwrap();
    let triples = dir.path().join("triples.jsonl");
    let mut lines = std::fs::read_to_string(nvs.join("triples.jsonl")).unwrap();
    lines.push_str("{\"item_id\":\"broken\",\"source\":\"missing.png\",\"gt_view\":\"gt.png\",\"generated\":\"gen_a.png\"}\n");
    std::fs::write(&triples, lines).unwrap();
    let output = bin()
        .arg("nvs-eval")
        .args(["--triples", triples.to_str().unwrap()])
        .args(["--config", nvs.join("judge.toml").to_str().unwrap()])
        .args(["--data-root", nvs.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("1 item(s) failed scoring"), "{stdout}");
    assert!(stdout.contains("(n=2)"), "means over the two scorable items:\n{stdout}");
}

#[test]
fn report_applies_manual_override_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run_demo(&out, &[]);
    assert_eq!(output.status.code(), Some(0));
    // demo-00 is judged incorrect with an automated vl_failure label;
    // override it to bad_generation at report time.
    let sidecar = dir.path().join("overrides.txt");
    std::fs::write(&sidecar, "# manual labels\ndemo-00 bad_generation\n").unwrap();
    let demo = fixtures().join("demo");
    let output = bin()
        .arg("report")
        .args(["--results", out.join("results.jsonl").to_str().unwrap()])
        .args(["--manifest", demo.join("manifest.jsonl").to_str().unwrap()])
        .args(["--overrides", sidecar.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let bad_gen_line = stdout.lines().find(|l| l.contains("Bad Gen.")).unwrap();
    assert!(bad_gen_line.contains('1'), "override lands in the table: {bad_gen_line}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("applied 1 manual label override(s)"), "{stderr}");
}

#[test]
fn report_rejects_mismatched_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run_demo(&out, &[]);
    assert_eq!(output.status.code(), Some(0));
    // Report against a different manifest (the skeleton) must be refused.
    let output = bin()
        .arg("report")
        .args(["--results", out.join("results.jsonl").to_str().unwrap()])
        .args(["--manifest", data_dir().join("benchmark_skeleton.jsonl").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}
