use crate::{EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL};
use anyhow::Context;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use viewloop_core::backends::{build_chat_backend, CallLedger, ImageRef};
use viewloop_core::benchmark::round_half_up;
use viewloop_core::config::{default_config, load_config, Overrides};
use viewloop_core::judging::{nvs_means, score_nvs, NvsMeans, NvsScore};

/// One line of the triples input file.
#[derive(Debug, Deserialize)]
struct Triple {
    item_id: String,
    #[serde(default)]
    dataset: Option<String>,
    source: String,
    gt_view: String,
    generated: String,
}

#[derive(Debug, Serialize)]
struct ScoredItem<'a> {
    item_id: &'a str,
    dataset: Option<&'a str>,
    ic: u8,
    co: u8,
    rn: u8,
    avg: f64,
}

fn fmt_mean(m: &NvsMeans) -> String {
    format!(
        "IC {:.3}  CO {:.3}  RN {:.3}  Avg {:.3}  (n={})",
        round_half_up(m.ic, 3),
        round_half_up(m.co, 3),
        round_half_up(m.rn, 3),
        round_half_up(m.avg, 3),
        m.count
    )
}

pub fn execute(
    triples_path: &Path,
    config_path: Option<&Path>,
    data_root: Option<&Path>,
    out_dir: Option<&Path>,
) -> anyhow::Result<u8> {
    let overrides = Overrides::default();
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
    let judge_cfg = loaded.run.backends.judge.clone();
    let judge = match build_chat_backend(&judge_cfg) {
        Ok(judge) => judge,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let text = std::fs::read_to_string(triples_path)
        .with_context(|| format!("reading triples {}", triples_path.display()))?;
    let mut triples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let triple: Triple = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", triples_path.display(), idx + 1))?;
        triples.push(triple);
    }
    let data_root: PathBuf = data_root
        .map(Path::to_path_buf)
        .or_else(|| triples_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));

    let ledger = CallLedger::new();
    let mut scores: Vec<(usize, NvsScore)> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    let mut lines = Vec::new();
    for (idx, triple) in triples.iter().enumerate() {
        let image = |rel: &str| -> Result<ImageRef, String> {
            ImageRef::from_file(data_root.join(rel)).map_err(|e| format!("{rel}: {e}"))
        };
        let result = (|| -> Result<NvsScore, String> {
            let source = image(&triple.source)?;
            let gt_view = image(&triple.gt_view)?;
            let generated = image(&triple.generated)?;
            score_nvs(
                judge.as_ref(),
                &judge_cfg.model_id,
                &source,
                &gt_view,
                &generated,
                &ledger,
            )
            .map_err(|e| e.to_string())
        })();
        match result {
            Ok(score) => {
                lines.push(serde_json::to_string(&ScoredItem {
                    item_id: &triple.item_id,
                    dataset: triple.dataset.as_deref(),
                    ic: score.ic,
                    co: score.co,
                    rn: score.rn,
                    avg: score.avg,
                })?);
                scores.push((idx, score));
            }
            Err(reason) => failures.push((triple.item_id.clone(), reason)),
        }
    }

    let mut table = String::new();
    table.push_str("Novel-view quality (1-5 scale)\n");
    let mut by_dataset: BTreeMap<String, Vec<NvsScore>> = BTreeMap::new();
    for (idx, score) in &scores {
        let dataset = triples[*idx].dataset.clone().unwrap_or_else(|| "(unlabeled)".into());
        by_dataset.entry(dataset).or_default().push(*score);
    }
    if by_dataset.len() > 1 {
        for (dataset, dataset_scores) in &by_dataset {
            if let Some(means) = nvs_means(dataset_scores) {
                table.push_str(&format!("{dataset:>20}: {}\n", fmt_mean(&means)));
            }
        }
    }
    let all: Vec<NvsScore> = scores.iter().map(|(_, s)| *s).collect();
    match nvs_means(&all) {
        Some(means) => table.push_str(&format!("{:>20}: {}\n", "overall", fmt_mean(&means))),
        None => table.push_str("no scorable items\n"),
    }
    if !failures.is_empty() {
        table.push_str(&format!("{} item(s) failed scoring, excluded from means:\n", failures.len()));
        for (item, reason) in &failures {
            table.push_str(&format!("  {item}: {reason}\n"));
        }
    }
    print!("{table}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("nvs_scores.jsonl"), lines.join("\n") + "\n")?;
        std::fs::write(dir.join("nvs_table.txt"), &table)?;
        println!("scores written under {}", dir.display());
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}
