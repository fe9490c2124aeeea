//! Benchmark manifest schema, stratified sampling, and the aggregation and
//! comparison arithmetic behind the result tables.
//!
//! Manifests are JSON lines, one sample per line, each carrying a
//! `schema_version` field (currently 1). Image paths are stored relative to
//! a user-supplied data root; the benchmark images themselves are external
//! assets.

use crate::judging::ErrorKind;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("manifest {path} line {line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("quota for subcategory '{subcategory}' is {want} but the pool holds {have}")]
    QuotaExceedsPool {
        subcategory: String,
        want: usize,
        have: usize,
    },
    #[error("record references unknown sample id '{0}'")]
    UnknownSample(String),
    #[error("category universes differ: {0}")]
    CategoryMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Orientation,
    Location,
    Size,
    MultiObject,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Orientation,
        Category::Location,
        Category::Size,
        Category::MultiObject,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Orientation => "orientation",
            Category::Location => "location",
            Category::Size => "size",
            Category::MultiObject => "multi_object",
        }
    }

    /// Short column label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            Category::Orientation => "Orient.",
            Category::Location => "Loc.",
            Category::Size => "Size",
            Category::MultiObject => "Multi-obj",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Threedsr,
    Realworldqa,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub id: String,
    pub text: String,
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub schema_version: u32,
    pub id: String,
    /// Image path relative to the data root.
    pub image: String,
    pub question: String,
    pub choices: Vec<Choice>,
    pub ground_truth: String,
    pub category: Category,
    pub subcategory: String,
    pub source: SampleSource,
}

impl Sample {
    fn validate(&self) -> Result<(), String> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.choices.is_empty() {
            return Err("no choices".into());
        }
        let mut seen = HashSet::new();
        for c in &self.choices {
            if !seen.insert(c.id.as_str()) {
                return Err(format!("duplicate choice id '{}'", c.id));
            }
        }
        if !self.choices.iter().any(|c| c.id == self.ground_truth) {
            return Err(format!("ground_truth '{}' not among choices", self.ground_truth));
        }
        Ok(())
    }
}

/// How strictly `load_manifest` treats missing image files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageCheck {
    Skip,
    Warn,
    Fail,
}

#[derive(Debug)]
pub struct LoadedManifest {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

pub fn load_manifest(
    path: &Path,
    data_root: Option<&Path>,
    image_check: ImageCheck,
) -> Result<LoadedManifest, BenchmarkError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let schema_err = |line: usize, message: String| BenchmarkError::Schema {
        path: display.clone(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line)
            .map_err(|e| schema_err(lineno, e.to_string()))?;
        sample.validate().map_err(|m| schema_err(lineno, m))?;
        if !seen_ids.insert(sample.id.clone()) {
            return Err(schema_err(lineno, format!("duplicate sample id '{}'", sample.id)));
        }
        if image_check != ImageCheck::Skip {
            let resolved = match data_root {
                Some(root) => root.join(&sample.image),
                None => Path::new(&sample.image).to_path_buf(),
            };
            if !resolved.is_file() {
                let msg = format!("sample '{}': image not found: {}", sample.id, resolved.display());
                match image_check {
                    ImageCheck::Fail => return Err(schema_err(lineno, msg)),
                    ImageCheck::Warn => warnings.push(msg),
                    ImageCheck::Skip => unreachable!(),
                }
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(schema_err(0, "manifest contains no samples".into()));
    }
    Ok(LoadedManifest { samples, warnings })
}

/// Content hash of the manifest file bytes; stamped into every record so
/// results from different manifests are never silently mixed.
pub fn manifest_file_hash(path: &Path) -> Result<String, BenchmarkError> {
    Ok(crate::backends::content_hash(&std::fs::read(path)?))
}

pub fn save_manifest(path: &Path, samples: &[Sample]) -> Result<(), BenchmarkError> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Draws exactly `quotas[subcategory]` samples per subcategory, deterministic
/// for a fixed seed and pool order.
pub fn stratified_sample(
    pool: &[Sample],
    quotas: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Vec<Sample>, BenchmarkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (subcategory, &want) in quotas {
        let mut indices: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, s)| &s.subcategory == subcategory)
            .map(|(i, _)| i)
            .collect();
        if want > indices.len() {
            return Err(BenchmarkError::QuotaExceedsPool {
                subcategory: subcategory.clone(),
                want,
                have: indices.len(),
            });
        }
        // Partial Fisher-Yates: the first `want` slots are a uniform draw.
        for i in 0..want {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        indices.truncate(want);
        indices.sort_unstable();
        picked.extend(indices);
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Judged outcome of one sample run, the input grain of [`aggregate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedRecord {
    pub sample_id: String,
    pub outcome: Outcome,
    /// Set only on incorrect records from generation conditions.
    pub error_label: Option<ErrorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    /// All vote runs failed; excluded from accuracy denominators.
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountLine {
    pub n: u64,
    pub correct: u64,
}

impl CountLine {
    /// Raw accuracy ratio; `None` when the denominator is zero.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.correct as f64 / self.n as f64)
    }

    /// Accuracy in percent, rounded half-up to one decimal.
    pub fn accuracy_pct(&self) -> Option<f64> {
        self.accuracy().map(|a| round_half_up(a * 100.0, 1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub counts: BTreeMap<ErrorKind, u64>,
    pub unattributed: u64,
}

impl ErrorDistribution {
    pub fn total_attributed(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Percentage of attributed errors per label, one-decimal round-half-up.
    pub fn percentages(&self) -> BTreeMap<ErrorKind, f64> {
        let total = self.total_attributed();
        self.counts
            .iter()
            .map(|(k, &v)| {
                let pct = if total == 0 {
                    0.0
                } else {
                    round_half_up(v as f64 * 100.0 / total as f64, 1)
                };
                (*k, pct)
            })
            .collect()
    }
}

/// Per-category and overall accuracy plus the error-label distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub per_category: BTreeMap<Category, CountLine>,
    /// Micro average: total correct over total judged.
    pub overall: CountLine,
    /// Mean of per-category accuracies over categories with n > 0.
    pub macro_accuracy: Option<f64>,
    pub failures: u64,
    pub errors: ErrorDistribution,
}

/// Folds judged records into [`CategoryStats`]. Order-independent; failed
/// records are counted separately and excluded from every denominator.
pub fn aggregate(records: &[JudgedRecord], manifest: &[Sample]) -> Result<CategoryStats, BenchmarkError> {
    let categories: BTreeMap<&str, Category> = manifest
        .iter()
        .map(|s| (s.id.as_str(), s.category))
        .collect();
    let mut per_category: BTreeMap<Category, CountLine> =
        Category::ALL.iter().map(|c| (*c, CountLine::default())).collect();
    let mut overall = CountLine::default();
    let mut failures = 0u64;
    let mut errors = ErrorDistribution::default();
    for record in records {
        let category = *categories
            .get(record.sample_id.as_str())
            .ok_or_else(|| BenchmarkError::UnknownSample(record.sample_id.clone()))?;
        match record.outcome {
            Outcome::Failed => failures += 1,
            outcome => {
                let line = per_category.get_mut(&category).expect("all categories present");
                line.n += 1;
                overall.n += 1;
                if outcome == Outcome::Correct {
                    line.correct += 1;
                    overall.correct += 1;
                } else {
                    match record.error_label {
                        Some(kind) => *errors.counts.entry(kind).or_insert(0) += 1,
                        None => errors.unattributed += 1,
                    }
                }
            }
        }
    }
    let present: Vec<f64> = per_category.values().filter_map(|l| l.accuracy()).collect();
    let macro_accuracy = (!present.is_empty())
        .then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(CategoryStats {
        per_category,
        overall,
        macro_accuracy,
        failures,
        errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub base_pct: f64,
    pub aug_pct: f64,
    /// Absolute difference in percentage points.
    pub abs_pp: f64,
    /// Relative gain (aug - base) / base, in percent.
    pub rel_gain_pct: Option<f64>,
}

fn delta_between(base: &CountLine, aug: &CountLine) -> Option<Delta> {
    let (b, a) = (base.accuracy()?, aug.accuracy()?);
    Some(Delta {
        base_pct: b * 100.0,
        aug_pct: a * 100.0,
        abs_pp: (a - b) * 100.0,
        rel_gain_pct: (b != 0.0).then(|| (a - b) / b * 100.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_category: BTreeMap<Category, Option<Delta>>,
    pub overall: Option<Delta>,
}

/// Absolute percentage-point deltas and relative gain of `aug` over `base`.
pub fn compare(base: &CategoryStats, aug: &CategoryStats) -> Result<Comparison, BenchmarkError> {
    let base_keys: BTreeSet<_> = base.per_category.keys().collect();
    let aug_keys: BTreeSet<_> = aug.per_category.keys().collect();
    if base_keys != aug_keys {
        return Err(BenchmarkError::CategoryMismatch(format!(
            "{base_keys:?} vs {aug_keys:?}"
        )));
    }
    let per_category = base
        .per_category
        .iter()
        .map(|(cat, b)| (*cat, delta_between(b, &aug.per_category[cat])))
        .collect();
    Ok(Comparison {
        per_category,
        overall: delta_between(&base.overall, &aug.overall),
    })
}

/// Round-half-up (half toward +∞) to `decimals` places; the rounding rule
/// used for every reported percentage.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    (x * factor + 0.5).floor() / factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample(id: &str, category: Category, subcategory: &str) -> Sample {
        Sample {
            schema_version: 1,
            id: id.into(),
            image: format!("images/{id}.png"),
            question: "Which side?".into(),
            choices: vec![
                Choice { id: "A".into(), text: "left".into() },
                Choice { id: "B".into(), text: "right".into() },
            ],
            ground_truth: "A".into(),
            category,
            subcategory: subcategory.into(),
            source: SampleSource::Other,
        }
    }

    fn write_manifest(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = write_manifest(&[]);
        let err = load_manifest(f.path(), None, ImageCheck::Skip).unwrap_err();
        assert!(err.to_string().contains("no samples"));
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let s = serde_json::to_string(&sample("dup", Category::Size, "scale")).unwrap();
        let f = write_manifest(&[s.clone(), s]);
        let err = load_manifest(f.path(), None, ImageCheck::Skip).unwrap_err();
        assert!(err.to_string().contains("dup"), "{err}");
    }

    #[test]
    fn load_rejects_ground_truth_outside_choices() {
        let mut s = sample("x", Category::Location, "depth");
        s.ground_truth = "Z".into();
        let f = write_manifest(&[serde_json::to_string(&s).unwrap()]);
        let err = load_manifest(f.path(), None, ImageCheck::Skip).unwrap_err();
        assert!(err.to_string().contains("ground_truth"), "{err}");
    }

    #[test]
    fn load_reports_line_numbers() {
        let good = serde_json::to_string(&sample("ok", Category::Size, "scale")).unwrap();
        let f = write_manifest(&[good, "{not json".into()]);
        let err = load_manifest(f.path(), None, ImageCheck::Skip).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn image_check_warn_and_fail() {
        let s = serde_json::to_string(&sample("img", Category::Size, "scale")).unwrap();
        let f = write_manifest(&[s]);
        let loaded = load_manifest(f.path(), None, ImageCheck::Warn).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert!(load_manifest(f.path(), None, ImageCheck::Fail).is_err());
    }

    fn pool() -> Vec<Sample> {
        let mut pool = Vec::new();
        for i in 0..7 {
            pool.push(sample(&format!("a{i}"), Category::Orientation, "a"));
        }
        for i in 0..3 {
            pool.push(sample(&format!("b{i}"), Category::Location, "b"));
        }
        pool
    }

    #[test]
    fn stratified_sample_hits_quotas() {
        let quotas = BTreeMap::from([("a".to_string(), 2), ("b".to_string(), 1)]);
        let picked = stratified_sample(&pool(), &quotas, 99).unwrap();
        assert_eq!(picked.len(), 3);
        assert_eq!(picked.iter().filter(|s| s.subcategory == "a").count(), 2);
        assert_eq!(picked.iter().filter(|s| s.subcategory == "b").count(), 1);
    }

    #[test]
    fn stratified_sample_is_deterministic() {
        let quotas = BTreeMap::from([("a".to_string(), 3), ("b".to_string(), 2)]);
        let first = stratified_sample(&pool(), &quotas, 7).unwrap();
        let second = stratified_sample(&pool(), &quotas, 7).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn stratified_sample_rejects_excess_quota() {
        let quotas = BTreeMap::from([("b".to_string(), 5)]);
        let err = stratified_sample(&pool(), &quotas, 1).unwrap_err();
        assert!(matches!(err, BenchmarkError::QuotaExceedsPool { .. }));
        assert!(err.to_string().contains('b'));
    }

    /// Builds a synthetic manifest + records with the given per-category
    /// (correct, total) counts.
    fn stats_from_counts(counts: &[(Category, u64, u64)]) -> CategoryStats {
        let mut manifest = Vec::new();
        let mut records = Vec::new();
        for (category, correct, total) in counts {
            for i in 0..*total {
                let id = format!("{category}-{i}");
                manifest.push(sample(&id, *category, "s"));
                records.push(JudgedRecord {
                    sample_id: id,
                    outcome: if i < *correct { Outcome::Correct } else { Outcome::Incorrect },
                    error_label: None,
                });
            }
        }
        aggregate(&records, &manifest).unwrap()
    }

    #[test]
    fn aggregate_reproduces_reference_percentages() {
        let stats = stats_from_counts(&[
            (Category::Orientation, 165, 225),
            (Category::Location, 196, 230),
            (Category::Size, 41, 45),
            (Category::MultiObject, 145, 195),
        ]);
        let pct = |c: Category| stats.per_category[&c].accuracy_pct().unwrap();
        assert_eq!(pct(Category::Orientation), 73.3);
        assert_eq!(pct(Category::Location), 85.2);
        assert_eq!(pct(Category::Size), 91.1);
        assert_eq!(pct(Category::MultiObject), 74.4);
        assert_eq!(stats.overall.accuracy_pct().unwrap(), 78.7);
        assert_eq!(stats.overall.n, 695);
        // Micro identity: overall correct equals the sum of category counts.
        let sum: u64 = stats.per_category.values().map(|l| l.correct).sum();
        assert_eq!(stats.overall.correct, sum);
    }

    #[test]
    fn aggregate_error_distribution() {
        let mut manifest = Vec::new();
        let mut records = Vec::new();
        let labels = [
            (ErrorKind::WrongInstruction, 81u64),
            (ErrorKind::BadGeneration, 85),
            (ErrorKind::VlFailure, 22),
        ];
        let mut i = 0;
        for (kind, count) in labels {
            for _ in 0..count {
                let id = format!("e{i}");
                manifest.push(sample(&id, Category::Orientation, "s"));
                records.push(JudgedRecord {
                    sample_id: id,
                    outcome: Outcome::Incorrect,
                    error_label: Some(kind),
                });
                i += 1;
            }
        }
        let stats = aggregate(&records, &manifest).unwrap();
        assert_eq!(stats.errors.total_attributed(), 188);
        let pct = stats.errors.percentages();
        assert_eq!(pct[&ErrorKind::WrongInstruction], 43.1);
        assert_eq!(pct[&ErrorKind::BadGeneration], 45.2);
        assert_eq!(pct[&ErrorKind::VlFailure], 11.7);
        let sum: f64 = pct.values().sum();
        assert!((sum - 100.0).abs() <= 0.1, "rounded percentages sum to {sum}");
    }

    #[test]
    fn aggregate_is_order_independent() {
        let mut manifest = Vec::new();
        let mut records = Vec::new();
        for i in 0..40 {
            let id = format!("s{i}");
            manifest.push(sample(
                &id,
                Category::ALL[i % 4],
                "s",
            ));
            records.push(JudgedRecord {
                sample_id: id,
                outcome: if i % 3 == 0 { Outcome::Correct } else { Outcome::Incorrect },
                error_label: None,
            });
        }
        let forward = aggregate(&records, &manifest).unwrap();
        records.reverse();
        let backward = aggregate(&records, &manifest).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn aggregate_empty_and_failures() {
        let manifest = vec![sample("a", Category::Size, "s")];
        let stats = aggregate(&[], &manifest).unwrap();
        assert_eq!(stats.overall.n, 0);
        assert_eq!(stats.overall.accuracy(), None);
        assert_eq!(stats.macro_accuracy, None);
        let records = vec![JudgedRecord {
            sample_id: "a".into(),
            outcome: Outcome::Failed,
            error_label: None,
        }];
        let stats = aggregate(&records, &manifest).unwrap();
        assert_eq!(stats.failures, 1);
        assert_eq!(stats.overall.n, 0, "failed runs leave the denominator");
    }

    #[test]
    fn aggregate_rejects_unknown_sample() {
        let manifest = vec![sample("a", Category::Size, "s")];
        let records = vec![JudgedRecord {
            sample_id: "ghost".into(),
            outcome: Outcome::Correct,
            error_label: None,
        }];
        assert!(matches!(
            aggregate(&records, &manifest),
            Err(BenchmarkError::UnknownSample(_))
        ));
    }

    #[test]
    fn compare_reference_deltas() {
        let base = stats_from_counts(&[(Category::Orientation, 704, 1000)]);
        let aug = stats_from_counts(&[(Category::Orientation, 717, 1000)]);
        let delta = compare(&base, &aug).unwrap().overall.unwrap();
        assert_eq!(round_half_up(delta.abs_pp, 1), 1.3);

        let base = stats_from_counts(&[(Category::Orientation, 565, 1000)]);
        let aug = stats_from_counts(&[(Category::Orientation, 522, 1000)]);
        let delta = compare(&base, &aug).unwrap().overall.unwrap();
        assert_eq!(round_half_up(delta.abs_pp, 1), -4.3);
    }

    #[test]
    fn compare_relative_gain() {
        let base = stats_from_counts(&[(Category::Orientation, 6000, 10000)]);
        let aug = stats_from_counts(&[(Category::Orientation, 6402, 10000)]);
        let delta = compare(&base, &aug).unwrap().overall.unwrap();
        assert_eq!(round_half_up(delta.rel_gain_pct.unwrap(), 1), 6.7);
    }

    #[test]
    fn compare_self_is_zero() {
        let stats = stats_from_counts(&[(Category::Orientation, 3, 7), (Category::Size, 1, 2)]);
        let cmp = compare(&stats, &stats).unwrap();
        assert_eq!(cmp.overall.unwrap().abs_pp, 0.0);
        for delta in cmp.per_category.values().flatten() {
            assert_eq!(delta.abs_pp, 0.0);
            assert_eq!(delta.rel_gain_pct, Some(0.0));
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(43.05, 1), 43.1);
        assert_eq!(round_half_up(43.04999, 1), 43.0);
        assert_eq!(round_half_up(2.6865079, 3), 2.687);
    }
}
