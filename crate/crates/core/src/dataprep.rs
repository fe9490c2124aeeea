//! Pair-preparation math: overlap filtering, relative pose, least-squares
//! metric-scale alignment, translation rescaling, and resolution buckets.
//!
//! Feature matching itself is out of scope; a [`PairMatcher`] yields a
//! verified-match count per pair and is usually backed by precomputed counts
//! shipped in the pairs file. Depth maps are ingested from files (PFM, or
//! 16-bit grayscale PNG interpreted as millimeters), never predicted here.

use crate::geometry::{CameraMotion, GeometryError, PoseTransform};
use crate::imageio;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Pairs with fewer verified matches than this are discarded ("fewer than
/// 10" means exactly 10 is kept).
pub const DEFAULT_MIN_MATCHES: u32 = 10;

/// Fewer jointly-valid depth pixels than this makes the scale estimate
/// noise; configurable engineering floor.
pub const DEFAULT_MIN_VALID_PIXELS: usize = 30;

#[derive(Debug, Error)]
pub enum DataprepError {
    #[error("depth maps differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("only {have} jointly-valid depth pixels (need {need})")]
    InsufficientValidPixels { have: usize, need: usize },
    #[error("reconstructed depths are all zero; scale undefined")]
    DegenerateDepths,
    #[error("scale must be finite and > 0, got {0}")]
    InvalidScale(f64),
    #[error("pose error: {0}")]
    Pose(#[from] GeometryError),
    #[error("depth file {path}: {message}")]
    DepthFile { path: String, message: String },
    #[error("pose file {path} line {line}: {message}")]
    PoseFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major depth samples with a validity mask (valid = finite and > 0).
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width as usize) * (height as usize), "dimension mismatch");
        let mask = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        DepthMap { width, height, values, mask }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Dispatches on extension: `.pfm` or 16-bit grayscale `.png` (values in
    /// millimeters).
    pub fn load(path: &Path) -> Result<Self, DataprepError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pfm") => Self::load_pfm(path),
            Some(ext) if ext.eq_ignore_ascii_case("png") => Self::load_png16_mm(path),
            _ => Err(DataprepError::DepthFile {
                path: path.display().to_string(),
                message: "unsupported extension (expected .pfm or .png)".into(),
            }),
        }
    }

    /// Grayscale PFM. Rows are stored bottom-to-top in the file and flipped
    /// to top-down here; a negative scale marks little-endian floats.
    pub fn load_pfm(path: &Path) -> Result<Self, DataprepError> {
        let bytes = std::fs::read(path)?;
        let fail = |message: &str| DataprepError::DepthFile {
            path: path.display().to_string(),
            message: message.into(),
        };
        let mut pos = 0usize;
        let mut token = || -> Result<String, DataprepError> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fail("truncated header"));
            }
            // Exactly one whitespace byte terminates each header token
            // (tolerating CRLF line ends).
            let token = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
            pos += 1;
            if pos < bytes.len() && bytes[pos - 1] == b'\r' && bytes[pos] == b'\n' {
                pos += 1;
            }
            Ok(token)
        };
        let magic = token()?;
        if magic != "Pf" {
            return Err(fail(&format!("expected grayscale PFM magic 'Pf', got '{magic}'")));
        }
        let width: u32 = token()?.parse().map_err(|_| fail("bad width"))?;
        let height: u32 = token()?.parse().map_err(|_| fail("bad height"))?;
        let scale: f64 = token()?.parse().map_err(|_| fail("bad scale"))?;
        let little_endian = scale < 0.0;
        let unit = scale.abs();
        let count = (width as usize) * (height as usize);
        let data = &bytes[pos..];
        if data.len() < count * 4 {
            return Err(fail("truncated pixel data"));
        }
        let mut values = vec![0.0f64; count];
        for row in 0..height as usize {
            // PFM rows run bottom-to-top.
            let out_row = height as usize - 1 - row;
            for col in 0..width as usize {
                let i = (row * width as usize + col) * 4;
                let raw = [data[i], data[i + 1], data[i + 2], data[i + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                values[out_row * width as usize + col] = v as f64 * unit;
            }
        }
        Ok(Self::from_values(width, height, values))
    }

    /// 16-bit grayscale PNG read as millimeters; zero marks invalid depth.
    pub fn load_png16_mm(path: &Path) -> Result<Self, DataprepError> {
        let (width, height, samples) =
            imageio::load_gray16(path).map_err(|e| DataprepError::DepthFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let values = samples.iter().map(|&s| s as f64 / 1000.0).collect();
        Ok(Self::from_values(width, height, values))
    }
}

/// Writes a little-endian grayscale PFM; fixture generation and tests.
pub fn save_pfm(path: &Path, depth: &DepthMap) -> Result<(), DataprepError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).as_bytes());
    for row in (0..depth.height as usize).rev() {
        for col in 0..depth.width as usize {
            let v = depth.values[row * depth.width as usize + col] as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Pluggable verified-match counting. Implementations may wrap precomputed
/// counts or an external matcher; this crate never runs feature extraction.
pub trait PairMatcher<T> {
    fn match_count(&self, pair: &T) -> Result<u32, String>;
}

/// Serves `match_count` straight from the pairs file.
pub struct PrecomputedMatcher;

impl PairMatcher<PairInput> for PrecomputedMatcher {
    fn match_count(&self, pair: &PairInput) -> Result<u32, String> {
        pair.match_count
            .ok_or_else(|| format!("pair {}: no precomputed match_count", pair.pair_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discarded<T> {
    pub pair: T,
    pub reason: String,
}

/// Partitions pairs by verified-match count: kept iff count ≥ `min_matches`.
/// Matcher failures route the pair to `discarded` with the failure reason.
pub fn filter_pairs<T>(
    pairs: Vec<T>,
    matcher: &dyn PairMatcher<T>,
    min_matches: u32,
) -> (Vec<(T, u32)>, Vec<Discarded<T>>) {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for pair in pairs {
        match matcher.match_count(&pair) {
            Ok(count) if count >= min_matches => kept.push((pair, count)),
            Ok(count) => discarded.push(Discarded {
                pair,
                reason: format!("{count} verified matches (need {min_matches})"),
            }),
            Err(reason) => discarded.push(Discarded {
                pair,
                reason: format!("unmatched: {reason}"),
            }),
        }
    }
    (kept, discarded)
}

/// The target camera pose expressed in the source camera frame, for
/// camera-to-world input poses: source⁻¹ · target.
pub fn relative_pose(
    pose_source: &PoseTransform,
    pose_target: &PoseTransform,
) -> Result<CameraMotion, GeometryError> {
    pose_source.inverse().matmul(pose_target).to_motion()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Closed-form least squares: s* = Σ(rec·met) / Σ(rec²).
    LeastSquares,
    /// Median of per-pixel ratios met/rec; robust to depth outliers.
    Median,
}

/// Least-squares scale factor aligning reconstructed depths to predicted
/// metric depths over jointly-valid pixels.
pub fn metric_scale(depth_rec: &DepthMap, depth_met: &DepthMap) -> Result<f64, DataprepError> {
    metric_scale_with(depth_rec, depth_met, ScaleMode::LeastSquares, DEFAULT_MIN_VALID_PIXELS)
}

pub fn metric_scale_with(
    depth_rec: &DepthMap,
    depth_met: &DepthMap,
    mode: ScaleMode,
    min_valid: usize,
) -> Result<f64, DataprepError> {
    if (depth_rec.width, depth_rec.height) != (depth_met.width, depth_met.height) {
        return Err(DataprepError::DimensionMismatch(
            depth_rec.width,
            depth_rec.height,
            depth_met.width,
            depth_met.height,
        ));
    }
    let joint: Vec<(f64, f64)> = depth_rec
        .values
        .iter()
        .zip(&depth_rec.mask)
        .zip(depth_met.values.iter().zip(&depth_met.mask))
        .filter(|((_, rm), (_, mm))| **rm && **mm)
        .map(|((r, _), (m, _))| (*r, *m))
        .collect();
    if joint.len() < min_valid {
        return Err(DataprepError::InsufficientValidPixels {
            have: joint.len(),
            need: min_valid,
        });
    }
    match mode {
        ScaleMode::LeastSquares => {
            let cross: f64 = joint.iter().map(|(r, m)| r * m).sum();
            let sq: f64 = joint.iter().map(|(r, _)| r * r).sum();
            if sq == 0.0 {
                return Err(DataprepError::DegenerateDepths);
            }
            Ok(cross / sq)
        }
        ScaleMode::Median => {
            let mut ratios: Vec<f64> = joint.iter().map(|(r, m)| m / r).collect();
            ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
            let n = ratios.len();
            Ok(if n % 2 == 1 {
                ratios[n / 2]
            } else {
                (ratios[n / 2 - 1] + ratios[n / 2]) / 2.0
            })
        }
    }
}

/// Multiplies translations by `s`; rotation fields pass through bitwise
/// (rotations are scale-invariant).
pub fn rescale_motion(m: &CameraMotion, s: f64) -> Result<CameraMotion, DataprepError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(DataprepError::InvalidScale(s));
    }
    Ok(CameraMotion {
        dx: m.dx * s,
        dy: m.dy * s,
        dz: m.dz * s,
        yaw: m.yaw,
        pitch: m.pitch,
        roll: m.roll,
    })
}

/// Candidate bucket grid for a base size: both sides multiples of 64, aspect
/// ratio within [1/4, 4], pixel count within [0.85, 1.15]·base².
pub fn candidate_buckets(base: u32) -> Vec<(u32, u32)> {
    let target = (base as u64) * (base as u64);
    let lo = (0.85 * target as f64) as u64;
    let hi = (1.15 * target as f64) as u64;
    let mut out = Vec::new();
    let max_side = ((hi as f64 * 4.0).sqrt() / 64.0).ceil() as u32 * 64;
    let mut w = 64;
    while w <= max_side {
        let mut h = 64;
        while h <= max_side {
            let px = (w as u64) * (h as u64);
            let ratio = w as f64 / h as f64;
            if px >= lo && px <= hi && (0.25..=4.0).contains(&ratio) {
                out.push((w, h));
            }
            h += 64;
        }
        w += 64;
    }
    out
}

/// The candidate bucket closest in log-aspect-ratio to the input, ties
/// broken by pixel-count distance to base², then by smaller width. Extreme
/// ratios clamp to the nearest candidate.
pub fn assign_bucket(width: u32, height: u32, base: u32) -> (u32, u32) {
    let input_ratio = width as f64 / height as f64;
    let target = (base as f64) * (base as f64);
    candidate_buckets(base)
        .into_iter()
        .min_by(|a, b| {
            let key = |(w, h): &(u32, u32)| {
                let ratio_dist = ((*w as f64 / *h as f64) / input_ratio).ln().abs();
                let px_dist = ((*w as f64) * (*h as f64) - target).abs();
                (ratio_dist, px_dist, *w)
            };
            key(a).partial_cmp(&key(b)).expect("finite keys")
        })
        .expect("candidate grid is never empty")
}

/// One line of the pairs input file (JSON lines). Poses are camera-to-world
/// row-major 4×4 matrices, inline or looked up by image id in a pose file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairInput {
    pub pair_id: String,
    pub source_image: String,
    pub target_image: String,
    #[serde(default)]
    pub pose_source: Option<Vec<f64>>,
    #[serde(default)]
    pub pose_target: Option<Vec<f64>>,
    /// Pose file with lines `image_id v00 .. v33`, consulted when inline
    /// poses are absent.
    #[serde(default)]
    pub pose_file: Option<String>,
    #[serde(default)]
    pub match_count: Option<u32>,
    #[serde(default)]
    pub depth_rec: Option<String>,
    #[serde(default)]
    pub depth_met: Option<String>,
    /// Source image dimensions for bucket assignment; read from the image
    /// when absent.
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
}

/// One line of the prep output manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub source_image: String,
    pub target_image: String,
    pub disposition: String,
    pub match_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_motion: Option<CameraMotion>,
    /// Canonical numerical-grammar rendering of `relative_motion`, ready to
    /// hand to a synthesizer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_motion_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket: Option<(u32, u32)>,
}

/// Parses a pose file: whitespace-separated `image_id` plus 16 matrix
/// entries per line, `#` comments allowed.
pub fn load_pose_file(path: &Path) -> Result<BTreeMap<String, PoseTransform>, DataprepError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().expect("non-empty line").to_string();
        let values: Vec<f64> = fields.map(|f| f.parse::<f64>()).collect::<Result<_, _>>().map_err(
            |e| DataprepError::PoseFile {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            },
        )?;
        if values.len() != 16 {
            return Err(DataprepError::PoseFile {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 16 matrix entries, got {}", values.len()),
            });
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&values);
        map.insert(id, PoseTransform::from_matrix4(&m));
    }
    Ok(map)
}

pub fn pose_from_values(values: &[f64]) -> Option<PoseTransform> {
    if values.len() != 16 {
        return None;
    }
    let mut m = [0.0; 16];
    m.copy_from_slice(values);
    Some(PoseTransform::from_matrix4(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct FixedMatcher(Vec<Result<u32, String>>);

    impl PairMatcher<usize> for FixedMatcher {
        fn match_count(&self, pair: &usize) -> Result<u32, String> {
            self.0[*pair].clone()
        }
    }

    #[test]
    fn filter_threshold_is_inclusive_at_ten() {
        let matcher = FixedMatcher(vec![Ok(9), Ok(10), Ok(250), Err("no descriptors".into())]);
        let (kept, discarded) = filter_pairs(vec![0, 1, 2, 3], &matcher, DEFAULT_MIN_MATCHES);
        assert_eq!(kept.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(discarded.len(), 2);
        assert!(discarded[0].reason.contains("9 verified matches"));
        assert!(discarded[1].reason.contains("unmatched"));
        // Partition property: kept ∪ discarded == input, disjoint.
        let mut all: Vec<usize> = kept.iter().map(|(p, _)| *p).collect();
        all.extend(discarded.iter().map(|d| d.pair));
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn filter_empty_input() {
        let matcher = FixedMatcher(vec![]);
        let (kept, discarded) = filter_pairs(Vec::<usize>::new(), &matcher, 10);
        assert!(kept.is_empty() && discarded.is_empty());
    }

    #[test]
    fn relative_pose_identity_and_forward() {
        let pose = CameraMotion::new(1.0, 2.0, 3.0, 30.0, 10.0, -5.0)
            .to_transform()
            .unwrap();
        let rel = relative_pose(&pose, &pose).unwrap();
        for v in [rel.dx, rel.dy, rel.dz, rel.yaw, rel.pitch, rel.roll] {
            assert!(v.abs() < 1e-9);
        }
        // Target one unit along the source camera's forward axis.
        let step = CameraMotion::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0).to_transform().unwrap();
        let target = pose.matmul(&step);
        let rel = relative_pose(&pose, &target).unwrap();
        assert!((rel.dz - 1.0).abs() < 1e-9, "dz={}", rel.dz);
        assert!(rel.dx.abs() < 1e-9 && rel.dy.abs() < 1e-9);
    }

    #[test]
    fn relative_pose_round_trip_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let mut motion = || {
                CameraMotion::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-170.0..170.0),
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-170.0..170.0),
                )
            };
            let a = motion().to_transform().unwrap();
            let b = motion().to_transform().unwrap();
            let rel = relative_pose(&a, &b).unwrap();
            let recovered = a.matmul(&rel.to_transform().unwrap());
            for i in 0..3 {
                assert!((recovered.translation[i] - b.translation[i]).abs() < 1e-9);
                for j in 0..3 {
                    assert!((recovered.rotation[i][j] - b.rotation[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    fn depth(values: &[f64]) -> DepthMap {
        DepthMap::from_values(values.len() as u32, 1, values.to_vec())
    }

    #[test]
    fn metric_scale_hand_cases() {
        let s = metric_scale_with(&depth(&[1.0, 2.0, 3.0]), &depth(&[2.0, 4.0, 6.0]), ScaleMode::LeastSquares, 1)
            .unwrap();
        assert_eq!(s, 2.0, "28/14");
        let s = metric_scale_with(&depth(&[1.0, 2.0]), &depth(&[3.0, 5.0]), ScaleMode::LeastSquares, 1)
            .unwrap();
        assert_eq!(s, 2.6, "13/5");
        let same = depth(&[0.5, 1.0, 7.0]);
        let s = metric_scale_with(&same, &same, ScaleMode::LeastSquares, 1).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    /// Independent 1-D minimizer of Σ(s·rec − met)² by ternary search.
    fn brute_force_scale(rec: &[f64], met: &[f64]) -> f64 {
        let objective = |s: f64| -> f64 {
            rec.iter().zip(met).map(|(r, m)| (s * r - m).powi(2)).sum()
        };
        let (mut lo, mut hi) = (1e-3, 1e3);
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if objective(m1) < objective(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn metric_scale_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.random_range(30..200);
            let true_scale = rng.random_range(0.05..20.0);
            let rec: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
            let met: Vec<f64> = rec
                .iter()
                .map(|r| r * true_scale + rng.random_range(-0.01..0.01))
                .collect();
            let s = metric_scale(&depth(&rec), &depth(&met)).unwrap();
            let oracle = brute_force_scale(&rec, &met);
            assert!((s - oracle).abs() < 1e-6, "{s} vs oracle {oracle}");
        }
    }

    #[test]
    fn metric_scale_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rec: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..5.0)).collect();
        let met: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..5.0)).collect();
        let k = 3.7;
        let scaled_rec: Vec<f64> = rec.iter().map(|r| r * k).collect();
        let s1 = metric_scale(&depth(&rec), &depth(&met)).unwrap();
        let s2 = metric_scale(&depth(&scaled_rec), &depth(&met)).unwrap();
        assert!((s2 - s1 / k).abs() < 1e-12);
    }

    #[test]
    fn metric_scale_masks_and_floors() {
        // Invalid pixels (zero, NaN) are excluded from the fit.
        let rec = DepthMap::from_values(4, 1, vec![1.0, 0.0, 2.0, f64::NAN]);
        let met = DepthMap::from_values(4, 1, vec![2.0, 9.0, 4.0, 9.0]);
        let s = metric_scale_with(&rec, &met, ScaleMode::LeastSquares, 2).unwrap();
        assert_eq!(s, 2.0);
        let err = metric_scale(&rec, &met).unwrap_err();
        assert!(matches!(err, DataprepError::InsufficientValidPixels { have: 2, need: 30 }));
        let err = metric_scale_with(&rec, &depth(&[1.0]), ScaleMode::LeastSquares, 1).unwrap_err();
        assert!(matches!(err, DataprepError::DimensionMismatch(..)));
    }

    #[test]
    fn median_mode_resists_outliers() {
        let rec = depth(&[1.0, 2.0, 4.0, 1.0]);
        let met = depth(&[2.0, 4.0, 8.0, 1000.0]);
        let s = metric_scale_with(&rec, &met, ScaleMode::Median, 1).unwrap();
        assert_eq!(s, 2.0, "median of [2, 2, 2, 1000]");
    }

    #[test]
    fn rescale_preserves_rotation_bits() {
        let m = CameraMotion::new(1.0, 0.0, 0.0, 30.0, -0.0, 179.9);
        let r = rescale_motion(&m, 2.0).unwrap();
        assert_eq!(r.dx, 2.0);
        assert_eq!(r.yaw.to_bits(), m.yaw.to_bits());
        assert_eq!(r.pitch.to_bits(), m.pitch.to_bits());
        assert_eq!(r.roll.to_bits(), m.roll.to_bits());
        let back = rescale_motion(&r, 0.5).unwrap();
        assert!((back.dx - m.dx).abs() < 1e-12);
        assert!(matches!(rescale_motion(&m, 0.0), Err(DataprepError::InvalidScale(_))));
        assert!(matches!(rescale_motion(&m, -2.0), Err(DataprepError::InvalidScale(_))));
    }

    #[test]
    fn bucket_exact_and_scaled() {
        assert_eq!(assign_bucket(1024, 1024, 1024), (1024, 1024));
        assert_eq!(assign_bucket(2048, 2048, 1024), (1024, 1024));
    }

    #[test]
    fn bucket_widescreen_matches_brute_force() {
        let picked = assign_bucket(1920, 1080, 1024);
        assert_eq!(picked, (1344, 768));
        // Independent argmin over an exhaustive re-enumeration.
        let input_ratio = 1920.0 / 1080.0;
        let mut best = None;
        for w in (64..=4096u32).step_by(64) {
            for h in (64..=4096u32).step_by(64) {
                let px = (w as u64) * (h as u64);
                let ratio = w as f64 / h as f64;
                if !(0.25..=4.0).contains(&ratio) {
                    continue;
                }
                if (px as f64) < 0.85 * 1024.0 * 1024.0 || (px as f64) > 1.15 * 1024.0 * 1024.0 {
                    continue;
                }
                let key = (
                    (ratio / input_ratio).ln().abs(),
                    ((px as f64) - 1024.0 * 1024.0).abs(),
                    w,
                );
                if best.as_ref().map_or(true, |(bk, _)| key < *bk) {
                    best = Some((key, (w, h)));
                }
            }
        }
        assert_eq!(picked, best.unwrap().1);
    }

    #[test]
    fn bucket_output_is_on_grid_with_bounded_ratio_error() {
        let candidates = candidate_buckets(1024);
        // Worst-case log-ratio gap between adjacent candidates bounds the
        // achievable error for in-range inputs.
        let mut ratios: Vec<f64> = candidates.iter().map(|(w, h)| (*w as f64 / *h as f64).ln()).collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let worst_gap = ratios.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let w = rng.random_range(64..4000u32);
            let h = rng.random_range(64..4000u32);
            let ratio = (w as f64 / h as f64).clamp(0.25, 4.0);
            let bucket = assign_bucket(w, h, 1024);
            assert!(candidates.contains(&bucket), "{bucket:?} not on grid");
            let err = ((bucket.0 as f64 / bucket.1 as f64) / ratio).ln().abs();
            assert!(
                err <= worst_gap / 2.0 + 1e-9 || ratio <= 0.25 || ratio >= 4.0,
                "ratio error {err} exceeds bound {worst_gap}"
            );
        }
    }

    #[test]
    fn pfm_round_trip_and_bottom_up_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = DepthMap::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        save_pfm(&path, &map).unwrap();
        let back = DepthMap::load(&path).unwrap();
        assert_eq!(back.values, map.values);
        // Manually build a PFM with known bottom-up layout: file rows
        // [5,6] then [7,8] must come back as [[7,8],[5,6]].
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [5.0f32, 6.0, 7.0, 8.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let raw_path = dir.path().join("raw.pfm");
        std::fs::write(&raw_path, bytes).unwrap();
        let loaded = DepthMap::load_pfm(&raw_path).unwrap();
        assert_eq!(loaded.values, vec![7.0, 8.0, 5.0, 6.0]);
    }

    #[test]
    fn png16_depth_reads_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        imageio::save_gray16(&path, 2, 1, &[1500, 0]).unwrap();
        let map = DepthMap::load(&path).unwrap();
        assert_eq!(map.values, vec![1.5, 0.0]);
        assert_eq!(map.mask, vec![true, false]);
    }

    #[test]
    fn pose_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        std::fs::write(
            &path,
            "# id then 16 row-major entries\nimg1 1 0 0 0.5 0 1 0 0 0 0 1 0 0 0 0 1\n",
        )
        .unwrap();
        let map = load_pose_file(&path).unwrap();
        assert_eq!(map["img1"].translation, [0.5, 0.0, 0.0]);
        std::fs::write(&path, "img2 1 2 3\n").unwrap();
        assert!(load_pose_file(&path).is_err());
    }
}
