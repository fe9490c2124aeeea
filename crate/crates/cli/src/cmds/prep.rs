use crate::{cancelled, EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL};
use anyhow::Context;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use viewloop_core::dataprep::{
    assign_bucket, filter_pairs, load_pose_file, metric_scale_with, pose_from_values,
    relative_pose, rescale_motion, DepthMap, PairInput, PairRecord,
    PrecomputedMatcher, ScaleMode,
};
use viewloop_core::geometry::PoseTransform;
use viewloop_core::imageio::png_dimensions;
use viewloop_core::instructions::render_numerical;
use viewloop_core::pipeline::OrderedSink;

fn load_pairs(path: &Path) -> anyhow::Result<Vec<PairInput>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading pairs file {}", path.display()))?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pair: PairInput = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn resolve_pose(
    inline: &Option<Vec<f64>>,
    pose_file: &Option<String>,
    image: &str,
    data_root: &Path,
) -> Result<PoseTransform, String> {
    if let Some(values) = inline {
        return pose_from_values(values)
            .ok_or_else(|| format!("inline pose needs 16 entries, got {}", values.len()));
    }
    let pose_file = pose_file.as_ref().ok_or("no inline pose and no pose_file")?;
    let table = load_pose_file(&data_root.join(pose_file)).map_err(|e| e.to_string())?;
    if let Some(pose) = table.get(image) {
        return Ok(*pose);
    }
    // Fall back to the file stem as the pose key.
    let stem = Path::new(image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    table
        .get(&stem)
        .copied()
        .ok_or_else(|| format!("pose file has no entry for '{image}' or '{stem}'"))
}

/// Full preparation of one kept pair; any error fails just this pair.
fn prepare_pair(
    pair: &PairInput,
    match_count: u32,
    data_root: &Path,
    scale_mode: ScaleMode,
    min_valid_pixels: usize,
    bucket_base: u32,
) -> Result<PairRecord, String> {
    let pose_source = resolve_pose(&pair.pose_source, &pair.pose_file, &pair.source_image, data_root)
        .map_err(|e| format!("source pose: {e}"))?;
    let pose_target = resolve_pose(&pair.pose_target, &pair.pose_file, &pair.target_image, data_root)
        .map_err(|e| format!("target pose: {e}"))?;
    let native_motion = relative_pose(&pose_source, &pose_target)
        .map_err(|e| format!("pair {}: relative pose: {e}", pair.pair_id))?;
    let (scale, motion) = match (&pair.depth_rec, &pair.depth_met) {
        (Some(rec_path), Some(met_path)) => {
            let rec = DepthMap::load(&data_root.join(rec_path)).map_err(|e| e.to_string())?;
            let met = DepthMap::load(&data_root.join(met_path)).map_err(|e| e.to_string())?;
            let scale = metric_scale_with(&rec, &met, scale_mode, min_valid_pixels)
                .map_err(|e| e.to_string())?;
            let rescaled = rescale_motion(&native_motion, scale).map_err(|e| e.to_string())?;
            (Some(scale), rescaled)
        }
        // Without depth references the motion stays in dataset-native units.
        _ => (None, native_motion),
    };
    let dims = match (pair.width, pair.height) {
        (Some(w), Some(h)) => Some((w, h)),
        _ => png_dimensions(&data_root.join(&pair.source_image)).ok(),
    };
    let bucket = dims.map(|(w, h)| assign_bucket(w, h, bucket_base));
    let normalized = motion.normalize().map_err(|e| e.to_string())?;
    Ok(PairRecord {
        pair_id: pair.pair_id.clone(),
        source_image: pair.source_image.clone(),
        target_image: pair.target_image.clone(),
        disposition: "kept".into(),
        match_count: Some(match_count),
        reason: None,
        scale,
        relative_motion: Some(normalized),
        relative_motion_text: Some(render_numerical(&normalized)),
        bucket,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn execute(
    pairs_path: &Path,
    out_path: &Path,
    data_root: Option<&Path>,
    min_matches: u32,
    scale_mode: &str,
    min_valid_pixels: usize,
    bucket_base: u32,
    workers: usize,
) -> anyhow::Result<u8> {
    let pairs = match load_pairs(pairs_path) {
        Ok(pairs) => pairs,
        Err(e) => {
            eprintln!("pairs error: {e:#}");
            return Ok(EXIT_CONFIG);
        }
    };
    let data_root: PathBuf = data_root
        .map(Path::to_path_buf)
        .or_else(|| pairs_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let scale_mode = match scale_mode {
        "median" => ScaleMode::Median,
        _ => ScaleMode::LeastSquares,
    };

    // Filter over (input position, pair) so the output manifest keeps the
    // input order regardless of worker scheduling.
    struct IndexedMatcher;
    impl viewloop_core::dataprep::PairMatcher<(usize, PairInput)> for IndexedMatcher {
        fn match_count(&self, pair: &(usize, PairInput)) -> Result<u32, String> {
            PrecomputedMatcher.match_count(&pair.1)
        }
    }
    let indexed: Vec<(usize, PairInput)> = pairs.into_iter().enumerate().collect();
    let (kept, discarded) = filter_pairs(indexed, &IndexedMatcher, min_matches);

    enum Task {
        Kept(PairInput, u32),
        Discarded(PairInput, String),
    }
    let mut tasks: Vec<(usize, Task)> = Vec::new();
    for ((order, pair), count) in kept {
        tasks.push((order, Task::Kept(pair, count)));
    }
    for d in discarded {
        let (order, pair) = d.pair;
        tasks.push((order, Task::Discarded(pair, d.reason)));
    }
    tasks.sort_by_key(|(order, _)| *order);

    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(out_path)?;
    let sink = Mutex::new(OrderedSink::new(BufWriter::new(file)));
    let cursor = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let worker_count = workers.max(1).min(tasks.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                if cancelled().load(Ordering::SeqCst) {
                    break;
                }
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let (order, task) = &tasks[index];
                let record = match task {
                    Task::Kept(pair, count) => prepare_pair(
                        pair,
                        *count,
                        &data_root,
                        scale_mode,
                        min_valid_pixels,
                        bucket_base,
                    )
                    .unwrap_or_else(|reason| {
                        failed.fetch_add(1, Ordering::SeqCst);
                        PairRecord {
                            pair_id: pair.pair_id.clone(),
                            source_image: pair.source_image.clone(),
                            target_image: pair.target_image.clone(),
                            disposition: "failed".into(),
                            match_count: Some(*count),
                            reason: Some(reason),
                            scale: None,
                            relative_motion: None,
                            relative_motion_text: None,
                            bucket: None,
                        }
                    }),
                    Task::Discarded(pair, reason) => PairRecord {
                        pair_id: pair.pair_id.clone(),
                        source_image: pair.source_image.clone(),
                        target_image: pair.target_image.clone(),
                        disposition: "discarded".into(),
                        match_count: pair.match_count,
                        reason: Some(reason.clone()),
                        scale: None,
                        relative_motion: None,
                        relative_motion_text: None,
                        bucket: None,
                    },
                };
                let line = serde_json::to_string(&record).expect("record serializes");
                let mut sink = sink.lock().unwrap();
                if sink.push(*order, line).is_err() {
                    cancelled().store(true, Ordering::SeqCst);
                    break;
                }
            });
        }
    });

    let failed = failed.into_inner();
    let total = tasks.len();
    println!(
        "prepared {total} pair(s) -> {} ({failed} failed)",
        out_path.display()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}
