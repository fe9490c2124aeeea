use crate::{parse_image_check, EXIT_CONFIG, EXIT_OK};
use std::collections::BTreeMap;
use std::path::Path;
use viewloop_core::benchmark::load_manifest;

pub fn execute(
    manifest_path: &Path,
    data_root: Option<&Path>,
    image_check: &str,
) -> anyhow::Result<u8> {
    let loaded = match load_manifest(manifest_path, data_root, parse_image_check(image_check)) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("invalid manifest: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let mut by_category: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_subcategory: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut by_source: BTreeMap<String, u64> = BTreeMap::new();
    for sample in &loaded.samples {
        *by_category.entry(sample.category.to_string()).or_insert(0) += 1;
        *by_subcategory
            .entry((sample.category.to_string(), sample.subcategory.clone()))
            .or_insert(0) += 1;
        *by_source
            .entry(format!("{:?}", sample.source).to_lowercase())
            .or_insert(0) += 1;
    }
    println!("{} valid sample(s)", loaded.samples.len());
    println!("categories:");
    for (category, count) in &by_category {
        println!("  {category:>14}: {count}");
    }
    println!("subcategories:");
    for ((category, subcategory), count) in &by_subcategory {
        println!("  {category:>14} / {subcategory:<24} {count}");
    }
    println!("sources:");
    for (source, count) in &by_source {
        println!("  {source:>14}: {count}");
    }
    Ok(EXIT_OK)
}
