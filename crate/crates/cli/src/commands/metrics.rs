use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use sensor_noise::quality::report;
use sensor_noise::rawio::{list_frames, load_frame};

use super::{create_dir, required, write_json_lines, Ctx, Outcome};
use crate::config::resolve;
use crate::error::{require_dir, CliError, CliResult};
use crate::manifest::Artifacts;
use crate::pairs::{base_stem, noisy_frames, CLEAN, RESTORED};

#[derive(Args, Serialize)]
pub struct MetricsArgs {
    /// Directory of reference frames (`<stem>_clean.pgm` preferred).
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    reference: Option<PathBuf>,
    /// Directory of frames to score (`<stem>_restored.pgm` preferred, else
    /// the noisy frames).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output directory for metrics.jsonl and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MetricsConfig {
    #[serde(rename = "ref")]
    reference: Option<PathBuf>,
    test: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Row {
    stem: String,
    reference: String,
    test: String,
    width: usize,
    height: usize,
    psnr_db: f64,
    ssim: f64,
    peak: f64,
    psnr_capped: bool,
}

fn role(path: &Path, suffix: &str) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with(suffix))
}

fn file_name(path: &Path) -> String {
    path.file_name().expect("frame file").to_string_lossy().into_owned()
}

/// Reference frames keyed by base stem; a `_clean` frame wins over any other
/// frame of the same stem.
fn references(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_frames(dir)? {
        let stem = base_stem(&path);
        if role(&path, CLEAN) || !map.contains_key(&stem) {
            map.insert(stem, path);
        }
    }
    Ok(map)
}

fn test_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let restored: Vec<PathBuf> = list_frames(dir)?.into_iter().filter(|p| role(p, RESTORED)).collect();
    if restored.is_empty() {
        noisy_frames(dir)
    } else {
        Ok(restored)
    }
}

pub fn metrics(args: &MetricsArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: MetricsConfig = resolve("metrics", MetricsConfig::default(), ctx.file, args)?;
    let ref_dir = required(&cfg.reference, "ref")?;
    let test_dir = required(&cfg.test, "test")?;
    let out = required(&cfg.out, "out")?;
    require_dir(ref_dir, "reference")?;
    require_dir(test_dir, "test")?;
    let refs = references(ref_dir)?;

    let mut inputs = Artifacts::default();
    let mut rows = Vec::new();
    for test_path in test_frames(test_dir)? {
        let stem = base_stem(&test_path);
        let Some(ref_path) = refs.get(&stem) else {
            continue;
        };
        let reference = load_frame(ref_path)?;
        let test = load_frame(&test_path)?;
        let w = reference.width.min(test.width);
        let h = reference.height.min(test.height);
        let a = reference.to_signal().center_crop_to(w, h)?;
        let b = test.to_signal().center_crop_to(w, h)?;
        let m = report(&a, &b, reference.meta.range())?;
        inputs.file(&format!("ref/{}", file_name(ref_path)), ref_path);
        inputs.file(&format!("test/{}", file_name(&test_path)), &test_path);
        rows.push(Row {
            stem,
            reference: file_name(ref_path),
            test: file_name(&test_path),
            width: w,
            height: h,
            psnr_db: m.psnr_db,
            ssim: m.ssim,
            peak: m.peak,
            psnr_capped: m.psnr_capped,
        });
    }
    if rows.is_empty() {
        return Err(CliError::invalid(format!(
            "no test frame in {} has a reference in {}",
            test_dir.display(),
            ref_dir.display()
        )));
    }

    create_dir(out)?;
    let path = out.join("metrics.jsonl");
    print!("{}", write_json_lines(&path, &rows)?);
    let mut outputs = Artifacts::default();
    outputs.file("metrics.jsonl", &path);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}
