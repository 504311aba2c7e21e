//! Paired-frame directories: `<stem>_noisy.pgm` / `<stem>_clean.pgm`, with
//! the exposure ratio recorded in the noisy frame's sidecar.

use std::path::{Path, PathBuf};

use sensor_noise::grid::Grid;
use sensor_noise::rawio::{list_frames, load_frame, load_sidecar, RawFrame};
use sensor_noise::synthesis::{condition_from_noisy, normalize};

use crate::error::{CliError, CliResult};

pub const NOISY: &str = "_noisy";
pub const CLEAN: &str = "_clean";
pub const RESTORED: &str = "_restored";

/// File stem with any role suffix removed.
pub fn base_stem(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [NOISY, CLEAN, RESTORED] {
        if let Some(base) = stem.strip_suffix(suffix) {
            return base.to_string();
        }
    }
    stem
}

fn has_role(path: &Path, suffix: &str) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with(suffix))
}

/// The noisy frames of a directory: every `*_noisy.pgm` if any exist,
/// otherwise every frame that is not a clean or restored one.
pub fn noisy_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let all = list_frames(dir)?;
    let noisy: Vec<PathBuf> = all.iter().filter(|p| has_role(p, NOISY)).cloned().collect();
    if !noisy.is_empty() {
        return Ok(noisy);
    }
    Ok(all
        .into_iter()
        .filter(|p| !has_role(p, CLEAN) && !has_role(p, RESTORED))
        .collect())
}

/// Exposure ratio stored in a frame's sidecar, if any.
pub fn sidecar_ratio(path: &Path) -> CliResult<Option<f64>> {
    Ok(load_sidecar(path)?.get("ratio").and_then(|v| v.as_f64()))
}

pub struct Pair {
    pub stem: String,
    pub noisy: RawFrame,
    pub clean: RawFrame,
    pub ratio: f64,
}

pub fn load_pairs(dir: &Path) -> CliResult<Vec<Pair>> {
    let mut pairs = Vec::new();
    for noisy_path in list_frames(dir)?.into_iter().filter(|p| has_role(p, NOISY)) {
        let stem = base_stem(&noisy_path);
        let clean_path = dir.join(format!("{stem}{CLEAN}.pgm"));
        if !clean_path.is_file() {
            return Err(CliError::invalid(format!(
                "no clean partner {} for {}",
                clean_path.display(),
                noisy_path.display()
            )));
        }
        let ratio = sidecar_ratio(&noisy_path)?.ok_or_else(|| {
            CliError::invalid(format!("{}: sidecar has no `ratio`", noisy_path.display()))
        })?;
        pairs.push(Pair {
            stem,
            noisy: load_frame(&noisy_path)?,
            clean: load_frame(&clean_path)?,
            ratio,
        });
    }
    if pairs.is_empty() {
        return Err(CliError::invalid(format!("no *{NOISY}.pgm pairs in {}", dir.display())));
    }
    Ok(pairs)
}

/// Largest multiple-of-`patch` dimensions that fit the frame.
pub fn tiled_dims(width: usize, height: usize, patch: usize) -> CliResult<(usize, usize)> {
    let dims = (width / patch * patch, height / patch * patch);
    if dims.0 == 0 || dims.1 == 0 {
        return Err(CliError::invalid(format!(
            "frame {width}x{height} is smaller than patch {patch}"
        )));
    }
    Ok(dims)
}

/// Center-cropped flow condition of a noisy frame.
pub fn condition_grid(noisy: &RawFrame, ratio: f64, compensate: bool, patch: usize) -> CliResult<Grid> {
    let (w, h) = tiled_dims(noisy.width, noisy.height, patch)?;
    Ok(condition_from_noisy(noisy, ratio, compensate).center_crop_to(w, h)?)
}

/// `(x1, T)` training/validation patches of one pair.
pub fn pair_patches(pair: &Pair, patch: usize, compensate: bool) -> CliResult<Vec<(Vec<f64>, Vec<f64>)>> {
    if (pair.noisy.width, pair.noisy.height) != (pair.clean.width, pair.clean.height) {
        return Err(CliError::invalid(format!("{}: noisy and clean sizes differ", pair.stem)));
    }
    let cond = condition_grid(&pair.noisy, pair.ratio, compensate, patch)?;
    let target = normalize(&pair.clean).center_crop_to(cond.width(), cond.height())?;
    Ok(target.tiles(patch)?.into_iter().zip(cond.tiles(patch)?).collect())
}

pub fn all_patches(pairs: &[Pair], patch: usize, compensate: bool) -> CliResult<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::new();
    for p in pairs {
        out.extend(pair_patches(p, patch, compensate)?);
    }
    Ok(out)
}

/// Normalized values back to DN on the frame's pedestal.
pub fn denormalize(grid: &Grid, like: &RawFrame) -> CliResult<RawFrame> {
    let black = f64::from(like.meta.black_level);
    let range = like.meta.range();
    let data = grid
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * range + black).round() as u16)
        .collect();
    Ok(RawFrame::new(grid.width(), grid.height(), data, like.meta.clone())?)
}
