pub mod calibrate;
pub mod flow;
pub mod metrics;
pub mod synthesize;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};
use crate::manifest::Artifacts;

pub struct Ctx<'a> {
    pub seed: u64,
    pub file: Option<&'a Map<String, Value>>,
}

/// What a command hands back for its manifest.
pub struct Outcome {
    pub config: Value,
    pub inputs: Artifacts,
    pub outputs: Artifacts,
    pub manifest_path: PathBuf,
}

/// A required setting that may come from a flag or the config file.
pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::invalid(format!("missing required --{flag}")))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<String> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    Ok(text)
}

/// Parses `x,y`.
pub fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got `{s}`"))?;
    let x = x.trim().parse().map_err(|e| format!("bad x in `{s}`: {e}"))?;
    let y = y.trim().parse().map_err(|e| format!("bad y in `{s}`: {e}"))?;
    Ok((x, y))
}

/// Parses `lo,hi`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got `{s}`"))?;
    let lo = lo.trim().parse().map_err(|e| format!("bad lower bound in `{s}`: {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("bad upper bound in `{s}`: {e}"))?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_and_range_parsing() {
        assert_eq!(parse_pixel("3, 4"), Ok((3, 4)));
        assert!(parse_pixel("3").is_err());
        assert_eq!(parse_range("100,300"), Ok((100.0, 300.0)));
        assert!(parse_range("a,b").is_err());
    }
}
