//! Flag / config-file / default resolution.
//!
//! A config file is a JSON object with optional top-level `seed` and
//! `threads` plus one section per subcommand, keyed by the subcommand name
//! (`"rf-train": {"steps": 5000}`). Section keys are the snake_case names of
//! the command's long flags. Flags override the file, which overrides the
//! built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const SECTIONS: [&str; 7] = [
    "calibrate",
    "synthesize",
    "ppcc",
    "rf-train",
    "rf-search",
    "rf-infer",
    "metrics",
];

pub fn load_file(path: &Path) -> CliResult<Map<String, Value>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::invalid(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    };
    for key in map.keys() {
        if key != "seed" && key != "threads" && !SECTIONS.contains(&key.as_str()) {
            return Err(CliError::invalid(format!("unknown config key `{key}`")));
        }
    }
    Ok(map)
}

/// Merges `defaults`, the file section for `command` and the flags that
/// were given, then deserializes the result.
pub fn resolve<C, F>(
    command: &str,
    defaults: C,
    file: Option<&Map<String, Value>>,
    flags: &F,
) -> CliResult<C>
where
    C: Serialize + DeserializeOwned,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(defaults)? else {
        unreachable!("configs serialize to objects")
    };
    if let Some(section) = file.and_then(|f| f.get(command)) {
        let Value::Object(section) = section else {
            return Err(CliError::invalid(format!(
                "config section `{command}` must be an object"
            )));
        };
        merged.extend(section.clone());
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::invalid(format!("{command} configuration: {e}")))
}
