use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use sensor_noise::calibration::{calibrate_all, ppcc_at_pixel, CalibrationOptions, GainMode, PpccReport};
use sensor_noise::noisemodel::save_params;
use sensor_noise::rawio::{load_stack, FrameStack};

use super::{create_dir, parse_pixel, required, write_json, write_json_lines, Ctx, Outcome};
use crate::config::resolve;
use crate::error::{require_dir, CliError, CliResult};
use crate::manifest::Artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainModeArg {
    /// Flat-stack variance over mean.
    Approximate,
    /// Bias mean and variance removed first.
    #[default]
    BiasCorrected,
}

impl From<GainModeArg> for GainMode {
    fn from(g: GainModeArg) -> Self {
        match g {
            GainModeArg::Approximate => GainMode::Approximate,
            GainModeArg::BiasCorrected => GainMode::BiasCorrected,
        }
    }
}

#[derive(Args, Serialize)]
pub struct CalibrateArgs {
    /// Flat-field stack directory.
    #[arg(long)]
    flat: Option<PathBuf>,
    /// Bias stack directory.
    #[arg(long)]
    bias: Option<PathBuf>,
    /// Dark stack directory; repeat once per exposure time.
    #[arg(long)]
    dark: Vec<PathBuf>,
    /// Output directory for params.pxcal, summary.json and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Collapse every parameter plane to its spatial median.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    global: Option<bool>,
    #[arg(long, value_enum)]
    gain_mode: Option<GainModeArg>,
    /// Bias-stack pixel `x,y` to report a PPCC for; repeatable. Defaults to
    /// the center pixel.
    #[arg(long, value_parser = parse_pixel)]
    ppcc_pixel: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CalibrateConfig {
    flat: Option<PathBuf>,
    bias: Option<PathBuf>,
    dark: Vec<PathBuf>,
    out: Option<PathBuf>,
    global: bool,
    gain_mode: GainModeArg,
    ppcc_pixel: Vec<(usize, usize)>,
}

fn load(path: &PathBuf, what: &str) -> CliResult<FrameStack> {
    require_dir(path, what)?;
    Ok(load_stack(path)?)
}

pub fn calibrate(args: &CalibrateArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: CalibrateConfig = resolve("calibrate", CalibrateConfig::default(), ctx.file, args)?;
    let flat_dir = required(&cfg.flat, "flat")?;
    let bias_dir = required(&cfg.bias, "bias")?;
    let out = required(&cfg.out, "out")?;
    if cfg.dark.is_empty() {
        return Err(CliError::invalid("at least one --dark stack is required"));
    }
    let flat = load(flat_dir, "flat stack")?;
    let bias = load(bias_dir, "bias stack")?;
    let darks = cfg
        .dark
        .iter()
        .map(|d| load(d, "dark stack"))
        .collect::<CliResult<Vec<_>>>()?;

    let opts = CalibrationOptions {
        gain_mode: cfg.gain_mode.into(),
        per_pixel: !cfg.global,
    };
    let cal = calibrate_all(&flat, &bias, &darks, &opts)?;
    let (w, h) = bias.dims();
    let pixels = if cfg.ppcc_pixel.is_empty() {
        vec![(w / 2, h / 2)]
    } else {
        cfg.ppcc_pixel.clone()
    };
    let mut summary = cal.summary();
    summary.ppcc_samples = pixels
        .iter()
        .map(|&(x, y)| ppcc_at_pixel(&bias, x, y))
        .collect::<sensor_noise::Result<Vec<_>>>()?;

    create_dir(out)?;
    let params_path = out.join("params.pxcal");
    let summary_path = out.join("summary.json");
    save_params(&cal.params, &params_path)?;
    write_json(&summary_path, &summary)?;

    let mut inputs = Artifacts::default();
    inputs.dir("flat", flat_dir)?;
    inputs.dir("bias", bias_dir)?;
    for (i, d) in cfg.dark.iter().enumerate() {
        inputs.dir(&format!("dark{i}"), d)?;
    }
    let mut outputs = Artifacts::default();
    outputs.file("params.pxcal", &params_path);
    outputs.file("summary.json", &summary_path);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}

#[derive(Args, Serialize)]
pub struct PpccArgs {
    /// Stack directory.
    #[arg(long)]
    stack: Option<PathBuf>,
    /// Pixel `x,y`; repeatable. Defaults to the center pixel.
    #[arg(long, value_parser = parse_pixel)]
    pixel: Vec<(usize, usize)>,
    /// Output directory for ppcc.jsonl and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PpccConfig {
    stack: Option<PathBuf>,
    pixel: Vec<(usize, usize)>,
    out: Option<PathBuf>,
}

pub fn ppcc(args: &PpccArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: PpccConfig = resolve("ppcc", PpccConfig::default(), ctx.file, args)?;
    let dir = required(&cfg.stack, "stack")?;
    let out = required(&cfg.out, "out")?;
    let stack = load(dir, "stack")?;
    let (w, h) = stack.dims();
    let pixels = if cfg.pixel.is_empty() {
        vec![(w / 2, h / 2)]
    } else {
        cfg.pixel.clone()
    };
    let reports: Vec<PpccReport> = pixels
        .iter()
        .map(|&(x, y)| ppcc_at_pixel(&stack, x, y))
        .collect::<sensor_noise::Result<_>>()?;
    create_dir(out)?;
    let path = out.join("ppcc.jsonl");
    print!("{}", write_json_lines(&path, &reports)?);

    let mut inputs = Artifacts::default();
    inputs.dir("stack", dir)?;
    let mut outputs = Artifacts::default();
    outputs.file("ppcc.jsonl", &path);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}
