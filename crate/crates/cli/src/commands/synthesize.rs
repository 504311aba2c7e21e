use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sensor_noise::noisemodel::{load_params, NoiseModelConfig};
use sensor_noise::rawio::{list_frames, load_frame, save_frame, save_frame_with_extra};
use sensor_noise::rng::{NoiseStream, Term};
use sensor_noise::synthesis::{synthesize_pair, SynthesisConfig};

use super::{create_dir, parse_range, required, Ctx, Outcome};
use crate::config::resolve;
use crate::error::{require_dir, require_file, CliError, CliResult};
use crate::manifest::Artifacts;
use crate::pairs::{base_stem, CLEAN, NOISY};

/// Noise terms that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTerm {
    Shot,
    Read,
    Row,
    Quant,
    Fpn,
    Dark,
}

#[derive(Args, Serialize)]
pub struct SynthesizeArgs {
    /// Calibrated parameter file (PXCAL1).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Directory of clean frames.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Output directory for the pairs and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed darkening ratio (≥ 1).
    #[arg(long)]
    ratio: Option<f64>,
    /// Draw the ratio uniformly from `lo,hi` instead.
    #[arg(long, value_parser = parse_range)]
    ratio_range: Option<(f64, f64)>,
    /// Exposure time in seconds (drives dark current).
    #[arg(long)]
    exposure: Option<f64>,
    /// Draw the exposure uniformly from `lo,hi` instead.
    #[arg(long, value_parser = parse_range)]
    exposure_range: Option<(f64, f64)>,
    /// Noisy versions generated per clean frame.
    #[arg(long)]
    copies: Option<usize>,
    /// Noise term to leave out; repeatable.
    #[arg(long, value_enum)]
    disable: Vec<NoiseTerm>,
    /// Use spatial medians of every parameter plane.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    global: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthesizeConfig {
    params: Option<PathBuf>,
    clean: Option<PathBuf>,
    out: Option<PathBuf>,
    ratio: f64,
    ratio_range: Option<(f64, f64)>,
    exposure: f64,
    exposure_range: Option<(f64, f64)>,
    copies: usize,
    disable: Vec<NoiseTerm>,
    global: bool,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        SynthesizeConfig {
            params: None,
            clean: None,
            out: None,
            ratio: 100.0,
            ratio_range: None,
            exposure: 1.0,
            exposure_range: None,
            copies: 1,
            disable: Vec::new(),
            global: false,
        }
    }
}

fn noise_config(disable: &[NoiseTerm], global: bool) -> NoiseModelConfig {
    let mut cfg = NoiseModelConfig::all();
    for t in disable {
        match t {
            NoiseTerm::Shot => cfg.enable_shot = false,
            NoiseTerm::Read => cfg.enable_read = false,
            NoiseTerm::Row => cfg.enable_row = false,
            NoiseTerm::Quant => cfg.enable_quant = false,
            NoiseTerm::Fpn => cfg.enable_fpn = false,
            NoiseTerm::Dark => cfg.enable_dark = false,
        }
    }
    cfg.per_pixel = !global;
    cfg
}

/// Seed of the `index`-th pair under the run seed.
fn pair_seed(seed: u64, index: u64) -> u64 {
    NoiseStream::with_frame(seed, index)
        .rng(Term::Synthesis, 2)
        .next_u64()
}

pub fn synthesize(args: &SynthesizeArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: SynthesizeConfig = resolve("synthesize", SynthesizeConfig::default(), ctx.file, args)?;
    let params_path = required(&cfg.params, "params")?;
    let clean_dir = required(&cfg.clean, "clean")?;
    let out = required(&cfg.out, "out")?;
    require_file(params_path, "parameter")?;
    require_dir(clean_dir, "clean frame")?;
    if cfg.copies == 0 {
        return Err(CliError::invalid("--copies must be at least 1"));
    }
    let params = load_params(params_path)?;
    let noise = noise_config(&cfg.disable, cfg.global);
    let frames = list_frames(clean_dir)?;
    if frames.is_empty() {
        return Err(CliError::invalid(format!("no .pgm frames in {}", clean_dir.display())));
    }

    create_dir(out)?;
    for (i, path) in frames.iter().enumerate() {
        let clean = load_frame(path)?;
        let stem = base_stem(path);
        for c in 0..cfg.copies {
            let index = (i * cfg.copies + c) as u64;
            let seed = pair_seed(ctx.seed, index);
            let sc = SynthesisConfig {
                ratio: cfg.ratio,
                ratio_range: cfg.ratio_range,
                exposure_s: cfg.exposure,
                exposure_range: cfg.exposure_range,
                seed,
                noise,
                compensate: true,
            };
            let pair = synthesize_pair(&clean, &params, &sc)?;
            let name = if cfg.copies == 1 {
                stem.clone()
            } else {
                format!("{stem}_{c:03}")
            };
            let noisy_path = out.join(format!("{name}{NOISY}.pgm"));
            let clean_path = out.join(format!("{name}{CLEAN}.pgm"));
            let extra = json!({
                "ratio": pair.ratio,
                "exposure_s": pair.exposure_s,
                "seed": seed,
                "source": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            });
            save_frame_with_extra(&pair.noisy, &noisy_path, extra.as_object())?;
            save_frame(&pair.clean, &clean_path)?;
        }
    }

    let mut inputs = Artifacts::default();
    inputs.file("params", params_path);
    inputs.dir("clean", clean_dir)?;
    let mut outputs = Artifacts::default();
    outputs.dir("pairs", out)?;
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}
