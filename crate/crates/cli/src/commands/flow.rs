use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sensor_noise::grid::Grid;
use sensor_noise::rawio::{load_frame, save_frame_with_extra};
use sensor_noise::rectflow::{
    infer as flow_infer, infer_oracle_search, load_model, prior_sample, sample_search, save_model,
    train as flow_train, Activation, AdamConfig, Architecture, VelocityField,
};
use sensor_noise::synthesis::normalize;

use super::{create_dir, required, write_json, Ctx, Outcome};
use crate::config::resolve;
use crate::error::{require_dir, require_file, CliError, CliResult};
use crate::manifest::Artifacts;
use crate::pairs::{
    all_patches, base_stem, condition_grid, denormalize, load_pairs, noisy_frames, sidecar_ratio, CLEAN,
    RESTORED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Silu,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Silu => Activation::Silu,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Directory of `<stem>_noisy.pgm` / `<stem>_clean.pgm` pairs.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Model file to write (RFW1).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Side of the square training patch.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Width of both hidden layers.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    /// Scale the noisy condition back up by the exposure ratio.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    compensate: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    pairs: Option<PathBuf>,
    out: Option<PathBuf>,
    patch: usize,
    steps: usize,
    lr: f64,
    batch: usize,
    hidden: usize,
    activation: ActivationArg,
    compensate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            pairs: None,
            out: None,
            patch: 8,
            steps: 5000,
            lr: adam.lr,
            batch: adam.batch,
            hidden: 128,
            activation: ActivationArg::Silu,
            compensate: true,
        }
    }
}

/// `<path>.<suffix>`, keeping the full original file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn train(args: &TrainArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: TrainConfig = resolve("rf-train", TrainConfig::default(), ctx.file, args)?;
    let dir = required(&cfg.pairs, "pairs")?;
    let out = required(&cfg.out, "out")?;
    require_dir(dir, "pairs")?;
    if cfg.patch == 0 {
        return Err(CliError::invalid("--patch must be positive"));
    }
    let pairs = load_pairs(dir)?;
    let dataset = all_patches(&pairs, cfg.patch, cfg.compensate)?;

    let arch = Architecture {
        hidden1: cfg.hidden,
        hidden2: cfg.hidden,
        activation: cfg.activation.into(),
        ..Architecture::for_patch(cfg.patch)
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        steps: cfg.steps,
        ..AdamConfig::default()
    };
    let field = VelocityField::init(arch, ctx.seed)?;
    let outcome = flow_train(field, &dataset, &adam, ctx.seed)?;

    ensure_parent(out)?;
    save_model(&outcome.field, out)?;
    let log_path = sibling(out, ".train.json");
    let curve = &outcome.loss_curve;
    let window = curve.len().min(100);
    let tail_mean = if window == 0 {
        None
    } else {
        Some(curve[curve.len() - window..].iter().sum::<f64>() / window as f64)
    };
    write_json(
        &log_path,
        &json!({
            "patches": dataset.len(),
            "pairs": pairs.len(),
            "steps": cfg.steps,
            "initial_loss": curve.first(),
            "final_loss_mean_last_100": tail_mean,
            "loss_curve": curve,
        }),
    )?;

    let mut inputs = Artifacts::default();
    inputs.dir("pairs", dir)?;
    let mut outputs = Artifacts::default();
    outputs.file("model", out);
    outputs.file("train_log", &log_path);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: sibling(out, ".manifest.json"),
    })
}

#[derive(Args, Serialize)]
pub struct SearchArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of validation pairs.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Step between candidate sampling times.
    #[arg(long)]
    s: Option<f64>,
    /// Number of candidates `s, 2s, …, ns`.
    #[arg(long)]
    n: Option<usize>,
    /// Output directory for search.json and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale the noisy condition back up by the exposure ratio.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    compensate: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchConfig {
    model: Option<PathBuf>,
    val: Option<PathBuf>,
    s: f64,
    n: usize,
    out: Option<PathBuf>,
    compensate: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            model: None,
            val: None,
            s: 0.1,
            n: 9,
            out: None,
            compensate: true,
        }
    }
}

fn model_patch(field: &VelocityField) -> CliResult<usize> {
    field
        .arch
        .patch
        .ok_or_else(|| CliError::invalid("model was not built for square patches"))
}

pub fn search(args: &SearchArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: SearchConfig = resolve("rf-search", SearchConfig::default(), ctx.file, args)?;
    let model_path = required(&cfg.model, "model")?;
    let dir = required(&cfg.val, "val")?;
    let out = required(&cfg.out, "out")?;
    require_file(model_path, "model")?;
    require_dir(dir, "validation pairs")?;
    let field = load_model(model_path)?;
    let patch = model_patch(&field)?;
    let validation = all_patches(&load_pairs(dir)?, patch, cfg.compensate)?;
    let result = sample_search(&field, &validation, cfg.s, cfg.n, ctx.seed)?;

    create_dir(out)?;
    let path = out.join("search.json");
    write_json(&path, &result)?;
    println!("{}", serde_json::to_string(&result)?);

    let mut inputs = Artifacts::default();
    inputs.file("model", model_path);
    inputs.dir("val", dir)?;
    let mut outputs = Artifacts::default();
    outputs.file("search.json", &path);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}

#[derive(Args, Serialize)]
pub struct InferArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of noisy frames.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Second sampling time, as chosen by rf-search.
    #[arg(long)]
    t_best: Option<f64>,
    /// Output directory for `<stem>_restored.pgm` and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exposure ratio for frames whose sidecar does not record one.
    #[arg(long)]
    ratio: Option<f64>,
    /// Re-search the sampling time per patch against the clean partner.
    /// Reads the ground truth: for reproduction studies only.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    oracle_search: Option<bool>,
    /// Directory holding `<stem>_clean.pgm` targets for --oracle-search
    /// (defaults to --input).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Candidate step for --oracle-search.
    #[arg(long)]
    s: Option<f64>,
    /// Candidate count for --oracle-search.
    #[arg(long)]
    n: Option<usize>,
    /// Scale the noisy condition back up by the exposure ratio.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    compensate: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferConfig {
    model: Option<PathBuf>,
    input: Option<PathBuf>,
    t_best: Option<f64>,
    out: Option<PathBuf>,
    ratio: Option<f64>,
    oracle_search: bool,
    target: Option<PathBuf>,
    s: f64,
    n: usize,
    compensate: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            model: None,
            input: None,
            t_best: None,
            out: None,
            ratio: None,
            oracle_search: false,
            target: None,
            s: 0.1,
            n: 9,
            compensate: true,
        }
    }
}

/// Prior key of patch `patch` of frame `frame`.
fn prior_item(frame: usize, patch: usize) -> u64 {
    ((frame as u64) << 32) | patch as u64
}

pub fn infer(args: &InferArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let cfg: InferConfig = resolve("rf-infer", InferConfig::default(), ctx.file, args)?;
    let model_path = required(&cfg.model, "model")?;
    let dir = required(&cfg.input, "input")?;
    let out = required(&cfg.out, "out")?;
    require_file(model_path, "model")?;
    require_dir(dir, "input")?;
    let t_best = if cfg.oracle_search {
        None
    } else {
        let t = *required(&cfg.t_best, "t-best")?;
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::invalid(format!("--t-best must lie in (0, 1), got {t}")));
        }
        Some(t)
    };
    let target_dir = cfg.target.as_ref().unwrap_or(dir);
    if cfg.oracle_search {
        require_dir(target_dir, "target")?;
    }
    let field = load_model(model_path)?;
    let patch = model_patch(&field)?;
    let frames = noisy_frames(dir)?;
    if frames.is_empty() {
        return Err(CliError::invalid(format!("no noisy frames in {}", dir.display())));
    }

    create_dir(out)?;
    let mut inputs = Artifacts::default();
    inputs.file("model", model_path);
    let mut outputs = Artifacts::default();
    for (fi, path) in frames.iter().enumerate() {
        let noisy = load_frame(path)?;
        let ratio = match (sidecar_ratio(path)?, cfg.ratio) {
            (Some(r), _) | (None, Some(r)) => r,
            (None, None) => {
                return Err(CliError::invalid(format!(
                    "{}: no ratio in sidecar and no --ratio given",
                    path.display()
                )))
            }
        };
        let stem = base_stem(path);
        let name = path.file_name().expect("frame file").to_string_lossy().into_owned();
        inputs.file(&format!("input/{name}"), path);
        let cond = condition_grid(&noisy, ratio, cfg.compensate, patch)?;
        let (w, h) = cond.dims();
        let cond_tiles = cond.tiles(patch)?;
        let priors: Vec<Vec<f64>> = (0..cond_tiles.len())
            .map(|pi| prior_sample(field.arch.dim, ctx.seed, prior_item(fi, pi)))
            .collect();

        let (tiles, times): (Vec<Vec<f64>>, Vec<f64>) = match t_best {
            Some(t) => {
                let tiles = cond_tiles
                    .par_iter()
                    .zip(&priors)
                    .map(|(c, x0)| flow_infer(&field, x0, c, t))
                    .collect::<sensor_noise::Result<Vec<_>>>()?;
                (tiles, vec![t])
            }
            None => {
                let clean_path = target_dir.join(format!("{stem}{CLEAN}.pgm"));
                require_file(&clean_path, "oracle target")?;
                let clean = load_frame(&clean_path)?;
                let target = normalize(&clean).center_crop_to(w, h)?;
                let name = clean_path.file_name().expect("frame file").to_string_lossy().into_owned();
                inputs.file(&format!("target/{name}"), &clean_path);
                let results = cond_tiles
                    .par_iter()
                    .zip(&priors)
                    .zip(target.tiles(patch)?)
                    .map(|((c, x0), x1)| infer_oracle_search(&field, x0, c, &x1, cfg.s, cfg.n))
                    .collect::<sensor_noise::Result<Vec<_>>>()?;
                results.into_iter().unzip()
            }
        };
        let restored = denormalize(&Grid::from_tiles(w, h, patch, &tiles)?, &noisy)?;
        let out_path = out.join(format!("{stem}{RESTORED}.pgm"));
        let extra = json!({
            "t_best": if cfg.oracle_search { json!(times) } else { json!(times[0]) },
            "oracle_assisted": cfg.oracle_search,
            "seed": ctx.seed,
            "ratio": ratio,
        });
        save_frame_with_extra(&restored, &out_path, extra.as_object())?;
    }
    outputs.dir("restored", out)?;
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs,
        outputs,
        manifest_path: out.join("manifest.json"),
    })
}
