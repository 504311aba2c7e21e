//! Shared fixtures: virtual-sensor stacks, clean scenes and a thin wrapper
//! around the `sensornoise` binary.

#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sensor_noise::grid::Grid;
use sensor_noise::rawio::{save_frame, save_stack, Cfa, RawFrame, SensorMeta};
use sensor_noise::virtual_sensor::VirtualSensor;

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_sensornoise"))
        .args(args)
        .output()
        .expect("spawn sensornoise")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn run_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = run(args);
    assert!(
        out.status.success(),
        "sensornoise failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub struct StackDirs {
    pub flat: PathBuf,
    pub bias: PathBuf,
    pub darks: Vec<PathBuf>,
}

impl StackDirs {
    /// `calibrate` flags for these stacks.
    pub fn args(&self) -> Vec<String> {
        let mut a = vec![
            "--flat".to_string(),
            self.flat.display().to_string(),
            "--bias".to_string(),
            self.bias.display().to_string(),
        ];
        for d in &self.darks {
            a.push("--dark".into());
            a.push(d.display().to_string());
        }
        a
    }
}

/// Writes flat (`signal_e` electrons), bias and one dark stack per exposure.
pub fn write_stacks(
    sensor: &VirtualSensor,
    root: &Path,
    signal_e: f64,
    flats: usize,
    biases: usize,
    darks: usize,
    exposures: &[f64],
) -> StackDirs {
    let flat = root.join("flat");
    let bias = root.join("bias");
    save_stack(&sensor.flat_stack(signal_e, 0.01, flats).unwrap(), &flat).unwrap();
    save_stack(&sensor.bias_stack(biases).unwrap(), &bias).unwrap();
    let darks = exposures
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let dir = root.join(format!("dark_{t}s"));
            save_stack(&sensor.dark_stack(t, darks, i as u64).unwrap(), &dir).unwrap();
            dir
        })
        .collect();
    StackDirs { flat, bias, darks }
}

pub fn scene_meta() -> SensorMeta {
    SensorMeta {
        iso: 1600,
        exposure_s: 0.1,
        black_level: 512,
        white_level: 16383,
        cfa: Cfa::Mono,
        camera_id: "scene".into(),
    }
}

/// Smooth well-exposed scene `k`, in `[0.1, 0.9]` of the range.
pub fn scene(width: usize, height: usize, k: usize) -> RawFrame {
    let meta = scene_meta();
    let (fx, fy, phase) = (0.11 + 0.03 * k as f64, 0.07 + 0.02 * k as f64, 0.9 * k as f64);
    let g = Grid::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.25 * (fx * x + phase).sin() + 0.15 * (fy * y - 0.5 * phase).cos()
    });
    let range = meta.range();
    let data = g
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.1, 0.9) * range + f64::from(meta.black_level)).round() as u16)
        .collect();
    RawFrame::new(width, height, data, meta).unwrap()
}

/// Writes `count` scenes as `scene_<k>.pgm` into `dir`.
pub fn write_scenes(dir: &Path, count: usize, width: usize, height: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..count {
        save_frame(&scene(width, height, k), dir.join(format!("scene_{k}.pgm"))).unwrap();
    }
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Manifest of each stage of a full pipeline run, in stage order.
pub struct PipelineRun {
    pub manifests: Vec<(String, serde_json::Value)>,
    pub root: PathBuf,
}

impl PipelineRun {
    /// `(stage, inputs, outputs)` digest maps; configs are left out
    /// because their paths name the run directory.
    pub fn digests(&self) -> Vec<(String, serde_json::Value, serde_json::Value)> {
        self.manifests
            .iter()
            .map(|(stage, m)| (stage.clone(), m["inputs"].clone(), m["outputs"].clone()))
            .collect()
    }
}

/// calibrate → synthesize → rf-train → rf-search → rf-infer → metrics on a
/// small virtual sensor, all under one seed.
pub fn pipeline(stacks: &StackDirs, scenes: &Path, root: &Path, seed: u64, threads: usize, steps: usize) -> PipelineRun {
    let common = |extra: Vec<String>| -> Vec<String> {
        let mut a = extra;
        a.extend(["--seed".into(), seed.to_string(), "--threads".into(), threads.to_string()]);
        a
    };
    let cal = root.join("cal");
    let pairs = root.join("pairs");
    let val = root.join("val");
    let model = root.join("model").join("flow.rfw");
    let search = root.join("search");
    let restored = root.join("restored");
    let metrics = root.join("metrics");

    let mut a = vec!["calibrate".to_string()];
    a.extend(stacks.args());
    a.extend(["--out".into(), s(&cal)]);
    run_ok(common(a));
    let params = cal.join("params.pxcal");
    for (dir, ratio) in [(&pairs, "100"), (&val, "150")] {
        run_ok(common(vec![
            "synthesize".into(),
            "--params".into(),
            s(&params),
            "--clean".into(),
            s(scenes),
            "--out".into(),
            s(dir),
            "--ratio".into(),
            ratio.into(),
        ]));
    }
    run_ok(common(vec![
        "rf-train".into(),
        "--pairs".into(),
        s(&pairs),
        "--out".into(),
        s(&model),
        "--steps".into(),
        steps.to_string(),
        "--hidden".into(),
        "32".into(),
        "--lr".into(),
        "1e-3".into(),
    ]));
    let out = run_ok(common(vec![
        "rf-search".into(),
        "--model".into(),
        s(&model),
        "--val".into(),
        s(&val),
        "--out".into(),
        s(&search),
    ]));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let t_best = result["t_best"].as_f64().unwrap();
    run_ok(common(vec![
        "rf-infer".into(),
        "--model".into(),
        s(&model),
        "--input".into(),
        s(&val),
        "--t-best".into(),
        t_best.to_string(),
        "--out".into(),
        s(&restored),
    ]));
    run_ok(common(vec![
        "metrics".into(),
        "--ref".into(),
        s(&val),
        "--test".into(),
        s(&restored),
        "--out".into(),
        s(&metrics),
    ]));

    let manifests = [
        ("calibrate", cal.join("manifest.json")),
        ("synthesize", pairs.join("manifest.json")),
        ("synthesize-val", val.join("manifest.json")),
        ("rf-train", root.join("model").join("flow.rfw.manifest.json")),
        ("rf-search", search.join("manifest.json")),
        ("rf-infer", restored.join("manifest.json")),
        ("metrics", metrics.join("manifest.json")),
    ]
    .into_iter()
    .map(|(stage, p)| (stage.to_string(), read_json(&p)))
    .collect();
    PipelineRun {
        manifests,
        root: root.to_path_buf(),
    }
}
