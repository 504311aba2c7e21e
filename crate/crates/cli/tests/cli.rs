//! End-to-end behaviour of the `sensornoise` binary.

mod common;

use common::{pipeline, read_json, run, run_ok, s, write_scenes, write_stacks};
use sensor_noise::noisemodel::load_params;
use sensor_noise::rawio::{list_frames, load_frame, load_sidecar};
use sensor_noise::virtual_sensor::{VirtualSensor, VirtualSensorSpec};

fn small_sensor(seed: u64) -> VirtualSensor {
    VirtualSensor::new(VirtualSensorSpec {
        width: 32,
        height: 32,
        seed,
        ..Default::default()
    })
}

#[test]
fn help_exits_zero() {
    let out = run(["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["calibrate", "synthesize", "ppcc", "rf-train", "rf-search", "rf-infer", "metrics"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn missing_bias_dir_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(0), tmp.path(), 500.0, 4, 4, 4, &[1.0]);
    let missing = tmp.path().join("no-such-bias");
    let out = run([
        "calibrate",
        "--flat",
        &s(&stacks.flat),
        "--bias",
        &s(&missing),
        "--dark",
        &s(&stacks.darks[0]),
        "--out",
        &s(&tmp.path().join("cal")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&s(&missing)), "stderr: {err}");
    assert!(!tmp.path().join("cal").exists());
}

#[test]
fn corrupt_frame_is_an_io_or_validation_error_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(0), tmp.path(), 500.0, 4, 4, 4, &[1.0]);
    let bad = stacks.bias.join("frame_00001.pgm");
    std::fs::write(&bad, b"P5\n32 32\n65535\n\x00").unwrap();
    let mut args = vec!["calibrate".to_string()];
    args.extend(stacks.args());
    args.extend(["--out".into(), s(&tmp.path().join("cal"))]);
    let out = run(&args);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame_00001.pgm"));
}

#[test]
fn global_calibration_gives_constant_planes() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(1), tmp.path(), 500.0, 30, 30, 20, &[1.0, 4.0, 16.0]);
    let cal = tmp.path().join("cal");
    let mut args = vec!["calibrate".to_string(), "--global".into(), "--seed".into(), "5".into()];
    args.extend(stacks.args());
    args.extend(["--out".into(), s(&cal)]);
    run_ok(&args);
    let p = load_params(cal.join("params.pxcal")).unwrap();
    for (name, plane) in [
        ("gain", &p.gain_k),
        ("fpn", &p.fpn_f),
        ("dark", &p.dark_rate_a),
        ("read", &p.read_sigma),
    ] {
        let first = plane.as_slice()[0];
        assert!(plane.as_slice().iter().all(|v| *v == first), "{name} plane varies");
    }
    let manifest = read_json(&cal.join("manifest.json"));
    assert_eq!(manifest["command"], "calibrate");
    assert_eq!(manifest["config"]["global"], true);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["seed_source"], "flag");
    assert!(manifest["outputs"]["params.pxcal"].as_str().unwrap().len() == 64);
    let summary = read_json(&cal.join("summary.json"));
    for key in ["gain_median", "fpn_std", "read_sigma_median", "row_sigma", "dark_a_median", "time_law", "ppcc_samples"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn ppcc_prints_one_line_per_pixel() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(2), tmp.path(), 500.0, 4, 60, 4, &[1.0]);
    let out = run_ok([
        "ppcc",
        "--stack",
        &s(&stacks.bias),
        "--pixel",
        "1,2",
        "--pixel",
        "10,20",
        "--out",
        &s(&tmp.path().join("ppcc")),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["pixel_coords"], serde_json::json!([10, 20]));
    assert_eq!(lines[0]["n_samples"], 60);
    let bad = run([
        "ppcc",
        "--stack",
        &s(&stacks.bias),
        "--pixel",
        "99,0",
        "--out",
        &s(&tmp.path().join("ppcc2")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(3), tmp.path(), 500.0, 20, 20, 10, &[1.0, 4.0]);
    let cal = tmp.path().join("cal");
    let mut args = vec!["calibrate".to_string()];
    args.extend(stacks.args());
    args.extend(["--out".into(), s(&cal)]);
    run_ok(&args);
    let scenes = tmp.path().join("scenes");
    write_scenes(&scenes, 2, 32, 32);
    let config = tmp.path().join("run.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "seed": 42,
            "synthesize": {"ratio": 50.0, "exposure": 2.0, "copies": 2}
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = tmp.path().join("pairs");
    run_ok([
        "synthesize",
        "--config",
        &s(&config),
        "--params",
        &s(&cal.join("params.pxcal")),
        "--clean",
        &s(&scenes),
        "--out",
        &s(&out_dir),
        "--ratio",
        "200",
    ]);
    let m = read_json(&out_dir.join("manifest.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["seed_source"], "config");
    assert_eq!(m["config"]["ratio"], 200.0);
    assert_eq!(m["config"]["exposure"], 2.0);
    let frames = list_frames(&out_dir).unwrap();
    assert_eq!(frames.len(), 8, "2 scenes × 2 copies × (noisy, clean)");
    let side = load_sidecar(out_dir.join("scene_0_001_noisy.pgm")).unwrap();
    assert_eq!(side["ratio"], 200.0);
    assert_eq!(side["exposure_s"], 2.0);

    std::fs::write(&config, r#"{"synthesise": {}}"#).unwrap();
    let bad = run(["synthesize", "--config", &s(&config)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn unseeded_runs_record_a_drawn_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(4), tmp.path(), 500.0, 10, 10, 10, &[1.0, 4.0]);
    let cal = tmp.path().join("cal");
    let mut args = vec!["calibrate".to_string()];
    args.extend(stacks.args());
    args.extend(["--out".into(), s(&cal)]);
    run_ok(&args);
    let m = read_json(&cal.join("manifest.json"));
    assert_eq!(m["seed_source"], "drawn");
    assert!(m["seed"].is_u64());
}

#[test]
fn search_reports_nine_candidates_and_pipeline_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let sensor = VirtualSensor::new(VirtualSensorSpec {
        width: 64,
        height: 64,
        seed: 9,
        ..Default::default()
    });
    let stacks = write_stacks(&sensor, &tmp.path().join("stacks"), 500.0, 40, 40, 20, &[1.0, 4.0, 16.0]);
    let scenes = tmp.path().join("scenes");
    write_scenes(&scenes, 3, 64, 64);
    let piped = pipeline(&stacks, &scenes, &tmp.path().join("run"), 17, 2, 200);

    let search = read_json(&piped.root.join("search").join("search.json"));
    let trace = search["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 9);
    for (k, entry) in trace.iter().enumerate() {
        let t = entry[0].as_f64().unwrap();
        assert!((t - 0.1 * (k + 1) as f64).abs() < 1e-12);
    }
    let t_best = search["t_best"].as_f64().unwrap();
    let best = trace.iter().map(|e| e[1].as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let at_best = trace.iter().find(|e| e[0].as_f64() == Some(t_best)).unwrap()[1].as_f64().unwrap();
    assert_eq!(at_best, best);

    let restored = list_frames(piped.root.join("restored")).unwrap();
    assert_eq!(restored.len(), 3);
    let r = load_frame(&restored[0]).unwrap();
    assert_eq!((r.width, r.height), (64, 64));
    let side = load_sidecar(&restored[0]).unwrap();
    assert_eq!(side["oracle_assisted"], false);
    assert_eq!(side["t_best"].as_f64(), Some(t_best));

    let text = std::fs::read_to_string(piped.root.join("metrics").join("metrics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let psnr = row["psnr_db"].as_f64().unwrap();
        let ssim = row["ssim"].as_f64().unwrap();
        assert!(psnr.is_finite() && psnr > 0.0);
        assert!((-1.0..=1.0).contains(&ssim));
        assert_eq!(row["peak"], 16383.0 - 512.0);
    }
    for (stage, m) in &piped.manifests {
        assert_eq!(m["seed"], 17, "{stage}");
        assert!(!m["outputs"].as_object().unwrap().is_empty(), "{stage} has no outputs");
    }
}

#[test]
fn oracle_inference_is_flagged_and_needs_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let stacks = write_stacks(&small_sensor(5), &tmp.path().join("stacks"), 500.0, 20, 20, 10, &[1.0, 4.0]);
    let scenes = tmp.path().join("scenes");
    write_scenes(&scenes, 1, 32, 32);
    let piped = pipeline(&stacks, &scenes, &tmp.path().join("run"), 3, 1, 20);
    let model = piped.root.join("model").join("flow.rfw");
    let val = piped.root.join("val");
    let out = tmp.path().join("oracle");
    run_ok([
        "rf-infer",
        "--seed",
        "3",
        "--model",
        &s(&model),
        "--input",
        &s(&val),
        "--oracle-search",
        "--out",
        &s(&out),
    ]);
    let side = load_sidecar(out.join("scene_0_restored.pgm")).unwrap();
    assert_eq!(side["oracle_assisted"], true);
    assert_eq!(side["t_best"].as_array().unwrap().len(), 16, "one time per 8×8 patch");

    let lonely = tmp.path().join("lonely");
    std::fs::create_dir_all(&lonely).unwrap();
    std::fs::copy(val.join("scene_0_noisy.pgm"), lonely.join("scene_0_noisy.pgm")).unwrap();
    std::fs::copy(val.join("scene_0_noisy.pgm.json"), lonely.join("scene_0_noisy.pgm.json")).unwrap();
    let bad = run([
        "rf-infer",
        "--model",
        &s(&model),
        "--input",
        &s(&lonely),
        "--oracle-search",
        "--out",
        &s(&tmp.path().join("oracle2")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let no_t = run([
        "rf-infer",
        "--model",
        &s(&model),
        "--input",
        &s(&lonely),
        "--out",
        &s(&tmp.path().join("oracle3")),
    ]);
    assert_eq!(no_t.status.code(), Some(2));
}
