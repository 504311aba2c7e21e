//! Simulated sensor with known per-pixel ground truth.
//!
//! Frames are produced by [`compose`] plus a frozen additive per-pixel bias
//! pattern equal to the fixed-pattern factor `f` (the offset a bias frame
//! exposes), placed on a black-level pedestal and rounded to DN. Used as the
//! oracle for calibration round trips and as a fixture generator.

use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grid::Grid;
use crate::noisemodel::{compose, uniform_in, NoiseModelConfig, PixelParamMap, TimeLaw};
use crate::rawio::{Cfa, FrameStack, RawFrame, SensorMeta, StackKind};
use crate::rng::{NoiseStream, Term};

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSensorSpec {
    pub width: usize,
    pub height: usize,
    pub gain_range: (f64, f64),
    pub fpn_std: f64,
    pub read_sigma_range: (f64, f64),
    pub row_sigma: f64,
    pub dark_rate_range: (f64, f64),
    pub time_law: TimeLaw,
    pub black_level: u16,
    pub white_level: u16,
    pub iso: i64,
    pub seed: u64,
}

impl Default for VirtualSensorSpec {
    fn default() -> Self {
        VirtualSensorSpec {
            width: 64,
            height: 64,
            gain_range: (0.8, 1.2),
            fpn_std: 0.1,
            read_sigma_range: (1.0, 5.0),
            row_sigma: 2.0,
            dark_rate_range: (0.0, 3.0),
            time_law: TimeLaw::Sqrt,
            black_level: 512,
            white_level: 16383,
            iso: 1600,
            seed: 0,
        }
    }
}

/// Exposure used for bias frames, seconds.
pub const BIAS_EXPOSURE_S: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSensor {
    pub spec: VirtualSensorSpec,
    pub truth: PixelParamMap,
    /// Noise terms used when rendering frames.
    pub noise: NoiseModelConfig,
}

impl VirtualSensor {
    pub fn new(spec: VirtualSensorSpec) -> Self {
        let stream = NoiseStream::new(spec.seed);
        let (w, h) = (spec.width, spec.height);
        let plane = |plane_id: u64, f: &dyn Fn(&mut crate::rng::KeyedRng) -> f64| {
            let mut data = Vec::with_capacity(w * h);
            for p in 0..w * h {
                let mut rng = NoiseStream::with_frame(stream.seed, plane_id).rng(Term::SensorTruth, p as u64);
                data.push(f(&mut rng));
            }
            Grid::from_vec(w, h, data).expect("dims")
        };
        let (g0, g1) = spec.gain_range;
        let (r0, r1) = spec.read_sigma_range;
        let (a0, a1) = spec.dark_rate_range;
        let fpn_std = spec.fpn_std;
        let truth = PixelParamMap {
            gain_k: plane(0, &|r| uniform_in(r, g0, g1)),
            fpn_f: plane(1, &|r| {
                let z: f64 = StandardNormal.sample(r);
                // keep 1 + f positive for extreme draws
                (fpn_std * z).max(-0.9)
            }),
            dark_rate_a: plane(2, &|r| uniform_in(r, a0, a1)),
            read_sigma: plane(3, &|r| uniform_in(r, r0, r1)),
            row_sigma: spec.row_sigma,
            quant_step_q: 1.0,
            time_law: spec.time_law,
            iso: spec.iso,
        };
        VirtualSensor {
            spec,
            truth,
            noise: NoiseModelConfig::all(),
        }
    }

    pub fn meta(&self, exposure_s: f64) -> SensorMeta {
        SensorMeta {
            iso: self.spec.iso,
            exposure_s,
            black_level: self.spec.black_level,
            white_level: self.spec.white_level,
            cfa: Cfa::Mono,
            camera_id: format!("virtual-{}", self.spec.seed),
        }
    }

    /// One frame under uniform illumination `signal_e` electrons.
    pub fn frame(&self, signal_e: f64, exposure_s: f64, frame_key: u64) -> Result<RawFrame> {
        let (w, h) = (self.spec.width, self.spec.height);
        let clean = Grid::filled(w, h, signal_e);
        let d = compose(
            &clean,
            &self.truth,
            &self.noise,
            exposure_s,
            &NoiseStream::with_frame(self.spec.seed, frame_key),
        )?;
        let black = f64::from(self.spec.black_level);
        let white = f64::from(self.spec.white_level);
        let data = d
            .as_slice()
            .iter()
            .zip(self.truth.fpn_f.as_slice())
            .map(|(v, f)| (v + f + black).round().clamp(0.0, white) as u16)
            .collect();
        RawFrame::new(w, h, data, self.meta(exposure_s))
    }

    /// Stack of `count` frames; `group` separates the random streams of
    /// different stacks.
    pub fn stack(
        &self,
        kind: StackKind,
        signal_e: f64,
        exposure_s: f64,
        count: usize,
        group: u64,
    ) -> Result<FrameStack> {
        let frames = (0..count)
            .map(|i| self.frame(signal_e, exposure_s, (group << 32) | i as u64))
            .collect::<Result<Vec<_>>>()?;
        FrameStack::new(frames, kind)
    }

    pub fn flat_stack(&self, signal_e: f64, exposure_s: f64, count: usize) -> Result<FrameStack> {
        self.stack(StackKind::Flat, signal_e, exposure_s, count, 1)
    }

    pub fn bias_stack(&self, count: usize) -> Result<FrameStack> {
        self.stack(StackKind::Bias, 0.0, BIAS_EXPOSURE_S, count, 2)
    }

    pub fn dark_stack(&self, exposure_s: f64, count: usize, group: u64) -> Result<FrameStack> {
        self.stack(StackKind::Dark, 0.0, exposure_s, count, 16 + group)
    }
}

/// Smooth synthetic clean patch in `[0.05, 0.95]`: two random planar ramps
/// plus a Gaussian blob.
pub fn smooth_patch(patch: usize, seed: u64, item: u64) -> Vec<f64> {
    let stream = NoiseStream::with_frame(seed, item);
    let mut rng = stream.rng(Term::Aux, 0);
    let mut u = || rng.uniform_open();
    let (gx, gy, base) = (u() - 0.5, u() - 0.5, 0.2 + 0.6 * u());
    let (cx, cy) = (u() * patch as f64, u() * patch as f64);
    let (amp, width) = (0.6 * (u() - 0.5), 1.0 + 2.0 * u());
    let n = patch as f64;
    (0..patch * patch)
        .map(|p| {
            let (x, y) = ((p % patch) as f64, (p / patch) as f64);
            let ramp = base + 0.5 * (gx * (x / n - 0.5) + gy * (y / n - 0.5));
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            let blob = amp * (-d2 / (2.0 * width * width)).exp();
            (ramp + blob).clamp(0.05, 0.95)
        })
        .collect()
}

/// `(x1, T)` training pairs for the flow engine: normalized clean patches and
/// ratio-compensated conditions synthesized from them with the given noise
/// parameters (ratios drawn from `ratio_range`).
pub fn toy_flow_pairs(
    count: usize,
    patch: usize,
    params: &PixelParamMap,
    ratio_range: (f64, f64),
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    use crate::synthesis::{condition_from_noisy, normalize, synthesize_pair, SynthesisConfig};
    let meta = SensorMeta {
        iso: params.iso,
        exposure_s: 1.0,
        black_level: 512,
        white_level: 16383,
        cfa: Cfa::Mono,
        camera_id: "toy".into(),
    };
    let range = meta.range();
    (0..count)
        .map(|i| {
            let x1 = smooth_patch(patch, seed, i as u64);
            let data = x1
                .iter()
                .map(|v| (512.0 + v * range).round() as u16)
                .collect();
            let clean = RawFrame::new(patch, patch, data, meta.clone())?;
            let sc = SynthesisConfig {
                ratio_range: Some(ratio_range),
                exposure_range: Some((0.1, 1.0)),
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..Default::default()
            };
            let pair = synthesize_pair(&clean, params, &sc)?;
            let cond = condition_from_noisy(&pair.noisy, pair.ratio, true);
            Ok((normalize(&pair.clean).into_vec(), cond.into_vec()))
        })
        .collect()
}
