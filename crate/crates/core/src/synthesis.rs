//! Paired low-light data synthesis and flow conditioning.
//!
//! A clean frame is converted to electrons, darkened by an exposure ratio,
//! passed through [`compose`] with calibrated parameters, and re-quantized to
//! DN on the original pedestal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::noisemodel::{compose, uniform_in, NoiseModelConfig, PixelParamMap};
use crate::rawio::RawFrame;
use crate::rng::{NoiseStream, Term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub ratio: f64,
    /// When set, the ratio is drawn uniformly from `[lo, hi]`.
    pub ratio_range: Option<(f64, f64)>,
    pub exposure_s: f64,
    /// When set, the exposure is drawn uniformly from `[lo, hi]`.
    pub exposure_range: Option<(f64, f64)>,
    pub seed: u64,
    pub noise: NoiseModelConfig,
    /// Multiply the normalized condition back up by the ratio.
    pub compensate: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            ratio: 1.0,
            ratio_range: None,
            exposure_s: 1.0,
            exposure_range: None,
            seed: 0,
            noise: NoiseModelConfig::all(),
            compensate: true,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 1.0) {
            return Err(Error::Invalid(format!("ratio {} must be >= 1", self.ratio)));
        }
        if let Some((lo, hi)) = self.ratio_range {
            if !(lo >= 1.0 && lo <= hi) {
                return Err(Error::Invalid(format!("bad ratio range [{lo}, {hi}]")));
            }
        }
        if !(self.exposure_s > 0.0) {
            return Err(Error::Invalid(format!(
                "exposure {} must be positive",
                self.exposure_s
            )));
        }
        if let Some((lo, hi)) = self.exposure_range {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Invalid(format!("bad exposure range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// The `(ratio, exposure_s)` actually used for this seed.
    pub fn draw(&self) -> (f64, f64) {
        let stream = NoiseStream::new(self.seed);
        let ratio = match self.ratio_range {
            Some((lo, hi)) => uniform_in(&mut stream.rng(Term::Synthesis, 0), lo, hi),
            None => self.ratio,
        };
        let exposure = match self.exposure_range {
            Some((lo, hi)) => uniform_in(&mut stream.rng(Term::Synthesis, 1), lo, hi),
            None => self.exposure_s,
        };
        (ratio, exposure)
    }
}

/// Clean DN to darkened electrons: `max(0, (DN − black) / K / ratio)`.
/// Pixels with zero gain map to zero electrons.
pub fn darken(clean: &RawFrame, gain_k: &Grid, ratio: f64) -> Result<Grid> {
    if !(ratio >= 1.0) {
        return Err(Error::Invalid(format!("ratio {ratio} must be >= 1")));
    }
    let signal = clean.to_signal();
    signal.zip_map(gain_k, |s, k| {
        if k > 0.0 {
            (s / k / ratio).max(0.0)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPair {
    pub noisy: RawFrame,
    pub clean: RawFrame,
    pub ratio: f64,
    pub exposure_s: f64,
}

/// Center-crops `clean` to a square parameter map when sizes differ.
fn match_dims(clean: &RawFrame, params: &PixelParamMap) -> Result<RawFrame> {
    let (pw, ph) = params.dims();
    if (clean.width, clean.height) == (pw, ph) {
        return Ok(clean.clone());
    }
    if pw == ph && pw <= clean.width.min(clean.height) {
        return clean.center_crop(pw);
    }
    Err(Error::shape(
        format!("{pw}x{ph} (params)"),
        format!("{}x{} (clean)", clean.width, clean.height),
    ))
}

/// Darkens `clean`, injects noise and re-quantizes onto the pedestal.
///
/// Output DN is `round(D + black)` clipped to `[0, white_level]`.
pub fn synthesize_pair(
    clean: &RawFrame,
    params: &PixelParamMap,
    sc: &SynthesisConfig,
) -> Result<SynthesizedPair> {
    sc.validate()?;
    let clean = match_dims(clean, params)?;
    let (ratio, exposure_s) = sc.draw();
    let electrons = darken(&clean, &params.gain_k, ratio)?;
    let d = compose(
        &electrons,
        params,
        &sc.noise,
        exposure_s,
        &NoiseStream::new(sc.seed),
    )?;
    let black = f64::from(clean.meta.black_level);
    let white = f64::from(clean.meta.white_level);
    let data = d
        .as_slice()
        .iter()
        .map(|v| (v + black).round().clamp(0.0, white) as u16)
        .collect();
    let noisy = RawFrame::new(clean.width, clean.height, data, clean.meta.clone())?;
    Ok(SynthesizedPair {
        noisy,
        clean,
        ratio,
        exposure_s,
    })
}

/// Normalizes a frame to `[0, 1]` by `(DN − black) / (white − black)`, without
/// clipping.
pub fn normalize(frame: &RawFrame) -> Grid {
    let range = frame.meta.range();
    frame.to_signal().map(|v| v / range)
}

/// Flow condition from an already-synthesized noisy frame: normalized, scaled
/// by `ratio` when compensating, then clipped to `[0, 1]`.
pub fn condition_from_noisy(noisy: &RawFrame, ratio: f64, compensate: bool) -> Grid {
    let gain = if compensate { ratio } else { 1.0 };
    normalize(noisy).map(|v| (v * gain).clamp(0.0, 1.0))
}

/// Synthesizes the noisy half of a pair and turns it into the flow condition.
pub fn build_condition(clean: &RawFrame, params: &PixelParamMap, sc: &SynthesisConfig) -> Result<Grid> {
    let pair = synthesize_pair(clean, params, sc)?;
    Ok(condition_from_noisy(&pair.noisy, pair.ratio, sc.compensate))
}
