//! Composite low-light noise model and its seeded samplers.
//!
//! A raw observation (pedestal removed, in DN) is modeled as
//!
//! ```text
//! D = K·(I + N_s) + N_RS·(1 + N_FP) + N_H + N_r + N_q
//! ```
//!
//! where `K·(I + N_s)` is photon shot noise on the signal `I` (electrons),
//! `N_RS` the dark-current shot count scaled by the frozen fixed-pattern factor
//! `1 + N_FP`, `N_H` a per-row Gaussian offset, `N_r` per-pixel Gaussian read
//! noise and `N_q` uniform quantization error.
//!
//! Each term draws from its own keyed stream (see [`crate::rng`]), so a term
//! sampled alone is bit-identical to the same term sampled inside [`compose`].

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{KeyedRng, NoiseStream, Term};

/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;

/// Poisson means above this are drawn from the rounded Gaussian N(λ, λ).
pub const POISSON_GAUSSIAN_SWITCH: f64 = 1000.0;

/// How the dark-current count grows with exposure time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TimeLaw {
    Linear,
    Sqrt,
}

impl TimeLaw {
    /// Exposure-dependent multiplier of the dark rate: `t` or `√t`.
    pub fn scale(self, exposure_s: f64) -> f64 {
        match self {
            TimeLaw::Linear => exposure_s,
            TimeLaw::Sqrt => exposure_s.sqrt(),
        }
    }
}

/// Calibrated per-pixel noise parameters for one ISO setting.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelParamMap {
    /// Conversion gain, DN per electron.
    pub gain_k: Grid,
    /// Fixed-pattern factor; dark counts are scaled by `1 + fpn_f`.
    pub fpn_f: Grid,
    /// Dark-current rate, electrons per `time_law` unit.
    pub dark_rate_a: Grid,
    /// Read-noise standard deviation in DN.
    pub read_sigma: Grid,
    pub row_sigma: f64,
    pub quant_step_q: f64,
    pub time_law: TimeLaw,
    pub iso: i64,
}

impl PixelParamMap {
    /// Spatially uniform parameters.
    pub fn uniform(
        width: usize,
        height: usize,
        gain_k: f64,
        fpn_f: f64,
        dark_rate_a: f64,
        read_sigma: f64,
        row_sigma: f64,
    ) -> Self {
        PixelParamMap {
            gain_k: Grid::filled(width, height, gain_k),
            fpn_f: Grid::filled(width, height, fpn_f),
            dark_rate_a: Grid::filled(width, height, dark_rate_a),
            read_sigma: Grid::filled(width, height, read_sigma),
            row_sigma,
            quant_step_q: 1.0,
            time_law: TimeLaw::Sqrt,
            iso: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gain_k.dims()
    }

    pub fn validate(&self) -> Result<()> {
        for g in [&self.fpn_f, &self.dark_rate_a, &self.read_sigma] {
            self.gain_k.check_same_dims(g)?;
        }
        let nonneg = |name: &str, g: &Grid| -> Result<()> {
            match g.as_slice().iter().position(|v| !(*v >= 0.0)) {
                Some(i) => Err(Error::Invalid(format!(
                    "{name} must be non-negative, pixel {i} is {}",
                    g.as_slice()[i]
                ))),
                None => Ok(()),
            }
        };
        nonneg("gain_K", &self.gain_k)?;
        nonneg("dark_rate_a", &self.dark_rate_a)?;
        nonneg("read_sigma", &self.read_sigma)?;
        if let Some(i) = self.fpn_f.as_slice().iter().position(|f| !(1.0 + f > 0.0)) {
            return Err(Error::Invalid(format!(
                "1 + fpn_f must be positive, pixel {i} has fpn_f = {}",
                self.fpn_f.as_slice()[i]
            )));
        }
        if !(self.row_sigma >= 0.0) {
            return Err(Error::Invalid(format!("row_sigma {} < 0", self.row_sigma)));
        }
        if !(self.quant_step_q > 0.0) {
            return Err(Error::Invalid(format!(
                "quant_step_q {} must be positive",
                self.quant_step_q
            )));
        }
        Ok(())
    }

    /// Replaces every per-pixel plane by its spatial median (global calibration).
    pub fn globalized(&self) -> PixelParamMap {
        let flat = |g: &Grid| Grid::filled(g.width(), g.height(), g.median());
        PixelParamMap {
            gain_k: flat(&self.gain_k),
            fpn_f: flat(&self.fpn_f),
            dark_rate_a: flat(&self.dark_rate_a),
            read_sigma: flat(&self.read_sigma),
            ..self.clone()
        }
    }

    /// Center crop of every plane.
    pub fn center_crop(&self, size: usize) -> Result<PixelParamMap> {
        use crate::rawio::center_crop_grid;
        Ok(PixelParamMap {
            gain_k: center_crop_grid(&self.gain_k, size)?,
            fpn_f: center_crop_grid(&self.fpn_f, size)?,
            dark_rate_a: center_crop_grid(&self.dark_rate_a, size)?,
            read_sigma: center_crop_grid(&self.read_sigma, size)?,
            ..self.clone()
        })
    }
}

/// Which noise terms are active, plus per-pixel vs global calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseModelConfig {
    /// Photon shot noise (P).
    pub enable_shot: bool,
    /// Read noise (G).
    pub enable_read: bool,
    /// Row noise (H).
    pub enable_row: bool,
    /// Quantization noise (Q).
    pub enable_quant: bool,
    /// Fixed-pattern scaling of dark counts (F).
    pub enable_fpn: bool,
    /// Dark-current shot noise (A).
    pub enable_dark: bool,
    pub per_pixel: bool,
}

impl Default for NoiseModelConfig {
    fn default() -> Self {
        Self::all()
    }
}

impl NoiseModelConfig {
    pub fn all() -> Self {
        NoiseModelConfig {
            enable_shot: true,
            enable_read: true,
            enable_row: true,
            enable_quant: true,
            enable_fpn: true,
            enable_dark: true,
            per_pixel: true,
        }
    }

    pub fn none() -> Self {
        NoiseModelConfig {
            enable_shot: false,
            enable_read: false,
            enable_row: false,
            enable_quant: false,
            enable_fpn: false,
            enable_dark: false,
            per_pixel: true,
        }
    }
}

/// Inputs of the physical dark-current rate law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkPhysicalParams {
    /// Pixel area in cm².
    pub pixel_area_q: f64,
    /// Sensor temperature in kelvin.
    pub temperature_t: f64,
    /// Dark-current figure of merit at 300 K, nA/cm².
    pub figure_of_merit_c: f64,
    /// Silicon band gap in eV.
    pub band_gap_e: f64,
}

/// Dark-current generation rate `S = Q·T^{3/2}·C·exp(−E_gap / 2kT)`.
///
/// Multiplying by the exposure time gives the expected dark count.
pub fn physical_dark_rate(p: &DarkPhysicalParams) -> Result<f64> {
    if !(p.temperature_t > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {}",
            p.temperature_t
        )));
    }
    if !(p.pixel_area_q > 0.0) {
        return Err(Error::Invalid(format!(
            "pixel area must be positive, got {}",
            p.pixel_area_q
        )));
    }
    let t = p.temperature_t;
    Ok(p.pixel_area_q
        * t.powf(1.5)
        * p.figure_of_merit_c
        * (-p.band_gap_e / (2.0 * BOLTZMANN_EV * t)).exp())
}

/// One Poisson count; large means fall back to a rounded Gaussian.
pub fn sample_poisson(lambda: f64, rng: &mut KeyedRng) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    if lambda > POISSON_GAUSSIAN_SWITCH {
        let z: f64 = StandardNormal.sample(rng);
        return (lambda + lambda.sqrt() * z).round().max(0.0);
    }
    Poisson::new(lambda)
        .expect("positive finite lambda")
        .sample(rng)
}

fn per_pixel(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> Vec<f64> {
    (0..n).into_par_iter().map(f).collect()
}

/// `gain_K · Poisson(signal_e)` per pixel.
pub fn sample_shot(signal_e: &Grid, gain_k: &Grid, stream: &NoiseStream) -> Result<Grid> {
    signal_e.check_same_dims(gain_k)?;
    if let Some(i) = signal_e.as_slice().iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Invalid(format!(
            "signal must be non-negative, pixel {i} is {}",
            signal_e.as_slice()[i]
        )));
    }
    let (s, k) = (signal_e.as_slice(), gain_k.as_slice());
    let data = per_pixel(s.len(), |p| {
        let mut rng = stream.rng(Term::Shot, p as u64);
        k[p] * sample_poisson(s[p], &mut rng)
    });
    Grid::from_vec(signal_e.width(), signal_e.height(), data)
}

/// Dark-current shot counts `Poisson(a·scale(t))`, scaled by `1 + f`.
pub fn sample_dark(
    exposure_s: f64,
    dark_rate_a: &Grid,
    fpn_f: &Grid,
    law: TimeLaw,
    stream: &NoiseStream,
) -> Result<Grid> {
    if !(exposure_s > 0.0) {
        return Err(Error::Invalid(format!(
            "exposure must be positive, got {exposure_s}"
        )));
    }
    dark_rate_a.check_same_dims(fpn_f)?;
    let scale = law.scale(exposure_s);
    let (a, f) = (dark_rate_a.as_slice(), fpn_f.as_slice());
    let data = per_pixel(a.len(), |p| {
        let mut rng = stream.rng(Term::Dark, p as u64);
        sample_poisson(a[p] * scale, &mut rng) * (1.0 + f[p])
    });
    Grid::from_vec(dark_rate_a.width(), dark_rate_a.height(), data)
}

/// One `N(0, row_sigma²)` offset per row, broadcast along the row.
pub fn sample_row(height: usize, width: usize, row_sigma: f64, stream: &NoiseStream) -> Result<Grid> {
    if !(row_sigma >= 0.0) {
        return Err(Error::Invalid(format!("row_sigma {row_sigma} < 0")));
    }
    let offsets: Vec<f64> = (0..height)
        .map(|y| {
            let z: f64 = StandardNormal.sample(&mut stream.rng(Term::Row, y as u64));
            row_sigma * z
        })
        .collect();
    Ok(Grid::from_fn(width, height, |_, y| offsets[y]))
}

/// Independent `N(0, σ_p²)` per pixel.
pub fn sample_read(read_sigma: &Grid, stream: &NoiseStream) -> Result<Grid> {
    let s = read_sigma.as_slice();
    if let Some(i) = s.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Invalid(format!("read sigma at pixel {i} is {}", s[i])));
    }
    let data = per_pixel(s.len(), |p| {
        let z: f64 = StandardNormal.sample(&mut stream.rng(Term::Read, p as u64));
        s[p] * z
    });
    Grid::from_vec(read_sigma.width(), read_sigma.height(), data)
}

/// Independent `U(−q/2, q/2)` per pixel (open interval).
pub fn sample_quant(width: usize, height: usize, quant_step_q: f64, stream: &NoiseStream) -> Result<Grid> {
    if !(quant_step_q > 0.0) {
        return Err(Error::Invalid(format!(
            "quantization step must be positive, got {quant_step_q}"
        )));
    }
    let data = per_pixel(width * height, |p| {
        let u = stream.rng(Term::Quant, p as u64).uniform_open();
        (u - 0.5) * quant_step_q
    });
    Grid::from_vec(width, height, data)
}

/// Full observation in DN (pedestal removed) for a clean electron image.
///
/// Disabled terms contribute nothing; with shot noise disabled the signal
/// enters deterministically as `K·I`. With fixed-pattern scaling disabled the
/// dark counts are left unscaled.
pub fn compose(
    clean_e: &Grid,
    params: &PixelParamMap,
    cfg: &NoiseModelConfig,
    exposure_s: f64,
    stream: &NoiseStream,
) -> Result<Grid> {
    clean_e.check_same_dims(&params.gain_k)?;
    params.validate()?;
    let global;
    let params = if cfg.per_pixel {
        params
    } else {
        global = params.globalized();
        &global
    };
    let (width, height) = clean_e.dims();

    let mut out = if cfg.enable_shot {
        sample_shot(clean_e, &params.gain_k, stream)?
    } else {
        clean_e.zip_map(&params.gain_k, |i, k| k * i)?
    };
    let mut add = |term: Grid| {
        for (o, t) in out.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *o += t;
        }
    };
    if cfg.enable_dark {
        let fpn = if cfg.enable_fpn {
            params.fpn_f.clone()
        } else {
            Grid::zeros(width, height)
        };
        add(sample_dark(
            exposure_s,
            &params.dark_rate_a,
            &fpn,
            params.time_law,
            stream,
        )?);
    }
    if cfg.enable_row {
        add(sample_row(height, width, params.row_sigma, stream)?);
    }
    if cfg.enable_read {
        add(sample_read(&params.read_sigma, stream)?);
    }
    if cfg.enable_quant {
        add(sample_quant(width, height, params.quant_step_q, stream)?);
    }
    Ok(out)
}

const PXCAL_MAGIC: &[u8] = b"PXCAL1\n";
const PLANES: [&str; 4] = ["gain_K", "fpn_f", "dark_rate_a", "read_sigma"];

#[derive(Serialize, Deserialize)]
struct PxcalHeader {
    width: usize,
    height: usize,
    planes: Vec<String>,
    row_sigma: f64,
    quant_step_q: f64,
    time_law: TimeLaw,
    iso: i64,
}

/// Serializes to the `PXCAL1` binary format (planes as f32 little-endian).
pub fn encode_params(params: &PixelParamMap) -> Vec<u8> {
    let (width, height) = params.dims();
    let header = PxcalHeader {
        width,
        height,
        planes: PLANES.iter().map(|s| s.to_string()).collect(),
        row_sigma: params.row_sigma,
        quant_step_q: params.quant_step_q,
        time_law: params.time_law,
        iso: params.iso,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PXCAL_MAGIC.len() + 4 + json.len() + 16 * width * height);
    out.extend_from_slice(PXCAL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for plane in [
        &params.gain_k,
        &params.fpn_f,
        &params.dark_rate_a,
        &params.read_sigma,
    ] {
        for &v in plane.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<PixelParamMap> {
    let bad = |m: &str| Error::ParamFile(m.to_string());
    let rest = bytes
        .strip_prefix(PXCAL_MAGIC)
        .ok_or_else(|| bad("missing PXCAL1 magic"))?;
    if rest.len() < 4 {
        return Err(bad("truncated header length"));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: PxcalHeader =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| Error::ParamFile(e.to_string()))?;
    let payload = &rest[hlen..];
    let n = header.width * header.height;
    if payload.len() != header.planes.len() * n * 4 {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            header.planes.len() * n * 4
        )));
    }
    let plane = |name: &str| -> Result<Grid> {
        let idx = header
            .planes
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::ParamFile(format!("missing plane {name}")))?;
        let data = payload[idx * n * 4..(idx + 1) * n * 4]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Grid::from_vec(header.width, header.height, data)
    };
    let params = PixelParamMap {
        gain_k: plane(PLANES[0])?,
        fpn_f: plane(PLANES[1])?,
        dark_rate_a: plane(PLANES[2])?,
        read_sigma: plane(PLANES[3])?,
        row_sigma: header.row_sigma,
        quant_step_q: header.quant_step_q,
        time_law: header.time_law,
        iso: header.iso,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_params(params: &PixelParamMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_params(params))
        .map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<PixelParamMap> {
    let path = path.as_ref();
    decode_params(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Uniform draw in `[lo, hi]` from a keyed stream.
pub(crate) fn uniform_in(rng: &mut KeyedRng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..=hi)
}
