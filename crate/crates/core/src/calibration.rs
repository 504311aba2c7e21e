//! Noise-model calibration from flat, bias and dark frame stacks.
//!
//! Estimators run per pixel on temporal statistics of black-level-subtracted
//! values:
//!
//! * gain: `K̂ = Var / mean` over a flat-field stack (optionally with the bias
//!   stack's mean and variance removed first),
//! * fixed pattern: the temporal mean of the bias stack,
//! * row noise: variance of per-row means of FPN-removed bias residuals, with
//!   the read-noise leak into each row average subtracted,
//! * read noise: temporal bias variance minus the row component,
//! * dark counts: `|mean_dark| / (1 + f̂)` per exposure, then a least-squares
//!   choice between `y = a·t` and `y = a·√t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{median, Grid};
use crate::noisemodel::{PixelParamMap, TimeLaw};
use crate::rawio::{pixel_mean_map, pixel_mean_var_maps, FrameStack, StackKind};

/// Flat-field pixels with a mean at or below this (DN) get zero gain.
pub const GAIN_MEAN_EPSILON: f64 = 1.0;
/// Dark-count estimates below this (electrons) are clamped to zero.
pub const DARK_LAMBDA_FLOOR: f64 = 0.01;
/// Lower clamp applied to the fixed-pattern factor by [`calibrate_all`] so the
/// dark multiplier `1 + f` stays positive on noisy bias estimates.
pub const FPN_FACTOR_FLOOR: f64 = -0.9;
/// Row-noise estimation needs at least this many columns.
pub const MIN_ROW_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate {
    pub gain: Grid,
    /// Pixels whose flat mean was at most [`GAIN_MEAN_EPSILON`] or whose
    /// temporal variance was zero.
    pub degenerate: Vec<bool>,
}

impl GainEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

fn gain_from_moments(mean: &[f64], var: &[f64], width: usize, height: usize) -> Result<GainEstimate> {
    let (gain, degenerate): (Vec<f64>, Vec<bool>) = mean
        .iter()
        .zip(var)
        .map(|(&m, &v)| {
            if m <= GAIN_MEAN_EPSILON || v <= 0.0 {
                (0.0, true)
            } else {
                (v / m, false)
            }
        })
        .unzip();
    Ok(GainEstimate {
        gain: Grid::from_vec(width, height, gain)?,
        degenerate,
    })
}

/// Per-pixel `Var / mean` over a flat-field stack, neglecting signal-independent
/// noise.
pub fn estimate_gain(flat: &FrameStack) -> Result<GainEstimate> {
    flat.require_kind(StackKind::Flat)?;
    let (mean, var) = pixel_mean_var_maps(flat)?;
    gain_from_moments(mean.as_slice(), var.as_slice(), mean.width(), mean.height())
}

/// Photon-transfer gain with the bias stack's per-pixel mean and variance
/// removed: `(Var_flat − Var_bias) / (mean_flat − mean_bias)`.
pub fn estimate_gain_bias_corrected(flat: &FrameStack, bias: &FrameStack) -> Result<GainEstimate> {
    flat.require_kind(StackKind::Flat)?;
    bias.require_kind(StackKind::Bias)?;
    let (fm, fv) = pixel_mean_var_maps(flat)?;
    let (bm, bv) = pixel_mean_var_maps(bias)?;
    let mean = fm.zip_map(&bm, |a, b| a - b)?;
    let var = fv.zip_map(&bv, |a, b| (a - b).max(0.0))?;
    gain_from_moments(mean.as_slice(), var.as_slice(), mean.width(), mean.height())
}

/// Fixed-pattern map: temporal mean of the bias stack.
pub fn estimate_fpn(bias: &FrameStack) -> Result<Grid> {
    bias.require_kind(StackKind::Bias)?;
    pixel_mean_map(bias)
}

/// Global row-noise standard deviation from a bias stack.
///
/// With `m` the row means of per-pixel-centred residuals and `v̄` the mean
/// temporal pixel variance, `Var(m) = σ_H² + mean(σ_r²)/W` and
/// `v̄ = mean(σ_r²) + σ_H²`, so `σ_H² = (Var(m) − v̄/W) / (1 − 1/W)`.
pub fn estimate_row_sigma(bias: &FrameStack) -> Result<f64> {
    bias.require_kind(StackKind::Bias)?;
    let (width, height) = bias.dims();
    if width < MIN_ROW_WIDTH {
        return Err(Error::Invalid(format!(
            "row noise needs width >= {MIN_ROW_WIDTH}, got {width}"
        )));
    }
    let n = bias.len();
    let (mean, var) = pixel_mean_var_maps(bias)?;
    let black = f64::from(bias.frames[0].meta.black_level);
    let mean = mean.as_slice();

    // Each row's means sum to zero over frames, so n − 1 degrees of freedom per row.
    let sum_sq: f64 = (0..height)
        .into_par_iter()
        .map(|y| {
            bias.frames
                .iter()
                .map(|f| {
                    let row_mean = (0..width)
                        .map(|x| {
                            let p = y * width + x;
                            f64::from(f.data[p]) - black - mean[p]
                        })
                        .sum::<f64>()
                        / width as f64;
                    row_mean * row_mean
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let row_var = sum_sq / (height * (n - 1)) as f64;
    let w = width as f64;
    let sigma_sq = (row_var - var.mean() / w) / (1.0 - 1.0 / w);
    Ok(sigma_sq.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadSigmaEstimate {
    pub sigma: Grid,
    /// False when no row component was removed (raw temporal std).
    pub row_corrected: bool,
}

/// Per-pixel read noise `sqrt(max(0, Var_p − σ_H²))`.
///
/// Without a row estimate the raw temporal standard deviation is returned and
/// flagged as uncorrected.
pub fn estimate_read_sigma(bias: &FrameStack, row_sigma: Option<f64>) -> Result<ReadSigmaEstimate> {
    bias.require_kind(StackKind::Bias)?;
    let (_, var) = pixel_mean_var_maps(bias)?;
    let row_var = row_sigma.map_or(0.0, |s| s * s);
    Ok(ReadSigmaEstimate {
        sigma: var.map(|v| (v - row_var).max(0.0).sqrt()),
        row_corrected: row_sigma.is_some(),
    })
}

/// Expected dark count per pixel at the stack's exposure:
/// `|mean_dark| / (1 + f̂)`, clamped to zero below [`DARK_LAMBDA_FLOOR`].
pub fn estimate_dark(dark: &FrameStack, fpn: &Grid) -> Result<Grid> {
    dark.require_kind(StackKind::Dark)?;
    let mean = pixel_mean_map(dark)?;
    mean.check_same_dims(fpn)?;
    if let Some(i) = fpn.as_slice().iter().position(|f| !(1.0 + f > 0.0)) {
        return Err(Error::Invalid(format!(
            "1 + fpn must be positive, pixel {i} has fpn {}",
            fpn.as_slice()[i]
        )));
    }
    mean.zip_map(fpn, |m, f| {
        let lambda = m.abs() / (1.0 + f);
        if lambda < DARK_LAMBDA_FLOOR {
            0.0
        } else {
            lambda
        }
    })
}

/// Variance-based cross-check of the dark count: with `Var ≈ (1+f)²λ + Var_bias`
/// and `E = (1+f)λ`, `λ = E² / (Var − Var_bias)`. Not used by [`calibrate_all`].
pub fn estimate_dark_from_variance(dark: &FrameStack, bias: &FrameStack) -> Result<Grid> {
    dark.require_kind(StackKind::Dark)?;
    let (dm, dv) = pixel_mean_var_maps(dark)?;
    let (bm, bv) = pixel_mean_var_maps(bias)?;
    dm.check_same_dims(&bm)?;
    let excess_mean = dm.zip_map(&bm, |d, b| d - b)?;
    let excess_var = dv.zip_map(&bv, |d, b| d - b)?;
    excess_mean.zip_map(&excess_var, |m, v| if v > 0.0 { m * m / v } else { 0.0 })
}

/// Result of fitting both dark-current time laws through the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeLawFit {
    /// Coefficient of the selected law, per pixel (1×1 for scalar fits).
    pub coefficient_a: Grid,
    pub law: TimeLaw,
    pub sse_linear: f64,
    pub sse_sqrt: f64,
    /// Per-pixel coefficients of both laws.
    pub coefficient_linear: Grid,
    pub coefficient_sqrt: Grid,
}

/// Least-squares fit of `y = a·t` and `y = a·√t` per pixel; the law with the
/// smaller total SSE is selected (ties go to the square-root law).
pub fn fit_time_law(points: &[(f64, Grid)]) -> Result<TimeLawFit> {
    let Some((_, first)) = points.first() else {
        return Err(Error::Invalid("no exposure points".into()));
    };
    for (t, g) in points {
        first.check_same_dims(g)?;
        if !(*t > 0.0) {
            return Err(Error::Invalid(format!("exposure must be positive, got {t}")));
        }
    }
    let t0 = points[0].0;
    if points.iter().all(|(t, _)| *t == t0) {
        return Err(Error::Invalid(
            "time-law fitting needs at least 2 distinct exposures".into(),
        ));
    }
    let (width, height) = first.dims();
    let fit = |law: TimeLaw| -> (Grid, f64) {
        let xs: Vec<f64> = points.iter().map(|(t, _)| law.scale(*t)).collect();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let mut sse = 0.0;
        let coeff = Grid::from_fn(width, height, |x, y| {
            let ys = points.iter().map(|(_, g)| g.get(x, y));
            let a = xs.iter().zip(ys.clone()).map(|(xi, yi)| xi * yi).sum::<f64>() / sxx;
            sse += xs
                .iter()
                .zip(ys)
                .map(|(xi, yi)| (yi - a * xi).powi(2))
                .sum::<f64>();
            a
        });
        (coeff, sse)
    };
    let (coefficient_linear, sse_linear) = fit(TimeLaw::Linear);
    let (coefficient_sqrt, sse_sqrt) = fit(TimeLaw::Sqrt);
    let law = if sse_linear < sse_sqrt {
        TimeLaw::Linear
    } else {
        TimeLaw::Sqrt
    };
    Ok(TimeLawFit {
        coefficient_a: match law {
            TimeLaw::Linear => coefficient_linear.clone(),
            TimeLaw::Sqrt => coefficient_sqrt.clone(),
        },
        law,
        sse_linear,
        sse_sqrt,
        coefficient_linear,
        coefficient_sqrt,
    })
}

/// Scalar convenience wrapper around [`fit_time_law`].
pub fn fit_time_law_scalar(points: &[(f64, f64)]) -> Result<TimeLawFit> {
    let grids: Vec<(f64, Grid)> = points
        .iter()
        .map(|&(t, y)| (t, Grid::filled(1, 1, y)))
        .collect();
    fit_time_law(&grids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PpccDistribution {
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpccReport {
    pub pixel_coords: Option<(usize, usize)>,
    pub r_squared: f64,
    pub n_samples: usize,
}

/// Standard normal quantile (Acklam's rational approximation refined by one
/// Newton step).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    assert!(p > 0.0 && p < 1.0, "quantile probability {p} outside (0,1)");
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    // Newton step on Φ(x) − p
    let e = normal_cdf(x) - p;
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x - e / pdf
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (W. J. Cody's rational Chebyshev fits,
/// relative accuracy ~1e-15).
fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let r = if ax < 0.5 {
        let t = x * x;
        let num = (((0.185777706184603153 * t + 3.16112374387056560) * t + 113.864154151050156) * t
            + 377.485237685302021)
            * t
            + 3209.37758913846947;
        let den = (((t + 23.6012909523441209) * t + 244.024637934444173) * t + 1282.61652607737228)
            * t
            + 2844.23683343917062;
        return 1.0 - x * num / den;
    } else if ax < 4.0 {
        const P: [f64; 9] = [
            0.564188496988670089,
            8.88314979438837594,
            66.1191906371416295,
            298.635138197400131,
            881.952221241769090,
            1712.04761263407058,
            2051.07837782607147,
            1230.33935479799725,
            2.15311535474403846e-8,
        ];
        const Q: [f64; 8] = [
            15.7449261107098347,
            117.693950891312499,
            537.181101862009858,
            1621.38957456669019,
            3290.79923573345963,
            4362.61909014324716,
            3439.36767414372164,
            1230.33935480374942,
        ];
        let mut num = P[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + P[i]) * ax;
            den = (den + Q[i]) * ax;
        }
        let frac = (num + P[7]) / (den + Q[7]);
        frac * (-ax * ax).exp()
    } else {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242,
            1.87295284992346725,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let z = 1.0 / (ax * ax);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let frac = z * (num + P[4]) / (den + Q[4]);
        let frac = (1.0 / std::f64::consts::PI.sqrt() - frac) / ax;
        frac * (-ax * ax).exp()
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Blom plotting position for rank `i` (1-based) of `n`.
pub fn blom_position(i: usize, n: usize) -> f64 {
    (i as f64 - 0.375) / (n as f64 + 0.25)
}

/// Probability-plot R²: squared Pearson correlation between sorted samples and
/// the distribution's quantiles at Blom positions.
pub fn ppcc_fit(samples: &[f64], distribution: PpccDistribution) -> Result<PpccReport> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::Invalid(format!("PPCC needs >= 8 samples, got {n}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Err(Error::Invalid("PPCC of a constant sample is undefined".into()));
    }
    let quantiles: Vec<f64> = (1..=n)
        .map(|i| match distribution {
            PpccDistribution::Gaussian => normal_quantile(blom_position(i, n)),
        })
        .collect();
    let r = pearson(&sorted, &quantiles);
    Ok(PpccReport {
        pixel_coords: None,
        r_squared: (r * r).clamp(0.0, 1.0),
        n_samples: n,
    })
}

/// PPCC of one pixel's temporal samples (black level removed).
pub fn ppcc_at_pixel(stack: &FrameStack, x: usize, y: usize) -> Result<PpccReport> {
    let (w, h) = stack.dims();
    if x >= w || y >= h {
        return Err(Error::Invalid(format!("pixel ({x},{y}) outside {w}x{h}")));
    }
    let samples: Vec<f64> = stack
        .frames
        .iter()
        .map(|f| f64::from(f.get(x, y)) - f64::from(f.meta.black_level))
        .collect();
    let mut report = ppcc_fit(&samples, PpccDistribution::Gaussian)?;
    report.pixel_coords = Some((x, y));
    Ok(report)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `Var/mean` of the flat stack alone.
    Approximate,
    /// Bias mean and variance removed before the ratio.
    BiasCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub gain_mode: GainMode,
    /// False collapses every plane to its spatial median.
    pub per_pixel: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            gain_mode: GainMode::BiasCorrected,
            per_pixel: true,
        }
    }
}

/// Everything [`calibrate_all`] learns, beyond the parameter map itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: PixelParamMap,
    /// Per-pixel bias mean (the additive FPN offset in DN).
    pub fpn_offset: Grid,
    /// Pixels whose factor was raised to [`FPN_FACTOR_FLOOR`].
    pub fpn_clamped: usize,
    pub gain_degenerate: usize,
    /// `(exposure_s, λ̂ map)` for every dark stack.
    pub dark_points: Vec<(f64, Grid)>,
    pub time_fit: Option<TimeLawFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub gain_median: f64,
    pub gain_degenerate_pixels: usize,
    pub fpn_mean: f64,
    pub fpn_std: f64,
    pub fpn_clamped_pixels: usize,
    /// Median of the multiplicative dark factor `1 + f`.
    pub k2_median: f64,
    pub read_sigma_median: f64,
    pub row_sigma: f64,
    pub dark_a_median: f64,
    pub time_law: TimeLaw,
    pub sse_linear: Option<f64>,
    pub sse_sqrt: Option<f64>,
    pub ppcc_samples: Vec<PpccReport>,
}

impl Calibration {
    /// Summary statistics; `ppcc_samples` is left for the caller to fill.
    pub fn summary(&self) -> CalibrationSummary {
        let p = &self.params;
        let f = p.fpn_f.as_slice();
        let fpn_mean = p.fpn_f.mean();
        let fpn_std = (f.iter().map(|v| (v - fpn_mean).powi(2)).sum::<f64>()
            / f.len().max(1) as f64)
            .sqrt();
        CalibrationSummary {
            gain_median: p.gain_k.median(),
            gain_degenerate_pixels: self.gain_degenerate,
            fpn_mean,
            fpn_std,
            fpn_clamped_pixels: self.fpn_clamped,
            k2_median: median(&f.iter().map(|v| 1.0 + v).collect::<Vec<_>>()),
            read_sigma_median: p.read_sigma.median(),
            row_sigma: p.row_sigma,
            dark_a_median: p.dark_rate_a.median(),
            time_law: p.time_law,
            sse_linear: self.time_fit.as_ref().map(|t| t.sse_linear),
            sse_sqrt: self.time_fit.as_ref().map(|t| t.sse_sqrt),
            ppcc_samples: Vec::new(),
        }
    }
}

/// Runs every estimator in dependency order (fpn → row → read → gain → dark →
/// time law) and assembles a [`PixelParamMap`] with `quant_step_q = 1`.
///
/// The bias mean doubles as the fixed-pattern factor; it is clamped at
/// [`FPN_FACTOR_FLOOR`] before use.
///
/// With a single dark exposure the square-root law is assumed and
/// `a = λ̂ / √t`.
pub fn calibrate_all(
    flat: &FrameStack,
    bias: &FrameStack,
    darks: &[FrameStack],
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    flat.require_kind(StackKind::Flat)?;
    bias.require_kind(StackKind::Bias)?;
    if flat.dims() != bias.dims() {
        return Err(Error::shape(
            format!("{:?} (flat)", flat.dims()),
            format!("{:?} (bias)", bias.dims()),
        ));
    }
    if darks.is_empty() {
        return Err(Error::Invalid("at least one dark stack is required".into()));
    }
    for d in darks {
        d.require_kind(StackKind::Dark)?;
        if d.dims() != bias.dims() {
            return Err(Error::shape(
                format!("{:?} (bias)", bias.dims()),
                format!("{:?} (dark)", d.dims()),
            ));
        }
    }

    let fpn_offset = estimate_fpn(bias)?;
    let fpn_clamped = fpn_offset
        .as_slice()
        .iter()
        .filter(|&&f| f < FPN_FACTOR_FLOOR)
        .count();
    let fpn = fpn_offset.map(|f| f.max(FPN_FACTOR_FLOOR));
    let row_sigma = estimate_row_sigma(bias)?;
    let read = estimate_read_sigma(bias, Some(row_sigma))?;
    let gain = match opts.gain_mode {
        GainMode::Approximate => estimate_gain(flat)?,
        GainMode::BiasCorrected => estimate_gain_bias_corrected(flat, bias)?,
    };
    let dark_points = darks
        .iter()
        .map(|d| {
            let t = d.meta().expect("validated non-empty").exposure_s;
            Ok((t, estimate_dark(d, &fpn)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let distinct = dark_points.iter().any(|(t, _)| *t != dark_points[0].0);
    let (dark_rate, law, time_fit) = if distinct {
        let fit = fit_time_law(&dark_points)?;
        // negative slopes can only come from noise
        (fit.coefficient_a.map(|a| a.max(0.0)), fit.law, Some(fit))
    } else {
        let n = dark_points.len() as f64;
        let t = dark_points[0].0;
        let (w, h) = fpn.dims();
        let mean = Grid::from_fn(w, h, |x, y| {
            dark_points.iter().map(|(_, g)| g.get(x, y)).sum::<f64>() / n
        });
        (mean.map(|l| l / t.sqrt()), TimeLaw::Sqrt, None)
    };

    let mut params = PixelParamMap {
        gain_k: gain.gain.clone(),
        fpn_f: fpn.clone(),
        dark_rate_a: dark_rate,
        read_sigma: read.sigma,
        row_sigma,
        quant_step_q: 1.0,
        time_law: law,
        iso: flat.meta().expect("validated non-empty").iso,
    };
    if !opts.per_pixel {
        params = params.globalized();
    }
    params.validate()?;
    Ok(Calibration {
        params,
        fpn_offset,
        fpn_clamped,
        gain_degenerate: gain.degenerate_count(),
        dark_points,
        time_fit,
    })
}
