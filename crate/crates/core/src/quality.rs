//! PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub peak: f64,
    pub psnr_capped: bool,
}

fn check_shapes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Invalid("empty input".into()));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_slice(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(a: &Grid, b: &Grid, peak: f64) -> Result<f64> {
    a.check_same_dims(b)?;
    psnr_slice(a.as_slice(), b.as_slice(), peak)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(src: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = w.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = w
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5) over the valid
/// region, `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`.
pub fn ssim(a: &Grid, b: &Grid, peak: f64) -> Result<f64> {
    a.check_same_dims(b)?;
    let (width, height) = a.dims();
    if width.min(height) < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("peak must be positive, got {peak}")));
    }
    let w = gaussian_window();
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        xa.iter().zip(xb).map(|(&p, &q)| f(p, q)).collect()
    };
    let mu_a = filter_valid(xa, width, height, &w);
    let mu_b = filter_valid(xb, width, height, &w);
    let aa = filter_valid(&prod(&|p, _| p * p), width, height, &w);
    let bb = filter_valid(&prod(&|_, q| q * q), width, height, &w);
    let ab = filter_valid(&prod(&|p, q| p * q), width, height, &w);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

pub fn report(reference: &Grid, test: &Grid, peak: f64) -> Result<MetricReport> {
    let psnr_db = psnr(reference, test, peak)?;
    Ok(MetricReport {
        psnr_db,
        ssim: ssim(reference, test, peak)?,
        peak,
        psnr_capped: psnr_db >= PSNR_CAP_DB,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Grid::filled(4, 4, 0.25);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 1.0);
        assert!(psnr(&a, &b, 1.0).unwrap().abs() < 1e-12);
        let c = a.map(|v| v + 0.5);
        assert!((psnr(&a, &c, 1.0).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!(psnr(&a, &Grid::zeros(2, 2), 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let a = Grid::from_fn(16, 12, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        assert!(ssim(&Grid::zeros(10, 20), &Grid::zeros(10, 20), 1.0).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }
}
