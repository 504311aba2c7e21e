//! Conditional rectified flow at desk scale.
//!
//! Samples travel the straight path `x_t = t·x1 + (1−t)·x0` from Gaussian
//! noise `x0` to a clean target `x1`; a velocity field `v(x, T, t)` conditioned
//! on a physics-synthesized noisy observation `T` is trained to predict
//! `x1 − x0` under an L1 objective. Restoration uses a two-stage sampler:
//!
//! ```text
//! x_Z = v(x0, T, 0) + x0
//! x_t = t2·x_Z + (1 − t2)·x0
//! x_M = v(x_t, T, t2) + x0
//! ```
//!
//! with `t2` chosen by an equidistant search over `{s, 2s, …, ns}` on a
//! validation split.

mod field;
mod train;

pub use field::{
    decode_model, encode_model, load_model, save_model, time_embedding, Activation, Architecture,
    VelocityField,
};
pub use train::{loss_and_grad, train, AdamConfig, TrainOutcome};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::psnr_slice;
use crate::rng::{NoiseStream, Term};

/// The evaluate contract every velocity field satisfies.
pub trait Velocity: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Adapts a closure into a [`Velocity`].
pub struct FnVelocity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> Velocity for FnVelocity<F>
where
    F: Fn(&[f64], &[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(self.dim, x.len()));
        }
        Ok((self.f)(x, cond, t))
    }
}

/// One training example on the flow path.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub cond: Vec<f64>,
}

/// `t·x1 + (1−t)·x0` elementwise.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(Error::shape(x0.len(), x1.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(x0.iter().zip(x1).map(|(a, b)| t * b + (1.0 - t) * a).collect())
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Warm start at `t1 = 0` followed by one refinement at `t2`.
pub fn two_stage_sample(v: &dyn Velocity, x0: &[f64], cond: &[f64], t2: f64) -> Result<Vec<f64>> {
    if !(t2 > 0.0 && t2 < 1.0) {
        return Err(Error::Invalid(format!("t2 = {t2} outside (0, 1)")));
    }
    let x_z = single_step(v, x0, cond)?;
    let x_t: Vec<f64> = x_z
        .iter()
        .zip(x0)
        .map(|(z, a)| t2 * z + (1.0 - t2) * a)
        .collect();
    Ok(add(&v.velocity(&x_t, cond, t2)?, x0))
}

/// The first stage alone, `v(x0, T, 0) + x0`.
pub fn single_step(v: &dyn Velocity, x0: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
    Ok(add(&v.velocity(x0, cond, 0.0)?, x0))
}

/// Prior draw `x0 ~ N(0, I)` for validation/inference item `item`.
pub fn prior_sample(dim: usize, seed: u64, item: u64) -> Vec<f64> {
    let stream = NoiseStream::with_frame(seed, item);
    (0..dim)
        .map(|i| StandardNormal.sample(&mut stream.rng(Term::FlowNoise, i as u64)))
        .collect()
}

/// Outcome of the equidistant sampling-step search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub t_best: f64,
    /// `(t, mean PSNR)` for every candidate, in search order.
    pub trace: Vec<(f64, f64)>,
    pub step_s: f64,
    pub n_steps: usize,
}

/// Candidates `{s, 2s, …, ns}`.
pub fn search_candidates(s: f64, n: usize) -> Result<Vec<f64>> {
    if !(s > 0.0) || n == 0 || !(n as f64 * s < 1.0) {
        return Err(Error::Invalid(format!(
            "need 0 < s and 0 < n·s < 1, got s = {s}, n = {n}"
        )));
    }
    Ok((1..=n).map(|k| k as f64 * s).collect())
}

/// Mean PSNR (peak 1) of two-stage outputs at `t2` over `(x1, T, x0)` triples.
fn mean_psnr(v: &dyn Velocity, items: &[(&[f64], &[f64], Vec<f64>)], t2: f64) -> Result<f64> {
    let scores = items
        .par_iter()
        .map(|(x1, cond, x0)| psnr_slice(&two_stage_sample(v, x0, cond, t2)?, x1, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Searches `t2` over `{s, …, ns}` on a validation set of `(x1, T)` pairs.
///
/// Every candidate sees the same prior draws. The first strict maximizer of
/// mean PSNR wins.
pub fn sample_search(
    v: &dyn Velocity,
    validation: &[(Vec<f64>, Vec<f64>)],
    s: f64,
    n: usize,
    seed: u64,
) -> Result<SearchResult> {
    if validation.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let candidates = search_candidates(s, n)?;
    let items: Vec<(&[f64], &[f64], Vec<f64>)> = validation
        .iter()
        .enumerate()
        .map(|(i, (x1, cond))| (x1.as_slice(), cond.as_slice(), prior_sample(x1.len(), seed, i as u64)))
        .collect();
    let trace = candidates
        .iter()
        .map(|&t| Ok((t, mean_psnr(v, &items, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &(t, m) in &trace {
        if m > best.1 {
            best = (t, m);
        }
    }
    Ok(SearchResult {
        t_best: best.0,
        trace,
        step_s: s,
        n_steps: n,
    })
}

/// Restoration with a `t_best` frozen beforehand; never sees a target.
pub fn infer(v: &dyn Velocity, x0: &[f64], cond: &[f64], t_best: f64) -> Result<Vec<f64>> {
    two_stage_sample(v, x0, cond, t_best)
}

/// Oracle-assisted variant that re-searches `t2` per sample against its
/// ground truth. For reproduction studies only: it reads the answer.
pub fn infer_oracle_search(
    v: &dyn Velocity,
    x0: &[f64],
    cond: &[f64],
    target: &[f64],
    s: f64,
    n: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for t in search_candidates(s, n)? {
        let out = two_stage_sample(v, x0, cond, t)?;
        let m = psnr_slice(&out, target, 1.0)?;
        if best.as_ref().is_none_or(|b| m > b.2) {
            best = Some((out, t, m));
        }
    }
    let (out, t, _) = best.expect("at least one candidate");
    Ok((out, t))
}
