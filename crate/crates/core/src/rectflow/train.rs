use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{NoiseStream, Term};

use super::{FlowSample, VelocityField};

/// Mean L1 flow-matching loss over a batch and its gradient.
///
/// Per-sample gradients are reduced in batch order, so the result does not
/// depend on the thread count.
pub fn loss_and_grad(v: &VelocityField, batch: &[FlowSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let n_elems: usize = batch.iter().map(|s| s.x1.len()).sum();
    let scale = 1.0 / n_elems as f64;
    let per_sample = batch
        .par_iter()
        .map(|s| {
            if s.x0.len() != s.x1.len() {
                return Err(Error::shape(s.x1.len(), s.x0.len()));
            }
            let mut g = vec![0.0; v.weights.len()];
            let l = v.sample_loss_grad(s, scale, &mut g)?;
            Ok((l, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; v.weights.len()];
    let mut loss = 0.0;
    for (l, g) in per_sample {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 12,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub field: VelocityField,
    /// Batch loss before each update.
    pub loss_curve: Vec<f64>,
}

/// Draws the batch for one optimizer step: dataset indices, `x0 ~ N(0, I)` and
/// `t ~ U(0, 1)`, all keyed by `(seed, step, slot)`.
fn draw_batch(dataset: &[(Vec<f64>, Vec<f64>)], batch: usize, seed: u64, step: u64) -> Vec<FlowSample> {
    let stream = NoiseStream::with_frame(seed, step);
    (0..batch as u64)
        .map(|slot| {
            let idx = stream.rng(Term::FlowBatch, slot).random_range(0..dataset.len());
            let t = stream.rng(Term::FlowTime, slot).uniform_open();
            let (x1, cond) = &dataset[idx];
            let mut rng = stream.rng(Term::FlowNoise, slot);
            let x0 = (0..x1.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            FlowSample {
                x0,
                x1: x1.clone(),
                t,
                cond: cond.clone(),
            }
        })
        .collect()
}

/// Adam on the L1 flow objective over `(x1, T)` pairs.
pub fn train(
    field: VelocityField,
    dataset: &[(Vec<f64>, Vec<f64>)],
    opt: &AdamConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if opt.batch == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut field = field;
    let n = field.weights.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut loss_curve = Vec::with_capacity(opt.steps);
    for step in 0..opt.steps {
        let batch = draw_batch(dataset, opt.batch, seed, step as u64);
        let (loss, grad) = loss_and_grad(&field, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "training diverged at step {step} (loss {loss})"
            )));
        }
        loss_curve.push(loss);
        let k = (step + 1) as i32;
        let bc1 = 1.0 - opt.beta1.powi(k);
        let bc2 = 1.0 - opt.beta2.powi(k);
        for i in 0..n {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
            let update = opt.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + opt.eps);
            field.weights[i] -= update;
        }
        if field.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical(format!("non-finite weights after step {step}")));
        }
    }
    Ok(TrainOutcome { field, loss_curve })
}
