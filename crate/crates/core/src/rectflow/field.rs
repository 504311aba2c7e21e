//! Fully connected conditional velocity field with hand-written backprop.
//!
//! Layout: `h1 = act(W1·[x; T] + b1)`, `h2 = act(W2·[h1; emb(t)] + b2)`,
//! `v = W3·h2 + b3`, where `emb(t)` is a fixed sinusoidal embedding. The head
//! (`W3`, `b3`) is zero-initialized so a fresh field predicts zero velocity.

use std::io::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{NoiseStream, Term};

use super::Velocity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Length of the state vector `x` (and of the output).
    pub dim: usize,
    /// Length of the condition vector `T`.
    pub cond_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Width of the sinusoidal time embedding (even).
    pub time_embed: usize,
    pub activation: Activation,
    /// Side of the square patch the field was built for, if any.
    #[serde(default)]
    pub patch: Option<usize>,
}

impl Architecture {
    /// Default field for single-channel `patch × patch` inputs.
    pub fn for_patch(patch: usize) -> Self {
        Architecture {
            dim: patch * patch,
            cond_dim: patch * patch,
            hidden1: 128,
            hidden2: 128,
            time_embed: 16,
            activation: Activation::Silu,
            patch: Some(patch),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Invalid(format!("degenerate architecture {self:?}")));
        }
        if !self.time_embed.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "time embedding width {} must be even",
                self.time_embed
            )));
        }
        Ok(())
    }

    fn in1(&self) -> usize {
        self.dim + self.cond_dim
    }

    fn in2(&self) -> usize {
        self.hidden1 + self.time_embed
    }

    /// Offsets of `[W1, b1, W2, b2, W3, b3]` and the total length.
    fn offsets(&self) -> [usize; 7] {
        let w1 = 0;
        let b1 = w1 + self.hidden1 * self.in1();
        let w2 = b1 + self.hidden1;
        let b2 = w2 + self.hidden2 * self.in2();
        let w3 = b2 + self.hidden2;
        let b3 = w3 + self.dim * self.hidden2;
        let end = b3 + self.dim;
        [w1, b1, w2, b2, w3, b3, end]
    }

    pub fn weight_count(&self) -> usize {
        self.offsets()[6]
    }
}

/// `[sin(ω_i t)…, cos(ω_i t)…]` with `ω_i = π·2^i`.
pub fn time_embedding(t: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = Vec::with_capacity(width);
    out.extend((0..half).map(|i| (std::f64::consts::PI * f64::from(1u32 << i) * t).sin()));
    out.extend((0..half).map(|i| (std::f64::consts::PI * f64::from(1u32 << i) * t).cos()));
    out
}

/// Parametric velocity field `v_θ(x, T, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub arch: Architecture,
    pub weights: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    input1: Vec<f64>,
    z1: Vec<f64>,
    input2: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n_in = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(o, &bias)| {
        let row = &w[o * n_in..(o + 1) * n_in];
        bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

impl VelocityField {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.weight_count();
        Ok(VelocityField {
            arch,
            weights: vec![0.0; n],
        })
    }

    /// Glorot-uniform hidden layers, zero biases, zero head.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut field = Self::zeros(arch)?;
        let a = &field.arch;
        let [w1, b1, w2, b2, ..] = a.offsets();
        let mut rng = NoiseStream::new(seed).rng(Term::FlowInit, 0);
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            slice.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
        };
        let (in1, h1, in2, h2) = (a.in1(), a.hidden1, a.in2(), a.hidden2);
        fill(&mut field.weights[w1..b1], in1, h1);
        fill(&mut field.weights[w2..b2], in2, h2);
        Ok(field)
    }

    fn check_inputs(&self, x: &[f64], cond: &[f64]) -> Result<()> {
        if x.len() != self.arch.dim {
            return Err(Error::shape(self.arch.dim, x.len()));
        }
        if cond.len() != self.arch.cond_dim {
            return Err(Error::shape(self.arch.cond_dim, cond.len()));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], cond: &[f64], t: f64) -> (Vec<f64>, Cache) {
        let a = &self.arch;
        let [w1, b1, w2, b2, w3, b3, end] = a.offsets();
        let w = &self.weights;
        let mut input1 = Vec::with_capacity(a.in1());
        input1.extend_from_slice(x);
        input1.extend_from_slice(cond);
        let mut z1 = Vec::new();
        matvec(&w[w1..b1], &w[b1..w2], &input1, &mut z1);
        let mut input2: Vec<f64> = z1.iter().map(|&z| a.activation.apply(z)).collect();
        input2.extend(time_embedding(t, a.time_embed));
        let mut z2 = Vec::new();
        matvec(&w[w2..b2], &w[b2..w3], &input2, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&z| a.activation.apply(z)).collect();
        let mut out = Vec::new();
        matvec(&w[w3..b3], &w[b3..end], &h2, &mut out);
        (
            out,
            Cache {
                input1,
                z1,
                input2,
                z2,
                h2,
            },
        )
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂v`.
    fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        let [w1, b1, w2, b2, w3, b3, _] = a.offsets();
        let w = &self.weights;
        let (h1n, h2n, in1, in2) = (a.hidden1, a.hidden2, a.in1(), a.in2());

        let mut d_h2 = vec![0.0; h2n];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b3 + o] += g;
            let row = w3 + o * h2n;
            for j in 0..h2n {
                grad[row + j] += g * cache.h2[j];
                d_h2[j] += g * w[row + j];
            }
        }
        let d_z2: Vec<f64> = d_h2
            .iter()
            .zip(&cache.z2)
            .map(|(g, &z)| g * a.activation.derivative(z))
            .collect();
        let mut d_h1 = vec![0.0; h1n];
        for (o, &g) in d_z2.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + o] += g;
            let row = w2 + o * in2;
            for j in 0..in2 {
                grad[row + j] += g * cache.input2[j];
            }
            // the time embedding is fixed; only the h1 part propagates
            for j in 0..h1n {
                d_h1[j] += g * w[row + j];
            }
        }
        for (o, (&g, &z)) in d_h1.iter().zip(&cache.z1).enumerate() {
            let g = g * a.activation.derivative(z);
            if g == 0.0 {
                continue;
            }
            grad[b1 + o] += g;
            let row = w1 + o * in1;
            for j in 0..in1 {
                grad[row + j] += g * cache.input1[j];
            }
        }
    }

    /// Forward pass; `x` and `cond` must match the architecture.
    pub fn evaluate(&self, x: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_inputs(x, cond)?;
        Ok(self.forward(x, cond, t).0)
    }

    /// L1 flow-matching loss of one sample and its contribution to the
    /// gradient, both scaled by `scale` (1 / total element count).
    pub(crate) fn sample_loss_grad(
        &self,
        sample: &super::FlowSample,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let xt = super::interpolate(&sample.x0, &sample.x1, sample.t)?;
        self.check_inputs(&xt, &sample.cond)?;
        let (v, cache) = self.forward(&xt, &sample.cond, sample.t);
        let mut loss = 0.0;
        let d_out: Vec<f64> = v
            .iter()
            .zip(sample.x1.iter().zip(&sample.x0))
            .map(|(&vi, (&x1, &x0))| {
                // residual of the target velocity x1 − x0; subgradient 0 at 0
                let r = x1 - x0 - vi;
                loss += r.abs();
                if r > 0.0 {
                    -scale
                } else if r < 0.0 {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        self.backward(&cache, &d_out, grad);
        Ok(loss * scale)
    }
}

impl Velocity for VelocityField {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn velocity(&self, x: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>> {
        self.evaluate(x, cond, t)
    }
}

const RFW_MAGIC: &[u8] = b"RFW1\n";

/// `RFW1\n`, one line of JSON architecture, then f32 little-endian weights.
pub fn encode_model(field: &VelocityField) -> Vec<u8> {
    let header = serde_json::to_vec(&field.arch).expect("architecture serializes");
    let mut out = Vec::with_capacity(RFW_MAGIC.len() + header.len() + 1 + field.weights.len() * 4);
    out.extend_from_slice(RFW_MAGIC);
    out.extend_from_slice(&header);
    out.push(b'\n');
    for &w in &field.weights {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<VelocityField> {
    let bad = |m: String| Error::Invalid(format!("model file: {m}"));
    let rest = bytes
        .strip_prefix(RFW_MAGIC)
        .ok_or_else(|| bad("missing RFW1 magic".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header".into()))?;
    let arch: Architecture =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(e.to_string()))?;
    arch.validate()?;
    let payload = &rest[nl + 1..];
    if payload.len() != arch.weight_count() * 4 {
        return Err(bad(format!(
            "{} weight bytes, expected {}",
            payload.len(),
            arch.weight_count() * 4
        )));
    }
    let weights = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(VelocityField { arch, weights })
}

pub fn save_model(field: &VelocityField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_model(field)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VelocityField> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            dim: 2,
            cond_dim: 2,
            hidden1: 4,
            hidden2: 6,
            time_embed: 6,
            activation: Activation::Tanh,
            patch: None,
        }
    }

    #[test]
    fn weight_count_of_tiny_field_is_100() {
        assert_eq!(tiny().weight_count(), 100);
    }

    #[test]
    fn fresh_field_predicts_zero() {
        let f = VelocityField::init(Architecture::for_patch(8), 3).unwrap();
        assert!(f.weights.iter().any(|&w| w != 0.0));
        let v = f.evaluate(&[0.3; 64], &[0.7; 64], 0.4).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn evaluate_is_deterministic_and_checks_shapes() {
        let mut f = VelocityField::init(tiny(), 1).unwrap();
        f.weights.iter_mut().enumerate().for_each(|(i, w)| *w += 0.01 * i as f64);
        let a = f.evaluate(&[0.1, -0.2], &[0.5, 0.5], 0.3).unwrap();
        let b = f.evaluate(&[0.1, -0.2], &[0.5, 0.5], 0.3).unwrap();
        assert_eq!(a, b);
        assert!(f.evaluate(&[0.1], &[0.5, 0.5], 0.3).is_err());
        assert!(f.evaluate(&[0.1, 0.2], &[0.5], 0.3).is_err());
    }

    #[test]
    fn odd_embedding_rejected() {
        let mut a = tiny();
        a.time_embed = 5;
        assert!(VelocityField::zeros(a).is_err());
    }

    #[test]
    fn embedding_shape() {
        let e = time_embedding(0.0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn model_round_trip_is_f32_exact() {
        let f = VelocityField::init(tiny(), 9).unwrap();
        let bytes = encode_model(&f);
        let g = decode_model(&bytes).unwrap();
        assert_eq!(g.arch, f.arch);
        for (a, b) in f.weights.iter().zip(&g.weights) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(encode_model(&g), bytes);
        assert!(decode_model(&bytes[..bytes.len() - 2]).is_err());
        assert!(decode_model(b"RFW2\n{}\n").is_err());
    }
}
