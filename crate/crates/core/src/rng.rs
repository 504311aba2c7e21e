//! Counter-keyed random streams.
//!
//! Every random draw in the crate is addressed by a key
//! `(global seed, term, frame index, element index)`. The key is hashed into the
//! starting state of a SplitMix64 generator, so the stream for a given pixel is
//! the same whether pixels are visited serially, in parallel, or in a different
//! order, and whether or not other noise terms are sampled at all.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies which consumer a stream belongs to. Distinct terms never share
/// a stream even under the same seed, frame and index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Term {
    Shot = 1,
    Dark = 2,
    Row = 3,
    Read = 4,
    Quant = 5,
    /// Ratio/exposure draws made by the synthesis front end.
    Synthesis = 16,
    /// Virtual-sensor ground-truth parameter draws.
    SensorTruth = 17,
    FlowInit = 32,
    FlowNoise = 33,
    FlowTime = 34,
    FlowBatch = 35,
    /// Generic stream for tests and tooling.
    Aux = 63,
}

/// A source of keyed per-element generators for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub frame: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed, frame: 0 }
    }

    pub fn with_frame(seed: u64, frame: u64) -> Self {
        NoiseStream { seed, frame }
    }

    /// Generator for element `index` of `term` in this frame.
    pub fn rng(&self, term: Term, index: u64) -> KeyedRng {
        KeyedRng::from_key(self.seed, term as u64, self.frame, index)
    }
}

/// SplitMix64 generator started from a hashed key.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn from_key(seed: u64, term: u64, frame: u64, index: u64) -> Self {
        let mut h = mix64(seed.wrapping_add(GOLDEN));
        h = mix64(h ^ term.wrapping_mul(0xd6e8_feb8_6659_fd93));
        h = mix64(h ^ frame.wrapping_mul(0xa076_1d64_78bd_642f));
        h = mix64(h ^ index.wrapping_mul(0xe703_7ed1_a0b4_28db));
        KeyedRng { state: h }
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for KeyedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
