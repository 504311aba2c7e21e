//! Low-light CMOS sensor noise toolkit.
//!
//! The crate covers three stages of a low-light RAW restoration pipeline:
//!
//! * [`calibration`] estimates a per-pixel noise model ([`noisemodel::PixelParamMap`])
//!   from flat, bias and dark frame stacks loaded through [`rawio`].
//! * [`synthesis`] darkens clean frames and injects calibrated noise to build
//!   paired training data and flow conditions.
//! * [`rectflow`] trains a small conditional rectified-flow velocity field and
//!   runs the searched two-stage sampler.
//!
//! All randomness goes through [`rng::NoiseStream`], a counter-keyed generator,
//! so results never depend on thread count or evaluation order.

// `!(x > 0.0)` is used on purpose so NaN fails validation; published
// approximation coefficients are kept digit-for-digit.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod calibration;
pub mod error;
pub mod grid;
pub mod noisemodel;
pub mod quality;
pub mod rawio;
pub mod rectflow;
pub mod rng;
pub mod synthesis;
pub mod virtual_sensor;

pub use error::{Error, Result};
pub use grid::Grid;
