//! Conditional density modelling of health indices and probabilistic anomaly
//! scoring for condition monitoring.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs: file formats, the CLI and parallel orchestration
//! live in the `nominal-pipeline` crate.
//!
//! The pieces, bottom-up:
//!
//! - [`density`]: a fused mixture of affine Gaussian experts with a softmax
//!   mixing gate and a logistic behavior gate, plus priors and likelihood.
//! - [`posterior`]: an adaptive random-walk Metropolis sampler and fit
//!   diagnostics (LPPD, PSIS-LOO, credible interval coverage).
//! - [`anomaly`]: PIT values, exponentially decaying window weights, the
//!   exact CDF of a weighted sum of uniforms and the resulting anomaly score.
//! - [`detection`]: alarms with patience, pooling of several indices and
//!   validity-window precision/recall.
//! - [`selection`]: binomial coverage cost and Pareto/Cantelli model selection.
//! - [`explain`]: gate geometry and score-space maps of a fitted model.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod anomaly;
pub mod calibration;
pub mod density;
pub mod detection;
mod error;
pub mod explain;
pub mod linalg;
pub mod math;
pub mod posterior;
pub mod selection;

pub use error::{Error, Result};
