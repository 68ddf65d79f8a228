//! Monte-Carlo dropout composite quantile regression (MCCQR).
//!
//! A single-hidden-layer ReLU network is trained on the composite tilted loss
//! over a grid of quantile levels while dropout is active. At prediction time
//! dropout stays on and the quantile level is drawn at random, so repeated
//! forward passes sample a predictive distribution that carries both aleatory
//! (quantile spread) and epistemic (dropout) uncertainty.
//!
//! Around the model sit the evaluation tools: interval coverage curves,
//! uncertainty-scaled brain-age gaps with OLS association tests, occlusion
//! mapping, synthetic data with known conditional quantiles, and LASSO / plain
//! network baselines.

#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod brainage;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod occlusion;
pub mod predict;
pub mod synth;

pub use error::{Error, Result};
pub use loss::QuantileGrid;
pub use model::{MccqrModel, TrainConfig};
pub use numerics::{Matrix, RngState};
pub use predict::{PredictiveDistribution, UncertaintyMode};
