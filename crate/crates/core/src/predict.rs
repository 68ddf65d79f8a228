//! Monte-Carlo predictive distributions from repeated stochastic forward passes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::model::{MccqrModel, NetworkParams};
use crate::numerics::{Matrix, RngState};

/// Which sources of uncertainty the sampler switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMode {
    /// Random quantile level and dropout.
    #[default]
    Full,
    /// Random quantile level, dropout off.
    AleatoryOnly,
    /// Quantile level fixed at 0.5, dropout on.
    EpistemicOnly,
}

impl UncertaintyMode {
    fn random_tau(self) -> bool {
        !matches!(self, UncertaintyMode::EpistemicOnly)
    }

    fn dropout(self) -> bool {
        !matches!(self, UncertaintyMode::AleatoryOnly)
    }
}

impl FromStr for UncertaintyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "aleatory" | "aleatory-only" => Ok(Self::AleatoryOnly),
            "epistemic" | "epistemic-only" => Ok(Self::EpistemicOnly),
            other => Err(Error::invalid(format!(
                "unknown uncertainty mode '{other}' (expected full, aleatory or epistemic)"
            ))),
        }
    }
}

impl fmt::Display for UncertaintyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::AleatoryOnly => "aleatory",
            Self::EpistemicOnly => "epistemic",
        })
    }
}

/// Draws from one sample's predictive distribution with their median and
/// population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    draws: Vec<f64>,
    sorted: Vec<f64>,
    median: f64,
    std: f64,
}

impl PredictiveDistribution {
    pub fn from_draws(draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Empty(
                "predictive distribution needs at least one draw".into(),
            ));
        }
        if draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("predictive draw".into()));
        }
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = draws.iter().sum::<f64>() / n as f64;
        let std = if sorted[0] == sorted[n - 1] {
            0.0
        } else {
            (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64).sqrt()
        };
        Ok(Self {
            draws,
            sorted,
            median,
            std,
        })
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn sorted_draws(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn median(&self) -> f64 {
        self.median
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// Empirical quantile with linear interpolation between order statistics
    /// (Hyndman–Fan type 7).
    pub fn quantile(&self, p: f64) -> f64 {
        type7_quantile(&self.sorted, p)
    }

    /// Equal-tailed central interval holding `level` of the draws.
    pub fn central_interval(&self, level: f64) -> (f64, f64) {
        (
            self.quantile(0.5 * (1.0 - level)),
            self.quantile(0.5 * (1.0 + level)),
        )
    }
}

/// Type-7 quantile of an ascending slice; `p` is clamped to [0, 1].
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Bracketing knot and weight for `tau`: the value is
/// `heads[k] + w * (heads[k + 1] - heads[k])`, or `heads[k]` when `w == 0`.
#[inline]
fn bracket(taus: &[f64], tau: f64) -> (usize, f64) {
    let above = taus.partition_point(|&t| t <= tau);
    if above == 0 {
        (0, 0.0)
    } else if above == taus.len() {
        (taus.len() - 1, 0.0)
    } else {
        let k = above - 1;
        (k, (tau - taus[k]) / (taus[k + 1] - taus[k]))
    }
}

#[inline]
fn lerp(lo: f64, hi: f64, w: f64) -> f64 {
    if w == 0.0 {
        lo
    } else {
        lo + w * (hi - lo)
    }
}

/// Piecewise-linear interpolation of `(τ_k, heads_k)`; levels outside
/// `[τ_1, τ_K]` take the nearest end value.
pub fn interpolate_quantile(heads: &[f64], grid: &QuantileGrid, tau: f64) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::invalid(
            "interpolation needs at least two quantile levels",
        ));
    }
    if heads.len() != grid.len() {
        return Err(Error::shape(format!(
            "{} heads for {} quantile levels",
            heads.len(),
            grid.len()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!(
            "quantile level {tau} outside (0, 1)"
        )));
    }
    let (k, w) = bracket(grid.taus(), tau);
    Ok(if w == 0.0 {
        heads[k]
    } else {
        lerp(heads[k], heads[k + 1], w)
    })
}

/// One stochastic prediction: draws a level and a mask according to `mode`
/// and evaluates only the two heads that bracket the level.
struct Sampler<'a> {
    params: &'a NetworkParams,
    taus: &'a [f64],
    pre: Vec<f64>,
    dropout_rate: f64,
    mode: UncertaintyMode,
    // heads of the maskless pass, reused when dropout is off
    fixed_heads: Option<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a MccqrModel, x_raw: &[f64], mode: UncertaintyMode) -> Result<Self> {
        let z = model.standardizer().transform_row(x_raw)?;
        let params = model.params();
        let pre = params.pre_activation(&z)?;
        let fixed_heads = (!mode.dropout()).then(|| {
            let hidden = NetworkParams::hidden_from_pre(&pre, None, model.dropout_rate());
            params.outputs_from_hidden(&hidden)
        });
        Ok(Self {
            params,
            taus: model.grid().taus(),
            pre,
            dropout_rate: model.dropout_rate(),
            mode,
            fixed_heads,
        })
    }

    fn draw(&self, rng: &mut RngState) -> f64 {
        let tau = if self.mode.random_tau() {
            rng.next_f64()
        } else {
            0.5
        };
        let (k, w) = bracket(self.taus, tau);
        if let Some(heads) = &self.fixed_heads {
            return if w == 0.0 {
                heads[k]
            } else {
                lerp(heads[k], heads[k + 1], w)
            };
        }
        let mask = (self.dropout_rate > 0.0)
            .then(|| rng.bernoulli_mask_unchecked(self.params.hidden(), self.dropout_rate));
        let hidden = NetworkParams::hidden_from_pre(&self.pre, mask.as_deref(), self.dropout_rate);
        let lo = self.params.head(&hidden, k);
        if w == 0.0 {
            lo
        } else {
            lerp(lo, self.params.head(&hidden, k + 1), w)
        }
    }
}

/// `draws` stochastic forward passes for one raw-feature sample.
pub fn predict_distribution(
    model: &MccqrModel,
    x_raw: &[f64],
    draws: usize,
    mode: UncertaintyMode,
    rng: &mut RngState,
) -> Result<PredictiveDistribution> {
    if draws == 0 {
        return Err(Error::invalid("number of draws must be at least 1"));
    }
    if model.grid().len() < 2 {
        return Err(Error::invalid("sampling needs at least two quantile heads"));
    }
    let sampler = Sampler::new(model, x_raw, mode)?;
    let values = (0..draws).map(|_| sampler.draw(rng)).collect();
    PredictiveDistribution::from_draws(values)
}

/// Predictive distributions for every row of `x`. Row `i` uses the `i`-th
/// stream of `rng.split(n)`, so results do not depend on scheduling.
pub fn predict_batch(
    model: &MccqrModel,
    x: &Matrix,
    draws: usize,
    mode: UncertaintyMode,
    rng: &mut RngState,
) -> Result<Vec<PredictiveDistribution>> {
    if x.rows() > 0 && x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "data has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let streams = rng.split(x.rows());
    streams
        .into_par_iter()
        .enumerate()
        .map(|(i, mut s)| predict_distribution(model, x.row(i), draws, mode, &mut s))
        .collect()
}
