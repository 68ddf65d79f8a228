//! Pinball (tilted) loss and its composite form over a grid of quantile levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Strictly increasing quantile levels in (0, 1) shared by the loss and the
/// prediction heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl QuantileGrid {
    /// `τ_k = k / (K + 1)` for `k = 1..=K`.
    pub fn equally_spaced(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("quantile grid needs at least one level"));
        }
        let denom = (k + 1) as f64;
        Ok(Self {
            taus: (1..=k).map(|i| i as f64 / denom).collect(),
        })
    }

    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::invalid("quantile grid needs at least one level"));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::invalid(format!("quantile level {t} outside (0, 1)")));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "quantile levels must be strictly increasing",
            ));
        }
        Ok(Self { taus })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;

    fn try_from(taus: Vec<f64>) -> Result<Self> {
        QuantileGrid::new(taus)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(g: QuantileGrid) -> Self {
        g.taus
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "quantile level {tau} outside (0, 1)"
        )))
    }
}

/// `ρ_τ(ε) = τ·ε` for `ε ≥ 0`, `(τ − 1)·ε` otherwise.
pub fn tilted_loss(residual: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball(residual, tau))
}

/// Derivative of the tilted loss in the residual; `τ` at `ε = 0`.
pub fn tilted_loss_subgrad(residual: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_subgrad(residual, tau))
}

#[inline]
pub(crate) fn pinball(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

#[inline]
pub(crate) fn pinball_subgrad(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

fn check_shapes(y: &[f64], yhat: &Matrix, grid: &QuantileGrid) -> Result<()> {
    if yhat.rows() != y.len() || yhat.cols() != grid.len() {
        return Err(Error::shape(format!(
            "predictions are {}x{}, expected {}x{} (samples x quantiles)",
            yhat.rows(),
            yhat.cols(),
            y.len(),
            grid.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("composite loss over zero samples".into()));
    }
    Ok(())
}

/// Mean tilted loss over all samples and quantile levels. Column `k` of
/// `yhat` holds the predictions at `τ_k`.
pub fn composite_loss(y: &[f64], yhat: &Matrix, grid: &QuantileGrid) -> Result<f64> {
    check_shapes(y, yhat, grid)?;
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(t, &yt)| per_sample_loss(yt, yhat.row(t), grid.taus()))
        .sum();
    Ok(total / y.len() as f64)
}

/// Gradient of [`composite_loss`] with respect to every prediction.
pub fn composite_loss_grad(y: &[f64], yhat: &Matrix, grid: &QuantileGrid) -> Result<Matrix> {
    check_shapes(y, yhat, grid)?;
    let scale = 1.0 / (grid.len() * y.len()) as f64;
    let mut g = Matrix::zeros(y.len(), grid.len());
    for (t, &yt) in y.iter().enumerate() {
        for ((gk, &pred), &tau) in g.row_mut(t).iter_mut().zip(yhat.row(t)).zip(grid.taus()) {
            *gk = -scale * pinball_subgrad(yt - pred, tau);
        }
    }
    Ok(g)
}

/// `(1/K) Σ_k ρ_{τ_k}(y − ŷ_k)` for one sample.
#[inline]
pub(crate) fn per_sample_loss(y: f64, heads: &[f64], taus: &[f64]) -> f64 {
    let s: f64 = heads
        .iter()
        .zip(taus)
        .map(|(&p, &tau)| pinball(y - p, tau))
        .sum();
    s / taus.len() as f64
}
