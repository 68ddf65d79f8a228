//! Comparators: LASSO by cyclic coordinate descent and a plain network with
//! the same architecture trained on absolute error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_network, NetworkParams, Objective, Standardizer, TrainConfig};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iters: 1000,
            tol: 1e-7,
        }
    }
}

/// Linear model on standardized features. `coefficients` has one entry per
/// kept (non-constant) feature; `raw_coefficients` maps back to input space.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// Objective value after each full sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// `1/(2N)·‖r‖² + λ‖β‖₁`.
fn objective(residual: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = residual.len() as f64;
    residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * n)
        + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Minimizes `1/(2N)·RSS + λ‖β‖₁` over standardized features with an
/// unpenalized intercept. Stops when no coefficient moves more than `tol`
/// in a sweep, or after `max_iters` sweeps.
pub fn lasso_fit(x: &Matrix, y: &[f64], config: &LassoConfig) -> Result<LassoModel> {
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be non-negative, got {}",
            config.lambda
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::shape(format!(
            "{} rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target at row {i}")));
    }
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.transform(x)?;
    let (n, p) = z.shape();
    let nf = n as f64;
    let intercept = y.iter().sum::<f64>() / nf;
    let cols: Vec<Vec<f64>> = (0..p).map(|j| z.column(j)).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();
    let mut beta = vec![0.0; p];
    let mut residual: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let col = &cols[j];
            let rho = col.iter().zip(&residual).map(|(a, r)| a * r).sum::<f64>() / nf
                + beta[j] * norms[j];
            let new = soft_threshold(rho, config.lambda) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, a) in residual.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        trace.push(objective(&residual, &beta, config.lambda));
        if max_change < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso did not converge in {} sweeps", config.max_iters);
    }
    Ok(LassoModel {
        coefficients: beta,
        intercept,
        lambda: config.lambda,
        standardizer,
        objective_trace: trace,
        converged,
    })
}

impl LassoModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let z = self.standardizer.transform_row(x)?;
        Ok(self.intercept
            + z.iter()
                .zip(&self.coefficients)
                .map(|(a, b)| a * b)
                .sum::<f64>())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    /// Coefficients and intercept expressed on the raw feature scale; dropped
    /// constant columns get 0.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let mut raw = vec![0.0; s.raw_dim()];
        let mut intercept = self.intercept;
        let kept = (0..s.raw_dim()).filter(|j| !s.dropped_columns.contains(j));
        for ((j, b), (m, sd)) in kept
            .zip(&self.coefficients)
            .zip(s.means.iter().zip(&s.stds))
        {
            raw[j] = b / sd;
            intercept -= b * m / sd;
        }
        (raw, intercept)
    }
}

/// Same network as MCCQR with a single head trained on absolute error;
/// predictions are one maskless forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub params: NetworkParams,
    pub standardizer: Standardizer,
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

impl AnnModel {
    pub fn train(x: &Matrix, y: &[f64], config: &TrainConfig) -> Result<Self> {
        let fitted = fit_network(x, y, config, &Objective::AbsoluteError)?;
        let mut config = config.clone();
        config.quantiles = 1;
        Ok(Self {
            params: fitted.params,
            standardizer: fitted.standardizer,
            config,
            loss_trace: fitted.loss_trace,
        })
    }

    pub fn from_parts(
        params: NetworkParams,
        standardizer: Standardizer,
        mut config: TrainConfig,
        loss_trace: Vec<f64>,
    ) -> Result<Self> {
        if params.outputs() != 1 {
            return Err(Error::shape(format!(
                "ANN needs one output head, got {}",
                params.outputs()
            )));
        }
        if params.input_dim() != standardizer.dim() {
            return Err(Error::shape(format!(
                "network takes {} inputs but the scaler produces {}",
                params.input_dim(),
                standardizer.dim()
            )));
        }
        config.hidden = params.hidden();
        config.quantiles = 1;
        Ok(Self {
            params,
            standardizer,
            config,
            loss_trace,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let z = self.standardizer.transform_row(x)?;
        Ok(self.params.forward(&z, None, 0.0)?[0])
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }
}
