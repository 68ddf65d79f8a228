//! The composite-quantile network: one hidden ReLU layer shared by `K`
//! quantile heads, trained with dropout and Adam.

mod adam;
mod network;
mod standardize;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{backprop, param_count, NetworkParams, Objective};
pub use standardize::Standardizer;
pub use train::TrainConfig;

pub(crate) use train::fit_network;

use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::numerics::Matrix;

/// A trained (or hand-assembled) MCCQR network together with its feature
/// scaler and quantile grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MccqrModel {
    params: NetworkParams,
    grid: QuantileGrid,
    config: TrainConfig,
    standardizer: Standardizer,
    loss_trace: Vec<f64>,
}

impl MccqrModel {
    /// Fits the scaler on `x`, then trains on the composite tilted loss over
    /// `config.quantiles` equally spaced levels.
    pub fn train(x: &Matrix, y: &[f64], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let grid = QuantileGrid::equally_spaced(config.quantiles)?;
        let fitted = fit_network(x, y, config, &Objective::Composite(grid.clone()))?;
        Ok(Self {
            params: fitted.params,
            grid,
            config: config.clone(),
            standardizer: fitted.standardizer,
            loss_trace: fitted.loss_trace,
        })
    }

    /// Assembles a model from explicit parts, e.g. a deserialized file or a
    /// hand-built test network. `config.hidden` and `config.quantiles` are
    /// overwritten with the parameter shapes.
    pub fn from_parts(
        params: NetworkParams,
        grid: QuantileGrid,
        standardizer: Standardizer,
        mut config: TrainConfig,
        loss_trace: Vec<f64>,
    ) -> Result<Self> {
        if params.outputs() != grid.len() {
            return Err(Error::shape(format!(
                "{} output heads but {} quantile levels",
                params.outputs(),
                grid.len()
            )));
        }
        if params.input_dim() != standardizer.dim() {
            return Err(Error::shape(format!(
                "network takes {} inputs but the scaler produces {}",
                params.input_dim(),
                standardizer.dim()
            )));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::invalid("dropout rate outside [0, 1)"));
        }
        config.hidden = params.hidden();
        config.quantiles = params.outputs();
        Ok(Self {
            params,
            grid,
            config,
            standardizer,
            loss_trace,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn dropout_rate(&self) -> f64 {
        self.config.dropout_rate
    }

    /// Raw feature count expected by [`MccqrModel::heads`] and the predictors.
    pub fn input_dim(&self) -> usize {
        self.standardizer.raw_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// All quantile heads from a deterministic pass (no dropout) on a raw sample.
    pub fn heads(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        let z = self.standardizer.transform_row(x_raw)?;
        self.params.forward(&z, None, self.dropout_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn linear_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = RngState::new(seed);
        let x = rng.uniform(n);
        let eps = rng.normal(n);
        let y = x
            .iter()
            .zip(&eps)
            .map(|(x, e)| 1.0 + 2.0 * x + 0.3 * e)
            .collect();
        (Matrix::from_vec(n, 1, x).unwrap(), y)
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            quantiles: 11,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_target_is_fitted() {
        let mut rng = RngState::new(1);
        let x = Matrix::from_vec(640, 2, rng.normal(1280)).unwrap();
        for c in [0.0, 3.0, -12.5] {
            let y = vec![c; 640];
            let cfg = TrainConfig {
                epochs: 40,
                ..small_config(2)
            };
            let m = MccqrModel::train(&x, &y, &cfg).unwrap();
            // the median head is tight; outer heads keep some spread because
            // the training passes see dropout noise around the constant
            for r in 0..50 {
                let h = m.heads(x.row(r)).unwrap();
                assert!(
                    (h[5] - c).abs() < 0.05 * (1.0 + c.abs()),
                    "c={c}: median head {}",
                    h[5]
                );
                for v in h {
                    assert!((v - c).abs() < 0.3 * (1.0 + c.abs()), "c={c}: head {v}");
                }
            }
        }
    }

    #[test]
    fn loss_decreases() {
        let (x, y) = linear_data(2000, 3);
        let m = MccqrModel::train(&x, &y, &small_config(4)).unwrap();
        let t = m.loss_trace();
        assert_eq!(t.len(), 10);
        assert!(t[9] < t[0], "{t:?}");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = linear_data(500, 5);
        let a = MccqrModel::train(&x, &y, &small_config(6)).unwrap();
        let b = MccqrModel::train(&x, &y, &small_config(6)).unwrap();
        assert_eq!(a, b);
        let c = MccqrModel::train(&x, &y, &small_config(7)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, mut y) = linear_data(100, 1);
        assert!(MccqrModel::train(&Matrix::zeros(0, 1), &[], &small_config(0)).is_err());
        let big_batch = TrainConfig {
            batch_size: 200,
            ..small_config(0)
        };
        assert!(MccqrModel::train(&x, &y, &big_batch).is_err());
        y[3] = f64::INFINITY;
        assert!(MccqrModel::train(&x, &y, &small_config(0)).is_err());
        let bad_dropout = TrainConfig {
            dropout_rate: 1.0,
            ..small_config(0)
        };
        assert!(bad_dropout.validate().is_err());
    }

    #[test]
    fn default_architecture_count() {
        let p = NetworkParams::zeros(39_573, 32, 101);
        assert_eq!(p.param_count(), 1_269_701);
    }
}
