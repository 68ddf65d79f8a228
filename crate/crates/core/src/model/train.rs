use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::network::{accumulate_gradients, NetworkParams, Objective, Scratch};
use super::standardize::Standardizer;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Training recipe. Defaults: 32 hidden ReLUs, 101 quantiles, 10 epochs,
/// learning rate 0.01, batch 64, dropout 0.2, Adam (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub quantiles: usize,
    pub hidden: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 64,
            dropout_rate: 0.2,
            quantiles: 101,
            hidden: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden == 0 || self.quantiles == 0 {
            return Err(Error::invalid(
                "hidden width and quantile count must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TrainedNetwork {
    pub params: NetworkParams,
    pub standardizer: Standardizer,
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam on `objective` with a fresh dropout mask per sample and a
/// reshuffle every epoch. All randomness comes from `config.seed`.
pub(crate) fn fit_network(
    x: &Matrix,
    y: &[f64],
    config: &TrainConfig,
    objective: &Objective,
) -> Result<TrainedNetwork> {
    config.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("training set has no samples".into()));
    }
    if y.len() != n {
        return Err(Error::shape(format!(
            "{n} feature rows but {} targets",
            y.len()
        )));
    }
    if n < config.batch_size {
        return Err(Error::invalid(format!(
            "{n} training samples is fewer than the batch size {}",
            config.batch_size
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target at row {i}")));
    }
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("all training targets equal {}; fitting a constant", y[0]);
    }

    let standardizer = Standardizer::fit(x)?;
    if !standardizer.dropped_columns.is_empty() {
        log::info!(
            "dropped {} zero-variance feature(s)",
            standardizer.dropped_columns.len()
        );
    }
    let z = standardizer.transform(x)?;

    let mut rng = RngState::new(config.seed);
    let mut params = NetworkParams::init(z.cols(), config.hidden, objective.outputs(), &mut rng)?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = config.adam();
    let mut grads = params.clone();
    let mut scratch = Scratch::new(&params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let dropout = config.dropout_rate > 0.0;

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let mask = dropout
                    .then(|| rng.bernoulli_mask_unchecked(config.hidden, config.dropout_rate));
                epoch_loss += accumulate_gradients(
                    &params,
                    z.row(i),
                    mask.as_deref(),
                    config.dropout_rate,
                    y[i],
                    objective,
                    &mut grads,
                    &mut scratch,
                );
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &grads, &mut adam, &adam_cfg);
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss in epoch {}",
                epoch + 1
            )));
        }
        log::debug!("epoch {}: loss {mean_loss}", epoch + 1);
        loss_trace.push(mean_loss);
    }

    Ok(TrainedNetwork {
        params,
        standardizer,
        loss_trace,
    })
}
