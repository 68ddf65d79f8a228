//! JSON model files. Every document carries `model_type` (mccqr, ann, lasso)
//! and `format_version`; floats round-trip exactly.

use serde::{Deserialize, Serialize};

use crate::baselines::{AnnModel, LassoModel};
use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::model::{MccqrModel, NetworkParams, Standardizer, TrainConfig};
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StandardizationDoc {
    means: Vec<f64>,
    stds: Vec<f64>,
    dropped_columns: Vec<usize>,
}

impl From<&Standardizer> for StandardizationDoc {
    fn from(s: &Standardizer) -> Self {
        Self {
            means: s.means.clone(),
            stds: s.stds.clone(),
            dropped_columns: s.dropped_columns.clone(),
        }
    }
}

impl StandardizationDoc {
    fn build(self) -> Result<Standardizer> {
        Standardizer::from_stats(self.means, self.stds, self.dropped_columns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct NetworkDoc {
    format_version: u32,
    d: usize,
    H: usize,
    K: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    taus: Vec<f64>,
    dropout_rate: f64,
    standardization: StandardizationDoc,
    W1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    W2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    train_meta: TrainMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LassoDoc {
    format_version: u32,
    d: usize,
    lambda: f64,
    intercept: f64,
    coefficients: Vec<f64>,
    standardization: StandardizationDoc,
    objective_trace: Vec<f64>,
    converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
enum Document {
    Mccqr(NetworkDoc),
    Ann(NetworkDoc),
    Lasso(LassoDoc),
}

/// Any model the toolkit can write to disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Mccqr(MccqrModel),
    Ann(AnnModel),
    Lasso(LassoModel),
}

impl SavedModel {
    pub fn model_type(&self) -> &'static str {
        match self {
            SavedModel::Mccqr(_) => "mccqr",
            SavedModel::Ann(_) => "ann",
            SavedModel::Lasso(_) => "lasso",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            SavedModel::Mccqr(m) => Document::Mccqr(network_doc(
                m.params(),
                m.standardizer(),
                m.grid().taus().to_vec(),
                m.config(),
                m.loss_trace(),
            )),
            SavedModel::Ann(m) => Document::Ann(network_doc(
                &m.params,
                &m.standardizer,
                Vec::new(),
                &m.config,
                &m.loss_trace,
            )),
            SavedModel::Lasso(m) => Document::Lasso(LassoDoc {
                format_version: FORMAT_VERSION,
                d: m.standardizer.raw_dim(),
                lambda: m.lambda,
                intercept: m.intercept,
                coefficients: m.coefficients.clone(),
                standardization: (&m.standardizer).into(),
                objective_trace: m.objective_trace.clone(),
                converged: m.converged,
            }),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        match doc {
            Document::Mccqr(d) => {
                check_version(d.format_version)?;
                let grid = QuantileGrid::new(d.taus.clone())?;
                let (params, scaler, config, trace) = network_parts(d)?;
                Ok(SavedModel::Mccqr(MccqrModel::from_parts(
                    params, grid, scaler, config, trace,
                )?))
            }
            Document::Ann(d) => {
                check_version(d.format_version)?;
                let (params, scaler, config, trace) = network_parts(d)?;
                Ok(SavedModel::Ann(AnnModel::from_parts(
                    params, scaler, config, trace,
                )?))
            }
            Document::Lasso(d) => {
                check_version(d.format_version)?;
                let standardizer = d.standardization.build()?;
                check_dim(d.d, &standardizer)?;
                if d.coefficients.len() != standardizer.dim() {
                    return Err(Error::Format(format!(
                        "{} coefficients for {} standardized features",
                        d.coefficients.len(),
                        standardizer.dim()
                    )));
                }
                Ok(SavedModel::Lasso(LassoModel {
                    coefficients: d.coefficients,
                    intercept: d.intercept,
                    lambda: d.lambda,
                    standardizer,
                    objective_trace: d.objective_trace,
                    converged: d.converged,
                }))
            }
        }
    }

    pub fn into_mccqr(self) -> Result<MccqrModel> {
        match self {
            SavedModel::Mccqr(m) => Ok(m),
            other => Err(Error::Unsupported(format!(
                "expected an mccqr model, file holds {}",
                other.model_type()
            ))),
        }
    }

    /// Point prediction for one raw sample: the deterministic median head for
    /// MCCQR, the single output for the baselines.
    pub fn predict_point(&self, x: &[f64]) -> Result<f64> {
        match self {
            SavedModel::Mccqr(m) => {
                let heads = m.heads(x)?;
                crate::predict::interpolate_quantile(&heads, m.grid(), 0.5)
            }
            SavedModel::Ann(m) => m.predict_row(x),
            SavedModel::Lasso(m) => m.predict_row(x),
        }
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {v} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn check_dim(d: usize, s: &Standardizer) -> Result<()> {
    if d != s.raw_dim() {
        return Err(Error::Format(format!(
            "d = {d} but the standardization covers {} features",
            s.raw_dim()
        )));
    }
    Ok(())
}

fn network_doc(
    p: &NetworkParams,
    s: &Standardizer,
    taus: Vec<f64>,
    config: &TrainConfig,
    trace: &[f64],
) -> NetworkDoc {
    NetworkDoc {
        format_version: FORMAT_VERSION,
        d: s.raw_dim(),
        H: p.hidden(),
        K: p.outputs(),
        taus,
        dropout_rate: config.dropout_rate,
        standardization: s.into(),
        W1: p.w1.to_rows(),
        b1: p.b1.clone(),
        W2: p.w2.to_rows(),
        b2: p.b2.clone(),
        train_meta: TrainMeta {
            config: config.clone(),
            loss_trace: trace.to_vec(),
        },
    }
}

fn network_parts(d: NetworkDoc) -> Result<(NetworkParams, Standardizer, TrainConfig, Vec<f64>)> {
    let standardizer = d.standardization.build()?;
    check_dim(d.d, &standardizer)?;
    let w1 = Matrix::from_rows(&d.W1)?;
    let w2 = Matrix::from_rows(&d.W2)?;
    let params = NetworkParams::from_parts(w1, d.b1, w2, d.b2)?;
    if params.hidden() != d.H || params.outputs() != d.K {
        return Err(Error::Format(format!(
            "declared H={} K={} but weights are {}x{} / {}x{}",
            d.H,
            d.K,
            params.w1.rows(),
            params.w1.cols(),
            params.w2.rows(),
            params.w2.cols()
        )));
    }
    let mut config = d.train_meta.config;
    config.dropout_rate = d.dropout_rate;
    Ok((params, standardizer, config, d.train_meta.loss_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{lasso_fit, LassoConfig};
    use crate::numerics::RngState;

    fn data(n: usize, d: usize) -> (Matrix, Vec<f64>) {
        let mut rng = RngState::new(5);
        let x = Matrix::from_vec(n, d, rng.normal(n * d)).unwrap();
        let y = (0..n).map(|i| x.get(i, 0) * 0.7 + 1.0 / 3.0).collect();
        (x, y)
    }

    #[test]
    fn mccqr_round_trip_is_exact() {
        let (x, y) = data(128, 3);
        let cfg = TrainConfig {
            epochs: 2,
            quantiles: 9,
            hidden: 5,
            ..TrainConfig::default()
        };
        let model = MccqrModel::train(&x, &y, &cfg).unwrap();
        let saved = SavedModel::Mccqr(model.clone());
        let text = saved.to_json().unwrap();
        assert!(text.contains("\"model_type\": \"mccqr\""));
        let back = SavedModel::from_json(&text).unwrap();
        assert_eq!(back, saved);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.into_mccqr().unwrap(), model);
    }

    #[test]
    fn baselines_round_trip() {
        let (x, y) = data(128, 3);
        let lasso = SavedModel::Lasso(
            lasso_fit(
                &x,
                &y,
                &LassoConfig {
                    lambda: 0.01,
                    ..LassoConfig::default()
                },
            )
            .unwrap(),
        );
        assert_eq!(
            SavedModel::from_json(&lasso.to_json().unwrap()).unwrap(),
            lasso
        );
        let cfg = TrainConfig {
            epochs: 1,
            hidden: 4,
            ..TrainConfig::default()
        };
        let ann = SavedModel::Ann(AnnModel::train(&x, &y, &cfg).unwrap());
        let back = SavedModel::from_json(&ann.to_json().unwrap()).unwrap();
        assert_eq!(back, ann);
        assert!(back.into_mccqr().is_err());
        assert_eq!(
            lasso.predict_point(x.row(0)).unwrap(),
            SavedModel::from_json(&lasso.to_json().unwrap())
                .unwrap()
                .predict_point(x.row(0))
                .unwrap()
        );
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(SavedModel::from_json("{}").is_err());
        assert!(SavedModel::from_json("{\"model_type\": \"svm\"}").is_err());
        let (x, y) = data(128, 2);
        let lasso = SavedModel::Lasso(lasso_fit(&x, &y, &LassoConfig::default()).unwrap());
        let text = lasso
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            SavedModel::from_json(&text),
            Err(Error::Format(_))
        ));
    }
}
