use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-feature z-scoring fitted on training data. Constant columns are dropped
/// and their raw indices recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub dropped_columns: Vec<usize>,
    kept: Vec<usize>,
    n_raw: usize,
}

impl Standardizer {
    /// Population mean and standard deviation of every non-constant column.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("cannot standardize zero samples".into()));
        }
        let n = x.rows() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut dropped = Vec::new();
        for c in 0..x.cols() {
            let col = x.column(c);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("feature column {c}")));
            }
            if col.iter().all(|&v| v == col[0]) {
                dropped.push(c);
                continue;
            }
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            stds.push(var.sqrt());
        }
        Self::from_stats(means, stds, dropped)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_stats(vec![0.0; d], vec![1.0; d], Vec::new()).expect("valid identity stats")
    }

    /// Rebuilds a scaler from stored statistics (kept columns are the raw
    /// indices not listed in `dropped_columns`).
    pub fn from_stats(
        means: Vec<f64>,
        stds: Vec<f64>,
        mut dropped_columns: Vec<usize>,
    ) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(Error::shape(format!(
                "{} means but {} standard deviations",
                means.len(),
                stds.len()
            )));
        }
        if let Some(s) = stds.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(format!(
                "standard deviation {s} must be positive"
            )));
        }
        dropped_columns.sort_unstable();
        dropped_columns.dedup();
        let n_raw = means.len() + dropped_columns.len();
        if dropped_columns.last().is_some_and(|&c| c >= n_raw) {
            return Err(Error::invalid("dropped column index beyond feature count"));
        }
        let kept = (0..n_raw)
            .filter(|c| dropped_columns.binary_search(c).is_err())
            .collect();
        Ok(Self {
            means,
            stds,
            dropped_columns,
            kept,
            n_raw,
        })
    }

    /// Raw feature count the scaler was fitted on.
    pub fn raw_dim(&self) -> usize {
        self.n_raw
    }

    /// Feature count after dropping constant columns.
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.n_raw {
            return Err(Error::shape(format!(
                "sample has {} features, model was fitted on {}",
                raw.len(),
                self.n_raw
            )));
        }
        Ok(self
            .kept
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&c, (m, s))| (raw[c] - m) / s)
            .collect())
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(x.rows() * self.dim());
        for r in x.iter_rows() {
            data.extend(self.transform_row(r)?);
        }
        Matrix::from_vec(x.rows(), self.dim(), data)
    }
}
