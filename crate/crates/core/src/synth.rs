//! Synthetic regression data with known conditional quantiles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::normal_quantile;
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `x ~ U(0,2)`, `y = 1 + 2x + (a + b x) ε`.
    LinearHetero,
    /// `x ~ U(0,2)`, `y = sin 2x + (a + b x) ε`.
    SineHetero,
    /// `age ~ U(20,72)`, features a noisy smooth projection of age, `y = age`.
    AgeLike,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::LinearHetero => "linear-hetero",
            Family::SineHetero => "sine-hetero",
            Family::AgeLike => "age-like",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "linear-hetero" | "linearhetero" => Ok(Family::LinearHetero),
            "sine-hetero" | "sinehetero" => Ok(Family::SineHetero),
            "age-like" | "agelike" => Ok(Family::AgeLike),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected linear-hetero, sine-hetero or age-like)"
            ))),
        }
    }
}

pub const AGE_RANGE: (f64, f64) = (20.0, 72.0);

/// Generator settings; doubles as the oracle description written next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Noise standard deviation at `x = 0`.
    pub noise_base: f64,
    /// Increase of the noise standard deviation per unit of `x`.
    pub noise_slope: f64,
    /// Standard deviation of the additive noise on age-like features.
    pub feature_noise: f64,
}

impl SyntheticSpec {
    pub fn new(family: Family, n: usize, d: usize, seed: u64) -> Self {
        let (noise_base, noise_slope) = match family {
            Family::LinearHetero => (0.5, 0.4),
            Family::SineHetero => (0.3, 0.2),
            Family::AgeLike => (0.0, 0.0),
        };
        Self {
            family,
            n,
            d,
            seed,
            noise_base,
            noise_slope,
            // projected signal lies in (-1, 1), so each feature is weakly informative
            feature_noise: 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.noise_base) || !ok(self.noise_slope) || !ok(self.feature_noise) {
            return Err(Error::invalid(
                "noise parameters must be finite and non-negative",
            ));
        }
        if self.family != Family::AgeLike && self.noise_base <= 0.0 {
            return Err(Error::invalid("noise_base must be positive"));
        }
        Ok(())
    }

    pub fn noise_scale(&self, x: f64) -> f64 {
        self.noise_base + self.noise_slope * x
    }

    fn location(&self, x: f64) -> f64 {
        match self.family {
            Family::LinearHetero => 1.0 + 2.0 * x,
            Family::SineHetero => libm::sin(2.0 * x),
            Family::AgeLike => x,
        }
    }

    /// True conditional `tau`-quantile of `y` given the signal value `x`
    /// (column 0 of a generated row).
    pub fn oracle_quantile(&self, x: f64, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0,1), got {tau}")));
        }
        match self.family {
            Family::LinearHetero | Family::SineHetero => {
                Ok(self.location(x) + self.noise_scale(x) * normal_quantile(tau))
            }
            Family::AgeLike => Err(Error::Unsupported(
                "age-like data has no closed-form conditional quantile given the features".into(),
            )),
        }
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.generate_with(&mut RngState::new(self.seed))
    }

    /// Generates from an explicit stream; `generate` seeds it from `self.seed`.
    pub fn generate_with(&self, rng: &mut RngState) -> Result<SyntheticData> {
        self.validate()?;
        let mut streams = rng.split(3).into_iter();
        let (mut signal, mut noise, mut extra) = (
            streams.next().expect("three streams"),
            streams.next().expect("three streams"),
            streams.next().expect("three streams"),
        );
        let (n, d) = (self.n, self.d);
        let mut x = Matrix::zeros(n, d);
        let y = match self.family {
            Family::LinearHetero | Family::SineHetero => {
                let xs: Vec<f64> = signal.uniform(n).into_iter().map(|u| 2.0 * u).collect();
                let eps = noise.normal(n);
                let filler = extra.normal(n * (d - 1));
                for i in 0..n {
                    let row = x.row_mut(i);
                    row[0] = xs[i];
                    row[1..].copy_from_slice(&filler[i * (d - 1)..(i + 1) * (d - 1)]);
                }
                xs.iter()
                    .zip(&eps)
                    .map(|(&xi, &e)| self.location(xi) + self.noise_scale(xi) * e)
                    .collect()
            }
            Family::AgeLike => {
                let (lo, hi) = AGE_RANGE;
                let ages: Vec<f64> = signal
                    .uniform(n)
                    .into_iter()
                    .map(|u| lo + (hi - lo) * u)
                    .collect();
                // fixed projection of the basis onto every feature
                let proj = extra.normal(3 * d);
                let feat_noise = noise.normal(n * d);
                for (i, &age) in ages.iter().enumerate() {
                    let basis = age_basis(age);
                    for (j, slot) in x.row_mut(i).iter_mut().enumerate() {
                        let s: f64 = (0..3).map(|b| proj[b * d + j] * basis[b]).sum();
                        *slot = libm::tanh(s) + self.feature_noise * feat_noise[i * d + j];
                    }
                }
                ages
            }
        };
        Ok(SyntheticData {
            x,
            y,
            spec: self.clone(),
        })
    }
}

/// Centered and scaled `(age, age², sin age)` so each entry is of order one.
fn age_basis(age: f64) -> [f64; 3] {
    let (lo, hi) = AGE_RANGE;
    let mid = 0.5 * (lo + hi);
    let a = (age - mid) / (0.5 * (hi - lo));
    [a, 2.0 * a * a - 1.0, libm::sin(age)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub spec: SyntheticSpec,
}

impl SyntheticData {
    pub fn oracle_quantile(&self, row: usize, tau: f64) -> Result<f64> {
        self.spec.oracle_quantile(self.x.get(row, 0), tau)
    }
}
