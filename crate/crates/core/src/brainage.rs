//! Brain-age gaps, their uncertainty-scaled form, and covariate-adjusted
//! association tests by ordinary least squares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::median_abs_error;
use crate::numerics::special::{f_sf, t_two_sided_p, t_upper_quantile};
use crate::numerics::Matrix;
use crate::predict::PredictiveDistribution;

/// One subject's gap: `bag = y_pred − y_true`, `bag_corrected = bag / sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub y_true: f64,
    pub y_pred: f64,
    pub sigma: f64,
    pub bag: f64,
    pub bag_corrected: f64,
    pub covariates: BTreeMap<String, f64>,
}

impl GapRecord {
    pub fn new(
        y_true: f64,
        y_pred: f64,
        sigma: f64,
        covariates: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "predictive standard deviation {sigma} must be positive"
            )));
        }
        if !y_true.is_finite() || !y_pred.is_finite() {
            return Err(Error::NonFinite("gap inputs".into()));
        }
        let bag = y_pred - y_true;
        Ok(Self {
            y_true,
            y_pred,
            sigma,
            bag,
            bag_corrected: bag / sigma,
            covariates,
        })
    }

    /// Named value: a covariate, or one of `y_true`, `y_pred`, `sigma`, `bag`, `bagc`.
    pub fn value(&self, name: &str) -> Option<f64> {
        if let Some(v) = self.covariates.get(name) {
            return Some(*v);
        }
        match name {
            "y_true" => Some(self.y_true),
            "y_pred" => Some(self.y_pred),
            "sigma" => Some(self.sigma),
            "bag" => Some(self.bag),
            "bagc" | "bag_corrected" => Some(self.bag_corrected),
            _ => None,
        }
    }
}

/// Gap records from predictive medians and standard deviations. `covariates`
/// is either empty or has one map per sample.
pub fn compute_gaps(
    dists: &[PredictiveDistribution],
    y: &[f64],
    covariates: &[BTreeMap<String, f64>],
) -> Result<Vec<GapRecord>> {
    if dists.len() != y.len() {
        return Err(Error::shape(format!(
            "{} predictions but {} targets",
            dists.len(),
            y.len()
        )));
    }
    if !covariates.is_empty() && covariates.len() != y.len() {
        return Err(Error::shape(format!(
            "{} covariate rows for {} samples",
            covariates.len(),
            y.len()
        )));
    }
    dists
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (d, &yt))| {
            let cov = covariates.get(i).cloned().unwrap_or_default();
            GapRecord::new(yt, d.median(), d.std(), cov).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("sample {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Single-coefficient test in a linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermTest {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub partial_eta_sq: f64,
}

/// `F·df1 / (F·df1 + df2)`.
pub fn partial_eta_squared(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_infinite() {
        return 1.0;
    }
    let num = f * df1;
    num / (num + df2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub rss: f64,
    pub dof: usize,
    /// One partial test per coefficient (`F = t²` on `(1, dof)`).
    pub tests: Vec<TermTest>,
}

impl OlsFit {
    pub fn test(&self, term: &str) -> Option<&TermTest> {
        self.tests.iter().find(|t| t.term == term)
    }

    pub fn fitted(&self, design: &Matrix) -> Vec<f64> {
        design
            .iter_rows()
            .map(|r| r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Two-sided confidence interval for coefficient `j`.
    pub fn confidence_interval(&self, j: usize, level: f64) -> (f64, f64) {
        let t = t_upper_quantile(0.5 * (1.0 - level), self.dof as f64);
        let b = self.coefficients[j];
        let se = self.std_errors[j];
        (b - t * se, b + t * se)
    }
}

/// Thin QR factorization built column by column with twice-applied
/// modified Gram–Schmidt. Columns whose residual norm falls below `1e-10`
/// of their own norm are reported as dependent and left out of the basis.
struct IncrementalQr {
    n: usize,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    kept: Vec<usize>,
    dependent: Vec<usize>,
}

const RANK_TOL: f64 = 1e-10;

impl IncrementalQr {
    fn new(design: &Matrix) -> Self {
        let mut qr = IncrementalQr {
            n: design.rows(),
            q: Vec::new(),
            r: Vec::new(),
            kept: Vec::new(),
            dependent: Vec::new(),
        };
        for j in 0..design.cols() {
            qr.push(j, design.column(j));
        }
        qr
    }

    fn push(&mut self, index: usize, mut v: Vec<f64>) {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut coeffs = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let c: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                coeffs[i] += c;
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= c * qk;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= RANK_TOL * norm0 {
            self.dependent.push(index);
            return;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        coeffs.push(norm);
        self.q.push(v);
        self.r.push(coeffs);
        self.kept.push(index);
    }

    /// Upper-triangular `R[i][j]` for kept columns (`r[j]` holds column `j`).
    fn r_at(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.r[j][i]
        } else {
            0.0
        }
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let p = self.q.len();
        let qty: Vec<f64> = self
            .q
            .iter()
            .map(|qi| qi.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect();
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            let mut s = qty[i];
            for j in i + 1..p {
                s -= self.r_at(i, j) * beta[j];
            }
            beta[i] = s / self.r_at(i, i);
        }
        beta
    }

    /// Diagonal of `(RᵀR)⁻¹`.
    fn unscaled_variances(&self) -> Vec<f64> {
        let p = self.q.len();
        // rows of R⁻¹ by back substitution on unit vectors
        let mut rinv = vec![vec![0.0; p]; p];
        for col in 0..p {
            for i in (0..=col).rev() {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for j in i + 1..=col {
                    s -= self.r_at(i, j) * rinv[j][col];
                }
                rinv[i][col] = s / self.r_at(i, i);
            }
        }
        rinv.iter()
            .map(|row| row.iter().map(|v| v * v).sum())
            .collect()
    }
}

/// Indices of the columns of `design` that are linearly independent of the
/// columns before them.
pub fn independent_columns(design: &Matrix) -> (Vec<usize>, Vec<usize>) {
    let qr = IncrementalQr::new(design);
    (qr.kept, qr.dependent)
}

/// Least squares with default term names `x0, x1, …`.
pub fn ols_fit(design: &Matrix, response: &[f64]) -> Result<OlsFit> {
    let names: Vec<String> = (0..design.cols()).map(|j| format!("x{j}")).collect();
    ols_fit_named(design, response, &names)
}

/// Least squares on a full-rank design (include an intercept column yourself).
pub fn ols_fit_named(design: &Matrix, response: &[f64], names: &[String]) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::shape(format!(
            "design has {n} rows, response has {}",
            response.len()
        )));
    }
    if names.len() != p {
        return Err(Error::shape("one name per design column required"));
    }
    if n <= p {
        return Err(Error::invalid(format!(
            "need more samples ({n}) than predictors ({p})"
        )));
    }
    if !design.is_finite() || response.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression inputs".into()));
    }
    let qr = IncrementalQr::new(design);
    if !qr.dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: qr.dependent.iter().map(|&j| names[j].clone()).collect(),
        });
    }
    debug_assert_eq!(qr.n, n);
    let beta = qr.solve(response);
    let fitted = design.mul_vec(&beta)?;
    let rss: f64 = response
        .iter()
        .zip(&fitted)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    let dof = n - p;
    let sigma2 = rss / dof as f64;
    let std_errors: Vec<f64> = qr
        .unscaled_variances()
        .into_iter()
        .map(|v| (sigma2 * v).sqrt())
        .collect();
    let tests = names
        .iter()
        .zip(beta.iter().zip(&std_errors))
        .map(|(name, (&b, &se))| {
            let t = b / se;
            let f = t * t;
            let df2 = dof as f64;
            TermTest {
                term: name.clone(),
                estimate: b,
                std_error: se,
                f,
                df1: 1.0,
                df2,
                p: t_two_sided_p(t, df2),
                partial_eta_sq: partial_eta_squared(f, 1.0, df2),
            }
        })
        .collect();
    Ok(OlsFit {
        terms: names.to_vec(),
        coefficients: beta,
        std_errors,
        rss,
        dof,
        tests,
    })
}

/// Nested-model F test: `((RSS_reduced − RSS_full) / df1) / (RSS_full / df2)`.
pub fn nested_f_test(
    term: &str,
    estimate: f64,
    std_error: f64,
    rss_reduced: f64,
    rss_full: f64,
    df1: usize,
    df2: usize,
) -> TermTest {
    let (d1, d2) = (df1 as f64, df2 as f64);
    let f = ((rss_reduced - rss_full).max(0.0) / d1) / (rss_full / d2);
    TermTest {
        term: term.to_string(),
        estimate,
        std_error,
        f,
        df1: d1,
        df2: d2,
        p: f_sf(f, d1, d2),
        partial_eta_sq: partial_eta_squared(f, d1, d2),
    }
}

/// Which gap the association test regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapResponse {
    Bag,
    Bagc,
}

impl GapResponse {
    fn values(self, records: &[GapRecord]) -> Vec<f64> {
        records
            .iter()
            .map(|r| match self {
                GapResponse::Bag => r.bag,
                GapResponse::Bagc => r.bag_corrected,
            })
            .collect()
    }
}

impl std::str::FromStr for GapResponse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bag" => Ok(Self::Bag),
            "bagc" | "bag_corrected" => Ok(Self::Bagc),
            other => Err(Error::invalid(format!(
                "unknown response '{other}' (bag or bagc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub predictor: String,
    pub covariates: Vec<String>,
    pub n: usize,
    pub bag: TermTest,
    pub bag_corrected: TermTest,
}

impl AssociationResult {
    pub fn get(&self, response: GapResponse) -> &TermTest {
        match response {
            GapResponse::Bag => &self.bag,
            GapResponse::Bagc => &self.bag_corrected,
        }
    }
}

/// Effective covariate list: the requested ones plus age, which is always
/// adjusted for. Age is the `age` covariate if records carry one, otherwise
/// the chronological target `y_true`.
pub fn covariates_with_age(
    records: &[GapRecord],
    predictor: &str,
    covariates: &[String],
) -> Vec<String> {
    let mut out: Vec<String> = covariates
        .iter()
        .filter(|c| c.as_str() != predictor)
        .cloned()
        .collect();
    let has_age_cov = records
        .first()
        .is_some_and(|r| r.covariates.contains_key("age"));
    let age_name = if has_age_cov { "age" } else { "y_true" };
    let mentioned = |n: &str| predictor == n || out.iter().any(|c| c == n);
    if !mentioned("age") && !mentioned("y_true") {
        out.push(age_name.to_string());
    }
    out
}

fn design_for(records: &[GapRecord], columns: &[String]) -> Result<Matrix> {
    let p = columns.len() + 1;
    let mut data = Vec::with_capacity(records.len() * p);
    for (i, r) in records.iter().enumerate() {
        data.push(1.0);
        for c in columns {
            data.push(
                r.value(c)
                    .ok_or_else(|| Error::invalid(format!("record {i} has no column '{c}'")))?,
            );
        }
    }
    Matrix::from_vec(records.len(), p, data)
}

/// Tests `predictor` on both the raw and the uncertainty-corrected gap,
/// controlling for `covariates` and age.
pub fn association_test(
    records: &[GapRecord],
    predictor: &str,
    covariates: &[String],
) -> Result<AssociationResult> {
    if records.is_empty() {
        return Err(Error::Empty("association test on zero records".into()));
    }
    let covs = covariates_with_age(records, predictor, covariates);
    let mut full_cols = covs.clone();
    full_cols.push(predictor.to_string());
    let mut names = vec!["intercept".to_string()];
    names.extend(full_cols.iter().cloned());
    let reduced_names: Vec<String> = names[..names.len() - 1].to_vec();

    let full = design_for(records, &full_cols)?;
    let reduced = design_for(records, &covs)?;

    let run = |resp: GapResponse| -> Result<TermTest> {
        let y = resp.values(records);
        let ff = ols_fit_named(&full, &y, &names)?;
        let fr = ols_fit_named(&reduced, &y, &reduced_names)?;
        let j = names.len() - 1;
        Ok(nested_f_test(
            predictor,
            ff.coefficients[j],
            ff.std_errors[j],
            fr.rss,
            ff.rss,
            1,
            ff.dof,
        ))
    };
    Ok(AssociationResult {
        predictor: predictor.to_string(),
        covariates: covs.clone(),
        n: records.len(),
        bag: run(GapResponse::Bag)?,
        bag_corrected: run(GapResponse::Bagc)?,
    })
}

/// Per-level error summary of a grouping covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupError {
    pub level: f64,
    pub n: usize,
    /// Median absolute gap.
    pub mae: f64,
    /// `mae` divided by the population std of `y_true` in the subgroup.
    pub standardized_mae: f64,
}

pub fn subgroup_errors(records: &[GapRecord], group: &str) -> Result<Vec<SubgroupError>> {
    let mut levels: BTreeMap<u64, (f64, Vec<&GapRecord>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let v = r
            .value(group)
            .ok_or_else(|| Error::invalid(format!("record {i} has no column '{group}'")))?;
        // total order on the bit pattern is enough to group identical codes
        levels
            .entry(v.to_bits())
            .or_insert((v, Vec::new()))
            .1
            .push(r);
    }
    let mut out: Vec<SubgroupError> = levels
        .into_values()
        .map(|(level, rs)| {
            let yt: Vec<f64> = rs.iter().map(|r| r.y_true).collect();
            let yp: Vec<f64> = rs.iter().map(|r| r.y_pred).collect();
            let mae = median_abs_error(&yt, &yp)?;
            let n = yt.len() as f64;
            let mean = yt.iter().sum::<f64>() / n;
            let sd = (yt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            Ok(SubgroupError {
                level,
                n: rs.len(),
                mae,
                standardized_mae: if sd > 0.0 { mae / sd } else { f64::NAN },
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.level.total_cmp(&b.level));
    Ok(out)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Correlation of the raw and corrected gap with chronological age
/// (regression towards the mean shows up as a negative value).
pub fn gap_age_correlation(records: &[GapRecord]) -> (f64, f64) {
    let age: Vec<f64> = records.iter().map(|r| r.y_true).collect();
    let bag: Vec<f64> = records.iter().map(|r| r.bag).collect();
    let bagc: Vec<f64> = records.iter().map(|r| r.bag_corrected).collect();
    (pearson(&bag, &age), pearson(&bagc, &age))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn rec(y_true: f64, y_pred: f64, sigma: f64, cov: &[(&str, f64)]) -> GapRecord {
        GapRecord::new(
            y_true,
            y_pred,
            sigma,
            cov.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gap_arithmetic() {
        let r = rec(50.0, 52.0, 2.0, &[]);
        assert_eq!((r.bag, r.bag_corrected), (2.0, 1.0));
        let z = rec(50.0, 50.0, 7.0, &[]);
        assert_eq!(z.bag, 0.0);
        assert!(GapRecord::new(1.0, 2.0, 0.0, BTreeMap::new()).is_err());
        assert!(GapRecord::new(1.0, 2.0, -1.0, BTreeMap::new()).is_err());
    }

    #[test]
    fn compute_gaps_rejects_zero_sigma() {
        let d = vec![PredictiveDistribution::from_draws(vec![3.0; 4]).unwrap()];
        let err = compute_gaps(&d, &[1.0], &[]).unwrap_err();
        assert!(err.to_string().contains("sample 0"));
        assert!(compute_gaps(&d, &[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn exact_linear_fit() {
        let mut rng = RngState::new(1);
        let x1 = rng.normal(20);
        let x2 = rng.normal(20);
        let rows: Vec<[f64; 3]> = (0..20).map(|i| [1.0, x1[i], x2[i]]).collect();
        let d = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..20).map(|i| 2.0 - 3.0 * x1[i] + 0.5 * x2[i]).collect();
        let fit = ols_fit(&d, &y).unwrap();
        let resid: Vec<f64> = fit.fitted(&d).iter().zip(&y).map(|(f, y)| y - f).collect();
        assert!(resid.iter().all(|r| r.abs() < 1e-10));
        assert!((fit.coefficients[1] + 3.0).abs() < 1e-10);
    }

    #[test]
    fn hand_computed_simple_regression() {
        // x = 1..5, y = (2, 4, 5, 4, 5): slope 0.6, intercept 2.2, RSS 2.4
        let d = Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0], [1.0, 3.0], [1.0, 4.0], [1.0, 5.0]])
            .unwrap();
        let fit = ols_fit(&d, &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 2.2).abs() < 1e-12);
        assert!((fit.coefficients[1] - 0.6).abs() < 1e-12);
        assert!((fit.rss - 2.4).abs() < 1e-12);
        assert_eq!(fit.dof, 3);
        // se(slope) = sqrt(0.8 / 10)
        assert!((fit.std_errors[1] - 0.08f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn row_permutation_invariance() {
        let mut rng = RngState::new(2);
        let x = rng.normal(30);
        let y: Vec<f64> = x
            .iter()
            .zip(rng.normal(30))
            .map(|(a, e)| 1.0 + a + e)
            .collect();
        let rows: Vec<[f64; 2]> = x.iter().map(|&v| [1.0, v]).collect();
        let d = Matrix::from_rows(&rows).unwrap();
        let fit = ols_fit(&d, &y).unwrap();
        let perm = rng.permutation(30);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let fp = ols_fit(&d.select_rows(&perm), &yp).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&fp.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let d = Matrix::from_rows(&[
            [1.0, 2.0, 4.0],
            [1.0, 3.0, 6.0],
            [1.0, 5.0, 10.0],
            [1.0, 1.0, 2.0],
        ])
        .unwrap();
        let names = vec!["intercept".into(), "a".into(), "twice_a".into()];
        match ols_fit_named(&d, &[1.0, 2.0, 3.0, 4.0], &names) {
            Err(Error::RankDeficient { columns }) => {
                assert_eq!(columns, vec!["twice_a".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }

    fn cohort(seed: u64, n: usize, effect: f64) -> Vec<GapRecord> {
        let mut rng = RngState::new(seed);
        let bmi: Vec<f64> = rng.normal(n).iter().map(|z| 27.0 + 4.5 * z).collect();
        let age: Vec<f64> = rng.uniform(n).iter().map(|u| 20.0 + 52.0 * u).collect();
        let noise = rng.normal(n);
        (0..n)
            .map(|i| {
                let bag = effect * bmi[i] + noise[i];
                rec(age[i], age[i] + bag, 1.0, &[("bmi", bmi[i])])
            })
            .collect()
    }

    #[test]
    fn planted_effect_detected() {
        let r = association_test(&cohort(3, 2000, 0.1), "bmi", &[]).unwrap();
        assert!(r.bag.p < 0.01, "{:?}", r.bag);
        assert!((r.bag.estimate - 0.1).abs() < 0.03);
        assert_eq!(r.covariates, vec!["y_true".to_string()]);
    }

    #[test]
    fn null_predictor() {
        let mut recs = cohort(4, 200, 0.0);
        // predictor built orthogonal to intercept, age and the gap itself
        let mut rng = RngState::new(40);
        let basis: Vec<Vec<f64>> = vec![
            vec![1.0; 200],
            recs.iter().map(|r| r.y_true).collect(),
            recs.iter().map(|r| r.bag).collect(),
        ];
        let mut v = rng.normal(200);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for b in basis {
            let mut u = b.clone();
            for qi in &q {
                let c: f64 = qi.iter().zip(&u).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
            let nrm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(u.into_iter().map(|x| x / nrm).collect());
        }
        for qi in &q {
            let c: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
        }
        for (r, p) in recs.iter_mut().zip(&v) {
            r.covariates.insert("noise".into(), *p);
        }
        let r = association_test(&recs, "noise", &[]).unwrap();
        assert!(r.bag.f < 1e-12, "{:?}", r.bag);
        assert!(r.bag.partial_eta_sq < 1e-12);
        assert!(r.bag.p > 0.999);
    }

    #[test]
    fn nested_f_equals_squared_t() {
        let recs = cohort(5, 300, 0.05);
        let r = association_test(&recs, "bmi", &[]).unwrap();
        let t = r.bag.estimate / r.bag.std_error;
        assert!((r.bag.f - t * t).abs() < 1e-8 * r.bag.f.max(1.0));
        let eta = r.bag.f / (r.bag.f + r.bag.df2);
        assert!((r.bag.partial_eta_sq - eta).abs() < 1e-12);
    }

    #[test]
    fn constant_sigma_rescaling_keeps_f() {
        let recs = cohort(6, 400, 0.05);
        let scaled: Vec<GapRecord> = recs
            .iter()
            .map(|r| GapRecord::new(r.y_true, r.y_pred, 3.0, r.covariates.clone()).unwrap())
            .collect();
        let a = association_test(&recs, "bmi", &[]).unwrap();
        let b = association_test(&scaled, "bmi", &[]).unwrap();
        assert!((a.bag_corrected.f - b.bag_corrected.f).abs() < 1e-8 * a.bag_corrected.f.max(1.0));
        assert!((b.bag_corrected.estimate * 3.0 - a.bag_corrected.estimate).abs() < 1e-10);
    }

    #[test]
    fn group_test_matches_pooled_t() {
        // with no covariates except age held constant, the group F is the pooled two-sample t²
        let mut rng = RngState::new(7);
        let n = 60;
        let z = rng.normal(n);
        let recs: Vec<GapRecord> = (0..n)
            .map(|i| {
                let g = (i % 2) as f64;
                rec(
                    40.0,
                    40.0 + 0.7 * g + z[i],
                    1.0,
                    &[("group", g), ("age", 40.0)],
                )
            })
            .collect();
        let design = Matrix::from_rows(
            &recs
                .iter()
                .map(|r| [1.0, r.covariates["group"]])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = recs.iter().map(|r| r.bag).collect();
        let fit = ols_fit(&design, &y).unwrap();

        let (g0, g1): (Vec<f64>, Vec<f64>) = {
            let a = recs
                .iter()
                .filter(|r| r.covariates["group"] == 0.0)
                .map(|r| r.bag)
                .collect();
            let b = recs
                .iter()
                .filter(|r| r.covariates["group"] == 1.0)
                .map(|r| r.bag)
                .collect();
            (a, b)
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ss = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        let sp2 = (ss(&g0) + ss(&g1)) / (n as f64 - 2.0);
        let t = (mean(&g1) - mean(&g0)) / (sp2 * (2.0 / 30.0)).sqrt();
        assert!((fit.tests[1].f - t * t).abs() < 1e-9);
    }

    #[test]
    fn age_covariate_auto_included() {
        let recs = vec![rec(30.0, 31.0, 1.0, &[("age", 30.0), ("bmi", 20.0)])];
        assert_eq!(
            covariates_with_age(&recs, "bmi", &[]),
            vec!["age".to_string()]
        );
        assert_eq!(covariates_with_age(&recs, "age", &[]), Vec::<String>::new());
        let bare = vec![rec(30.0, 31.0, 1.0, &[("bmi", 20.0)])];
        assert_eq!(
            covariates_with_age(&bare, "bmi", &["site".into()]),
            vec!["site".to_string(), "y_true".to_string()]
        );
    }

    #[test]
    fn subgroup_summary() {
        let recs = vec![
            rec(20.0, 21.0, 1.0, &[("sex", 0.0)]),
            rec(40.0, 38.0, 1.0, &[("sex", 0.0)]),
            rec(30.0, 33.0, 1.0, &[("sex", 1.0)]),
        ];
        let s = subgroup_errors(&recs, "sex").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].n, s[0].mae), (2, 1.5));
        assert!((s[0].standardized_mae - 0.15).abs() < 1e-12);
        assert!(s[1].standardized_mae.is_nan());
    }
}
