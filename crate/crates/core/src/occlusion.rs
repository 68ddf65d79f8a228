//! Occlusion-sensitivity mapping: zero a region's raw features, measure the
//! shift in uncertainty-corrected gap, and estimate per-region effects with a
//! treatment-contrast regression against the un-occluded prediction.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brainage::{independent_columns, ols_fit_named};
use crate::error::{Error, Result};
use crate::model::MccqrModel;
use crate::numerics::special::{t_two_sided_p, t_upper_quantile};
use crate::numerics::{Matrix, RngState};
use crate::predict::{predict_distribution, UncertaintyMode};

pub const REFERENCE_LEVEL: &str = "whole-brain";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Named feature-index sets over a `d`-dimensional raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAtlas {
    d: usize,
    regions: Vec<Region>,
}

impl RegionAtlas {
    /// Validates indices and unique names; overlapping regions are rejected
    /// unless `allow_overlap` is set.
    pub fn new(d: usize, regions: Vec<Region>, allow_overlap: bool) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut seen: HashMap<usize, &str> = HashMap::new();
        for r in &regions {
            if !names.insert(r.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate region name '{}'",
                    r.name
                )));
            }
            for &i in &r.indices {
                if i >= d {
                    return Err(Error::invalid(format!(
                        "region '{}' references feature {i} but there are only {d}",
                        r.name
                    )));
                }
                if let Some(other) = seen.insert(i, &r.name) {
                    if !allow_overlap && other != r.name {
                        return Err(Error::invalid(format!(
                            "feature {i} belongs to both '{other}' and '{}'",
                            r.name
                        )));
                    }
                }
            }
        }
        Ok(Self { d, regions })
    }

    /// Groups `(region, feature)` pairs, keeping regions in order of first appearance.
    pub fn from_pairs<S: AsRef<str>>(
        d: usize,
        pairs: &[(S, usize)],
        allow_overlap: bool,
    ) -> Result<Self> {
        let mut order: Vec<Region> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (name, feat) in pairs {
            let name = name.as_ref();
            let slot = *index.entry(name.to_string()).or_insert_with(|| {
                order.push(Region {
                    name: name.to_string(),
                    indices: Vec::new(),
                });
                order.len() - 1
            });
            if !order[slot].indices.contains(feat) {
                order[slot].indices.push(*feat);
            }
        }
        Self::new(d, order, allow_overlap)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Copy of `x` with the given features set to zero (raw space).
pub fn occlude(x: &[f64], region: &[usize]) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    for &i in region {
        let slot = out.get_mut(i).ok_or_else(|| {
            Error::invalid(format!(
                "feature index {i} out of range for {} features",
                x.len()
            ))
        })?;
        *slot = 0.0;
    }
    Ok(out)
}

/// Corrected gaps of every sample with and without each region occluded.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionResult {
    pub region_names: Vec<String>,
    pub region_sizes: Vec<usize>,
    pub y_true: Vec<f64>,
    /// Corrected gap on the full input, per sample.
    pub full: Vec<f64>,
    /// Corrected gap with region `r` occluded, `samples x regions`.
    pub occluded: Matrix,
}

impl OcclusionResult {
    pub fn n_samples(&self) -> usize {
        self.full.len()
    }

    pub fn n_regions(&self) -> usize {
        self.region_names.len()
    }

    /// `occluded − full` for one cell.
    pub fn delta(&self, sample: usize, region: usize) -> f64 {
        self.occluded.get(sample, region) - self.full[sample]
    }

    pub fn mean_delta(&self, region: usize) -> f64 {
        (0..self.n_samples())
            .map(|i| self.delta(i, region))
            .sum::<f64>()
            / self.n_samples() as f64
    }
}

fn corrected_gap(median: f64, sigma: f64, y: f64, sample: usize) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Numeric(format!(
            "sample {sample}: predictive distribution has zero spread"
        )));
    }
    Ok((median - y) / sigma)
}

/// Full and per-region occluded predictions. Each sample gets its own stream
/// from `rng.split(n)` and every pass for that sample restarts from it, so
/// full and occluded predictions share dropout masks and quantile draws.
pub fn occlusion_deltas(
    model: &MccqrModel,
    x: &Matrix,
    y: &[f64],
    atlas: &RegionAtlas,
    draws: usize,
    rng: &mut RngState,
) -> Result<OcclusionResult> {
    if x.rows() != y.len() {
        return Err(Error::shape(format!(
            "{} samples but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() > 0 && x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "data has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    if atlas.dim() != model.input_dim() {
        return Err(Error::shape(format!(
            "atlas covers {} features, model expects {}",
            atlas.dim(),
            model.input_dim()
        )));
    }
    let streams = rng.split(x.rows());
    let rows: Vec<(f64, Vec<f64>)> = streams
        .into_par_iter()
        .enumerate()
        .map(|(i, stream)| {
            let xi = x.row(i);
            let full =
                predict_distribution(model, xi, draws, UncertaintyMode::Full, &mut stream.clone())?;
            let full_gap = corrected_gap(full.median(), full.std(), y[i], i)?;
            let occluded = atlas
                .regions()
                .iter()
                .map(|r| {
                    let xo = occlude(xi, &r.indices)?;
                    let d = predict_distribution(
                        model,
                        &xo,
                        draws,
                        UncertaintyMode::Full,
                        &mut stream.clone(),
                    )?;
                    corrected_gap(d.median(), d.std(), y[i], i)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((full_gap, occluded))
        })
        .collect::<Result<_>>()?;

    let r = atlas.len();
    let mut occluded = Matrix::zeros(rows.len(), r);
    let mut full = Vec::with_capacity(rows.len());
    for (i, (f, occ)) in rows.into_iter().enumerate() {
        full.push(f);
        occluded.row_mut(i).copy_from_slice(&occ);
    }
    Ok(OcclusionResult {
        region_names: atlas.regions().iter().map(|r| r.name.clone()).collect(),
        region_sizes: atlas.regions().iter().map(|r| r.indices.len()).collect(),
        y_true: y.to_vec(),
        full,
        occluded,
    })
}

/// Per-sample covariates for the contrast regression. `age` defaults to the
/// true target; `site` is treated as categorical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcclusionCovariates {
    pub age: Option<Vec<f64>>,
    pub gender: Option<Vec<f64>>,
    pub site: Option<Vec<f64>>,
    pub region_size: bool,
}

impl OcclusionCovariates {
    /// Age (from the target), gender if given, and region size.
    pub fn standard(gender: Option<Vec<f64>>, site: Option<Vec<f64>>) -> Self {
        Self {
            age: None,
            gender,
            site,
            region_size: true,
        }
    }
}

/// One row of the stacked (sample × level) table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub sample_id: usize,
    pub region: String,
    pub bag_corrected: f64,
    pub age: f64,
    pub gender: Option<f64>,
    pub site: Option<f64>,
    pub region_size: usize,
}

/// Stacks the full prediction (reference level, region size 0) and every
/// occluded prediction: `n × (R + 1)` rows.
pub fn long_format(results: &OcclusionResult, covs: &OcclusionCovariates) -> Result<Vec<LongRow>> {
    let n = results.n_samples();
    for (name, v) in [
        ("age", &covs.age),
        ("gender", &covs.gender),
        ("site", &covs.site),
    ] {
        if let Some(v) = v {
            if v.len() != n {
                return Err(Error::shape(format!(
                    "{name} has {} values for {n} samples",
                    v.len()
                )));
            }
        }
    }
    let age = covs.age.as_ref().unwrap_or(&results.y_true);
    let mut rows = Vec::with_capacity(n * (results.n_regions() + 1));
    for i in 0..n {
        let base = |region: &str, gap: f64, size: usize| LongRow {
            sample_id: i,
            region: region.to_string(),
            bag_corrected: gap,
            age: age[i],
            gender: covs.gender.as_ref().map(|g| g[i]),
            site: covs.site.as_ref().map(|s| s[i]),
            region_size: size,
        };
        rows.push(base(REFERENCE_LEVEL, results.full[i], 0));
        for (r, name) in results.region_names.iter().enumerate() {
            rows.push(base(
                name,
                results.occluded.get(i, r),
                results.region_sizes[r],
            ));
        }
    }
    Ok(rows)
}

pub fn long_format_csv(rows: &[LongRow]) -> String {
    let with_gender = rows.first().is_some_and(|r| r.gender.is_some());
    let with_site = rows.first().is_some_and(|r| r.site.is_some());
    let mut s = String::from("sample_id,region,bag_corrected,age");
    if with_gender {
        s.push_str(",gender");
    }
    if with_site {
        s.push_str(",site");
    }
    s.push_str(",region_size\n");
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.sample_id,
            csv_field(&r.region),
            r.bag_corrected,
            r.age
        );
        if let Some(g) = r.gender {
            let _ = write!(s, ",{g}");
        }
        if let Some(v) = r.site {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.region_size);
    }
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimate {
    pub region: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastFit {
    pub reference: String,
    pub regions: Vec<RegionEstimate>,
    pub covariates: Vec<String>,
    pub dropped_terms: Vec<String>,
    pub n_rows: usize,
    pub df: usize,
}

impl ContrastFit {
    pub fn region(&self, name: &str) -> Option<&RegionEstimate> {
        self.regions.iter().find(|r| r.region == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>10} {:>9} {:>10} {:>22}",
            "region", "estimate", "se", "t", "p", "95% CI"
        );
        for r in &self.regions {
            let _ = writeln!(
                s,
                "{:<20} {:>10.4} {:>10.4} {:>9.3} {:>10.3e} [{:>9.4}, {:>9.4}]",
                r.region, r.estimate, r.std_error, r.t, r.p, r.ci_low, r.ci_high
            );
        }
        let _ = writeln!(
            s,
            "reference level: {}; rows: {}; residual df: {}",
            self.reference, self.n_rows, self.df
        );
        if !self.dropped_terms.is_empty() {
            let _ = writeln!(s, "dropped (collinear): {}", self.dropped_terms.join(", "));
        }
        s
    }
}

/// Fixed-effects OLS of the corrected gap on a region factor (treatment
/// contrast, whole-brain reference) plus covariates. Columns that are
/// collinear with earlier ones are dropped with a warning.
pub fn region_contrast_fit(
    results: &OcclusionResult,
    covs: &OcclusionCovariates,
) -> Result<ContrastFit> {
    let r = results.n_regions();
    if r < 2 {
        return Err(Error::invalid("contrast fit needs at least two regions"));
    }
    let rows = long_format(results, covs)?;
    let mut names = vec!["intercept".to_string()];
    names.extend(results.region_names.iter().map(|n| format!("region[{n}]")));
    let mut cov_names = vec!["age".to_string()];
    if covs.gender.is_some() {
        cov_names.push("gender".into());
    }
    let site_levels: Vec<f64> = match &covs.site {
        Some(s) => {
            let mut lv: Vec<f64> = s.clone();
            lv.sort_by(f64::total_cmp);
            lv.dedup();
            lv
        }
        None => Vec::new(),
    };
    for lv in site_levels.iter().skip(1) {
        cov_names.push(format!("site[{lv}]"));
    }
    if covs.region_size {
        cov_names.push("region_size".into());
    }
    names.extend(cov_names.iter().cloned());

    let region_index: HashMap<&str, usize> = results
        .region_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let p = names.len();
    let mut data = Vec::with_capacity(rows.len() * p);
    let mut y = Vec::with_capacity(rows.len());
    for row in &rows {
        data.push(1.0);
        let lvl = region_index.get(row.region.as_str());
        for k in 0..r {
            data.push(if lvl == Some(&k) { 1.0 } else { 0.0 });
        }
        data.push(row.age);
        if let Some(g) = row.gender {
            data.push(g);
        }
        if let Some(s) = row.site {
            for lv in site_levels.iter().skip(1) {
                data.push(if s == *lv { 1.0 } else { 0.0 });
            }
        }
        if covs.region_size {
            data.push(row.region_size as f64);
        }
        y.push(row.bag_corrected);
    }
    let design = Matrix::from_vec(rows.len(), p, data)?;
    let (kept, dropped) = independent_columns(&design);
    let dropped_terms: Vec<String> = dropped.iter().map(|&j| names[j].clone()).collect();
    if !dropped_terms.is_empty() {
        log::warn!(
            "dropping collinear term(s) from the contrast model: {}",
            dropped_terms.join(", ")
        );
    }
    if dropped.iter().any(|&j| (1..=r).contains(&j)) {
        return Err(Error::RankDeficient {
            columns: dropped_terms,
        });
    }
    let kept_names: Vec<String> = kept.iter().map(|&j| names[j].clone()).collect();
    let fit = ols_fit_named(&design.select_cols(&kept), &y, &kept_names)?;
    let tcrit = t_upper_quantile(0.025, fit.dof as f64);
    let regions = (0..r)
        .map(|k| {
            // region dummies are never dropped, so column k+1 sits at position k+1
            let est = fit.coefficients[k + 1];
            let se = fit.std_errors[k + 1];
            let t = est / se;
            RegionEstimate {
                region: results.region_names[k].clone(),
                estimate: est,
                std_error: se,
                t,
                p: t_two_sided_p(t, fit.dof as f64),
                ci_low: est - tcrit * se,
                ci_high: est + tcrit * se,
                mean_delta: results.mean_delta(k),
            }
        })
        .collect();
    Ok(ContrastFit {
        reference: REFERENCE_LEVEL.to_string(),
        regions,
        covariates: cov_names
            .into_iter()
            .filter(|c| !dropped_terms.contains(c))
            .collect(),
        dropped_terms,
        n_rows: rows.len(),
        df: fit.dof,
    })
}
