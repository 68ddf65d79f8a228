//! Interval coverage (PICP), quantile-crossing audit and median absolute error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MccqrModel;
use crate::numerics::Matrix;
use crate::predict::PredictiveDistribution;

/// `0.05, 0.10, …, 0.95`.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "coverage level {level} outside (0, 1)"
        )))
    }
}

/// Fraction of targets inside their central `level` interval (bounds inclusive).
pub fn picp(dists: &[PredictiveDistribution], y: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if dists.is_empty() {
        return Err(Error::Empty("PICP over zero samples".into()));
    }
    if dists.len() != y.len() {
        return Err(Error::shape(format!(
            "{} predictive distributions but {} targets",
            dists.len(),
            y.len()
        )));
    }
    let hits = dists
        .iter()
        .zip(y)
        .filter(|(d, &yi)| {
            let (lo, hi) = d.central_interval(level);
            lo <= yi && yi <= hi
        })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Coverage from precomputed interval bounds, e.g. read back from a prediction file.
pub fn picp_from_bounds(lower: &[f64], upper: &[f64], y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("PICP over zero samples".into()));
    }
    if lower.len() != y.len() || upper.len() != y.len() {
        return Err(Error::shape("interval bounds and targets differ in length"));
    }
    let hits = lower
        .iter()
        .zip(upper)
        .zip(y)
        .filter(|((lo, hi), yi)| *lo <= *yi && *yi <= *hi)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub levels: Vec<f64>,
    pub picp: Vec<f64>,
    pub n: usize,
    pub crossing_rate: Option<f64>,
    pub mae_median: f64,
}

/// PICP at each level plus the median absolute error of the medians.
pub fn picp_curve(
    dists: &[PredictiveDistribution],
    y: &[f64],
    levels: &[f64],
) -> Result<CalibrationReport> {
    check_levels(levels)?;
    let picp = levels
        .iter()
        .map(|&l| picp(dists, y, l))
        .collect::<Result<Vec<_>>>()?;
    let medians: Vec<f64> = dists.iter().map(|d| d.median()).collect();
    Ok(CalibrationReport {
        levels: levels.to_vec(),
        picp,
        n: y.len(),
        crossing_rate: None,
        mae_median: median_abs_error(y, &medians)?,
    })
}

pub(crate) fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Empty("no coverage levels".into()));
    }
    for &l in levels {
        check_level(l)?;
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "coverage levels must be strictly increasing",
        ));
    }
    Ok(())
}

impl CalibrationReport {
    pub fn with_crossing_rate(mut self, rate: f64) -> Self {
        self.crossing_rate = Some(rate);
        self
    }

    pub fn max_abs_deviation(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.picp)
            .map(|(l, p)| (p - l).abs())
            .fold(0.0, f64::max)
    }

    /// `level,picp` rows with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,picp\n");
        for (l, p) in self.levels.iter().zip(&self.picp) {
            let _ = writeln!(s, "{l},{p}");
        }
        s
    }

    /// Parses the output of [`CalibrationReport::to_csv`]. Only the curve is
    /// stored in the CSV, so `n`, `crossing_rate` and `mae_median` are supplied.
    pub fn from_csv(text: &str, n: usize, mae_median: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "level,picp" => {}
            _ => return Err(Error::Format("expected header 'level,picp'".into())),
        }
        let mut levels = Vec::new();
        let mut picp = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut it = line.split(',');
            let parse = |v: Option<&str>| -> Result<f64> {
                v.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad calibration row {}", i + 2)))
            };
            levels.push(parse(it.next())?);
            picp.push(parse(it.next())?);
        }
        Ok(Self {
            levels,
            picp,
            n,
            crossing_rate: None,
            mae_median,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8}  {:>8}  {:>8}", "level", "picp", "diff");
        for (l, p) in self.levels.iter().zip(&self.picp) {
            let _ = writeln!(s, "{:>8.3}  {:>8.4}  {:>+8.4}", l, p, p - l);
        }
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "median absolute error = {:.4}", self.mae_median);
        if let Some(c) = self.crossing_rate {
            let _ = writeln!(s, "quantile crossing rate = {c:.6}");
        }
        s
    }

    /// Coverage-versus-level line plot with the diagonal of perfect calibration.
    pub fn to_svg(&self) -> String {
        const W: f64 = 420.0;
        const H: f64 = 420.0;
        const M: f64 = 50.0;
        let sx = |v: f64| M + v * (W - 2.0 * M);
        let sy = |v: f64| H - M - v * (H - 2.0 * M);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        for t in 0..=4 {
            let v = t as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
                sx(v),
                H - M + 16.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
                M - 6.0,
                sy(v) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="1.5"/>"#,
            sx(0.0),
            sy(0.0),
            sx(1.0),
            sy(1.0)
        );
        let pts: Vec<String> = self
            .levels
            .iter()
            .zip(&self.picp)
            .map(|(l, p)| format!("{:.2},{:.2}", sx(*l), sy(*p)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="steelblue"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">nominal level</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">PICP</text>"#,
            H / 2.0,
            H / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}

/// Fraction of adjacent head pairs `(k, k+1)` whose value decreases by more
/// than 1e-12, over deterministic passes on every row of `x`.
pub fn crossing_rate(model: &MccqrModel, x: &Matrix) -> Result<f64> {
    let k = model.grid().len();
    if x.rows() == 0 || k < 2 {
        return Ok(0.0);
    }
    let mut crossed = 0usize;
    for row in x.iter_rows() {
        let heads = model.heads(row)?;
        crossed += heads.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    }
    Ok(crossed as f64 / (x.rows() * (k - 1)) as f64)
}

/// Median of `|y_true − y_pred|`; even lengths average the two central values.
pub fn median_abs_error(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Empty("median absolute error of zero samples".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!(
            "{} targets but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut e: Vec<f64> = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(median(&mut e))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
