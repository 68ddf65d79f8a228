use std::collections::BTreeMap;
use std::path::Path;

use mccqr_core::baselines::{lasso_fit, AnnModel, LassoConfig};
use mccqr_core::brainage::{association_test, GapRecord, TermTest};
use mccqr_core::eval::{crossing_rate, median_abs_error, picp_from_bounds, CalibrationReport};
use mccqr_core::io::SavedModel;
use mccqr_core::occlusion::{
    long_format, long_format_csv, occlusion_deltas, region_contrast_fit, OcclusionCovariates,
    RegionAtlas,
};
use mccqr_core::predict::predict_batch;
use mccqr_core::synth::{Family, SyntheticSpec};
use mccqr_core::{Matrix, MccqrModel, RngState};
use serde_json::json;

use crate::table::{read_text, write_csv, write_text, Table};
use crate::{
    AssocArgs, BenchArgs, CliError, DataArgs, ModelKind, OccludeArgs, PicpArgs, PredictArgs,
    ResponseArg, SynthArgs, TrainArgs,
};

fn num(v: f64) -> String {
    format!("{v}")
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))
}

struct Loaded {
    ids: Vec<String>,
    x: Matrix,
    y: Option<Vec<f64>>,
    table: Table,
}

/// Features are every numeric column except the target and `exclude`.
fn load_data(args: &DataArgs, exclude: &[&str], need_target: bool) -> Result<Loaded, CliError> {
    let table = Table::read(&args.data)?;
    let y = if table.has(&args.target) {
        Some(table.column(&args.target)?.to_vec())
    } else if let Some(path) = &args.targets {
        let t = Table::read(path)?;
        if t.n_rows() != table.n_rows() {
            return Err(CliError::Data(format!(
                "{} has {} rows but {} has {}",
                path.display(),
                t.n_rows(),
                args.data.display(),
                table.n_rows()
            )));
        }
        if t.has_ids() && table.has_ids() {
            if let Some(i) = t.ids().iter().zip(table.ids()).position(|(a, b)| *a != b) {
                return Err(CliError::Data(format!(
                    "row {}: id mismatch between {} and {}",
                    i + 1,
                    args.data.display(),
                    path.display()
                )));
            }
        }
        Some(t.column(&args.target)?.to_vec())
    } else {
        None
    };
    if need_target && y.is_none() {
        return Err(CliError::Data(format!(
            "no column '{}' in {} and no --targets file",
            args.target,
            args.data.display()
        )));
    }
    let mut skip: Vec<&str> = exclude.to_vec();
    skip.push(&args.target);
    let names = table.feature_names(&skip);
    if names.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no feature columns",
            args.data.display()
        )));
    }
    let x = table.matrix(&names)?;
    Ok(Loaded {
        ids: table.ids(),
        x,
        y,
        table,
    })
}

fn load_model(path: &Path) -> Result<SavedModel, CliError> {
    SavedModel::from_json(&read_text(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_dim(x: &Matrix, expected: usize) -> Result<(), CliError> {
    if x.cols() != expected {
        return Err(CliError::Data(format!(
            "data has {} feature columns, model expects {expected}",
            x.cols()
        )));
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = SyntheticSpec::new(a.family, a.n, a.d, a.seed);
    if let Some(f) = a.feature_noise {
        spec.feature_noise = f;
    }
    let data = spec.generate()?;
    let prefix = a.out_prefix.to_string_lossy();
    let mut header = vec!["id".to_string()];
    header.extend((0..a.d).map(|j| format!("x{j}")));
    write_csv(
        Path::new(&format!("{prefix}_features.csv")),
        &header,
        data.x.iter_rows().enumerate().map(|(i, r)| {
            let mut row = vec![i.to_string()];
            row.extend(r.iter().map(|v| num(*v)));
            row
        }),
    )?;
    write_csv(
        Path::new(&format!("{prefix}_targets.csv")),
        &["id".to_string(), "y".to_string()],
        data.y
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), num(*v)]),
    )?;
    let formula = match a.family {
        Family::LinearHetero => {
            Some("q(tau|x) = 1 + 2*x0 + (noise_base + noise_slope*x0) * Phi^-1(tau)")
        }
        Family::SineHetero => {
            Some("q(tau|x) = sin(2*x0) + (noise_base + noise_slope*x0) * Phi^-1(tau)")
        }
        Family::AgeLike => None,
    };
    let oracle = json!({
        "format_version": 1,
        "spec": spec,
        "signal_column": "x0",
        "conditional_quantile": formula,
    });
    write_text(
        Path::new(&format!("{prefix}_oracle.json")),
        &(to_json(&oracle)? + "\n"),
    )?;
    log::info!("wrote {} samples with {} features to {prefix}_*", a.n, a.d);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let data = load_data(&a.data, &[], true)?;
    let y = data.y.expect("target required");
    let cfg = a.net.config();
    let saved = match a.model_type {
        ModelKind::Mccqr => SavedModel::Mccqr(MccqrModel::train(&data.x, &y, &cfg)?),
        ModelKind::Ann => SavedModel::Ann(AnnModel::train(&data.x, &y, &cfg)?),
        ModelKind::Lasso => SavedModel::Lasso(lasso_fit(
            &data.x,
            &y,
            &LassoConfig {
                lambda: a.lambda,
                ..LassoConfig::default()
            },
        )?),
    };
    let trace: &[f64] = match &saved {
        SavedModel::Mccqr(m) => m.loss_trace(),
        SavedModel::Ann(m) => &m.loss_trace,
        SavedModel::Lasso(m) => &m.objective_trace,
    };
    for (i, v) in trace.iter().enumerate() {
        eprintln!("epoch {}: loss {v}", i + 1);
    }
    write_text(&a.model_out, &(saved.to_json()? + "\n"))
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?.into_mccqr()?;
    for &l in &a.levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(CliError::Usage(format!("level {l} outside (0, 1)")));
        }
    }
    let data = load_data(&a.data, &[], false)?;
    check_dim(&data.x, model.input_dim())?;
    let dists = predict_batch(&model, &data.x, a.draws, a.mode, &mut RngState::new(a.seed))?;
    let mut header: Vec<String> = ["id", "y_pred_median", "sigma"].map(String::from).to_vec();
    if data.y.is_some() {
        header.push("y_true".into());
    }
    for l in &a.levels {
        header.push(format!("lower_{l}"));
        header.push(format!("upper_{l}"));
    }
    let rows = dists.iter().enumerate().map(|(i, d)| {
        let mut row = vec![data.ids[i].clone(), num(d.median()), num(d.std())];
        if let Some(y) = &data.y {
            row.push(num(y[i]));
        }
        for &l in &a.levels {
            let (lo, hi) = d.central_interval(l);
            row.push(num(lo));
            row.push(num(hi));
        }
        row
    });
    write_csv(&a.out, &header, rows)
}

/// `(level, lower column, upper column)` for every interval pair in a prediction file.
fn interval_columns(t: &Table) -> Vec<(f64, String, String)> {
    let mut out: Vec<(f64, String, String)> = t
        .headers
        .iter()
        .filter_map(|h| {
            let l: f64 = h.strip_prefix("lower_")?.parse().ok()?;
            let upper = t.headers.iter().find(|u| {
                u.strip_prefix("upper_")
                    .and_then(|s| s.parse::<f64>().ok())
                    .is_some_and(|v| v == l)
            })?;
            Some((l, h.clone(), upper.clone()))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn picp(a: &PicpArgs) -> Result<(), CliError> {
    let pred = Table::read(&a.pred)?;
    let y: Vec<f64> = if pred.has("y_true") {
        pred.column("y_true")?.to_vec()
    } else if let Some(path) = &a.truth {
        let t = Table::read(path)?;
        if t.n_rows() != pred.n_rows() {
            return Err(CliError::Data(format!(
                "{} has {} rows, predictions have {}",
                path.display(),
                t.n_rows(),
                pred.n_rows()
            )));
        }
        t.column(&a.target)?.to_vec()
    } else {
        return Err(CliError::Usage(
            "predictions have no y_true column; pass --truth".into(),
        ));
    };
    let available = interval_columns(&pred);
    let chosen: Vec<(f64, String, String)> = match &a.levels {
        None => available,
        Some(levels) => levels
            .iter()
            .map(|&l| {
                available
                    .iter()
                    .find(|(v, _, _)| (v - l).abs() < 1e-12)
                    .cloned()
                    .ok_or_else(|| {
                        CliError::Data(format!(
                            "no lower_{l}/upper_{l} columns in {}",
                            a.pred.display()
                        ))
                    })
            })
            .collect::<Result<_, _>>()?,
    };
    if chosen.is_empty() {
        return Err(CliError::Data(format!(
            "no interval columns in {}",
            a.pred.display()
        )));
    }
    let mut levels = Vec::new();
    let mut coverage = Vec::new();
    for (l, lo, hi) in &chosen {
        levels.push(*l);
        coverage.push(picp_from_bounds(pred.column(lo)?, pred.column(hi)?, &y)?);
    }
    let mut report = CalibrationReport {
        levels,
        picp: coverage,
        n: y.len(),
        crossing_rate: None,
        mae_median: median_abs_error(&y, pred.column("y_pred_median")?)?,
    };
    if let (Some(model), Some(data)) = (&a.model, &a.data) {
        let model = load_model(model)?.into_mccqr()?;
        let loaded = load_data(
            &DataArgs {
                data: data.clone(),
                target: a.target.clone(),
                targets: None,
            },
            &[],
            false,
        )?;
        check_dim(&loaded.x, model.input_dim())?;
        report = report.with_crossing_rate(crossing_rate(&model, &loaded.x)?);
    }
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_text(out, &report.to_csv())?;
    }
    if let Some(svg) = &a.svg {
        write_text(svg, &report.to_svg())?;
    }
    Ok(())
}

const GAP_COLUMNS: [&str; 4] = ["y_true", "y_pred", "y_pred_median", "sigma"];

pub fn assoc(a: &AssocArgs) -> Result<(), CliError> {
    let gaps = Table::read(&a.gaps)?;
    let y_true = gaps.column("y_true")?;
    let y_pred = if gaps.has("y_pred") {
        gaps.column("y_pred")?
    } else {
        gaps.column("y_pred_median")?
    };
    let sigma = gaps.column("sigma")?;
    let mut covs: Vec<(String, Vec<f64>)> = gaps
        .feature_names(&GAP_COLUMNS)
        .into_iter()
        .filter(|h| !h.starts_with("lower_") && !h.starts_with("upper_"))
        .map(|h| {
            let v = gaps.column(&h).expect("listed column").to_vec();
            (h, v)
        })
        .collect();
    if let Some(path) = &a.covariate_file {
        let t = Table::read(path)?;
        if t.n_rows() != gaps.n_rows() {
            return Err(CliError::Data(format!(
                "{} has {} rows, gaps have {}",
                path.display(),
                t.n_rows(),
                gaps.n_rows()
            )));
        }
        for h in t.feature_names(&[]) {
            if covs.iter().all(|(n, _)| *n != h) {
                let v = t.column(&h)?.to_vec();
                covs.push((h, v));
            }
        }
    }
    for name in a.covariates.iter().chain(std::iter::once(&a.predictor)) {
        if !covs.iter().any(|(n, _)| n == name) && !GAP_COLUMNS.contains(&name.as_str()) {
            return Err(CliError::Usage(format!("no column named '{name}'")));
        }
    }
    let records = (0..gaps.n_rows())
        .map(|i| {
            let c: BTreeMap<String, f64> = covs.iter().map(|(n, v)| (n.clone(), v[i])).collect();
            GapRecord::new(y_true[i], y_pred[i], sigma[i], c)
                .map_err(|e| CliError::Data(format!("{}: row {}: {e}", a.gaps.display(), i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let result = association_test(&records, &a.predictor, &a.covariates)?;
    let selected: Vec<(&str, &TermTest)> = match a.response {
        ResponseArg::Bag => vec![("bag", &result.bag)],
        ResponseArg::Bagc => vec![("bagc", &result.bag_corrected)],
        ResponseArg::Both => vec![("bag", &result.bag), ("bagc", &result.bag_corrected)],
    };
    println!(
        "predictor: {}   covariates: {}   n = {}",
        result.predictor,
        result.covariates.join(", "),
        result.n
    );
    println!(
        "{:<8} {:>10} {:>10} {:>10} {:>12} {:>10} {:>10}",
        "response", "estimate", "se", "F", "df", "p", "eta2_p"
    );
    for (name, t) in &selected {
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>12} {:>10.4} {:>10.6}",
            name,
            t.estimate,
            t.std_error,
            t.f,
            format!("({},{})", t.df1, t.df2),
            t.p,
            t.partial_eta_sq
        );
    }
    if let Some(out) = &a.out {
        let tests: BTreeMap<&str, &TermTest> = selected.into_iter().collect();
        let doc = json!({
            "predictor": result.predictor,
            "covariates": result.covariates,
            "n": result.n,
            "tests": tests,
        });
        write_text(out, &(to_json(&doc)? + "\n"))?;
    }
    Ok(())
}

fn read_atlas(
    path: &Path,
    features: &[String],
    allow_overlap: bool,
) -> Result<RegionAtlas, CliError> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(err)?;
    let headers = reader.headers().map_err(err)?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let (Some(rc), Some(fc)) = (
        col(&["region", "region_name"]),
        col(&["feature", "feature_index"]),
    ) else {
        return Err(CliError::Data(format!(
            "{}: atlas needs 'region' and 'feature' columns",
            path.display()
        )));
    };
    let mut pairs = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(err)?;
        let (name, feat) = (rec.get(rc).unwrap_or(""), rec.get(fc).unwrap_or(""));
        let idx = match feat.parse::<usize>() {
            Ok(i) => i,
            Err(_) => features.iter().position(|f| f == feat).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}: unknown feature '{feat}'",
                    path.display(),
                    r + 1
                ))
            })?,
        };
        if name.is_empty() {
            return Err(CliError::Data(format!(
                "{}: row {}: empty region name",
                path.display(),
                r + 1
            )));
        }
        pairs.push((name.to_string(), idx));
    }
    Ok(RegionAtlas::from_pairs(
        features.len(),
        &pairs,
        allow_overlap,
    )?)
}

pub fn occlude(a: &OccludeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?.into_mccqr()?;
    let extra: Vec<&str> = [a.gender_column.as_deref(), a.site_column.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    let data = load_data(&a.data, &extra, true)?;
    check_dim(&data.x, model.input_dim())?;
    let mut skip = extra.clone();
    skip.push(&a.data.target);
    let features = data.table.feature_names(&skip);
    let atlas = read_atlas(&a.atlas, &features, a.allow_overlap)?;
    let y = data.y.as_deref().expect("target required");
    let results = occlusion_deltas(
        &model,
        &data.x,
        y,
        &atlas,
        a.draws,
        &mut RngState::new(a.seed),
    )?;
    let column = |c: &Option<String>| -> Result<Option<Vec<f64>>, CliError> {
        c.as_ref()
            .map(|n| data.table.column(n).map(<[f64]>::to_vec))
            .transpose()
    };
    let covs = OcclusionCovariates::standard(column(&a.gender_column)?, column(&a.site_column)?);
    let rows = long_format(&results, &covs)?;
    write_text(&a.out, &long_format_csv(&rows))?;
    let fit = region_contrast_fit(&results, &covs)?;
    print!("{}", fit.to_table());
    if let Some(path) = &a.summary {
        write_text(path, &(to_json(&fit)? + "\n"))?;
    }
    Ok(())
}

/// Fold index of every row: seeded round-robin over a permutation, or one
/// fold per distinct group value.
fn fold_assignment(
    n: usize,
    folds: usize,
    seed: u64,
    groups: Option<&[f64]>,
) -> Result<(Vec<usize>, usize), CliError> {
    if let Some(g) = groups {
        let mut levels = g.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.len() < 2 {
            return Err(CliError::Data(
                "leave-group-out needs at least two groups".into(),
            ));
        }
        let idx = g
            .iter()
            .map(|v| {
                levels
                    .binary_search_by(|l| l.total_cmp(v))
                    .expect("level present")
            })
            .collect();
        return Ok((idx, levels.len()));
    }
    if folds < 2 || folds > n {
        return Err(CliError::Usage(format!(
            "--folds must be between 2 and {n}"
        )));
    }
    let perm = RngState::new(seed).permutation(n);
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos % folds;
    }
    Ok((fold, folds))
}

fn fit_predict(
    kind: ModelKind,
    a: &BenchArgs,
    x: &Matrix,
    y: &[f64],
    test: &Matrix,
    fold: usize,
) -> Result<Vec<f64>, CliError> {
    let cfg = a.net.config();
    Ok(match kind {
        ModelKind::Mccqr => {
            let model = MccqrModel::train(x, y, &cfg)?;
            let mut rng = RngState::keyed(a.net.seed, fold as u64);
            predict_batch(&model, test, a.draws, Default::default(), &mut rng)?
                .iter()
                .map(|d| d.median())
                .collect()
        }
        ModelKind::Ann => AnnModel::train(x, y, &cfg)?.predict(test)?,
        ModelKind::Lasso => lasso_fit(
            x,
            y,
            &LassoConfig {
                lambda: a.lambda,
                ..LassoConfig::default()
            },
        )?
        .predict(test)?,
    })
}

fn model_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Mccqr => "MCCQR",
        ModelKind::Ann => "ANN",
        ModelKind::Lasso => "LASSO",
    }
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    let exclude: Vec<&str> = a.group_column.as_deref().into_iter().collect();
    let data = load_data(
        &DataArgs {
            data: a.data.clone(),
            target: a.target.clone(),
            targets: a.targets.clone(),
        },
        &exclude,
        true,
    )?;
    let y = data.y.as_deref().expect("target required");
    let groups = a
        .group_column
        .as_ref()
        .map(|g| data.table.column(g))
        .transpose()?;
    let (fold, k) = fold_assignment(y.len(), a.folds, a.net.seed, groups)?;

    let mut csv_rows = Vec::new();
    let mut lines = Vec::new();
    for &kind in &a.models {
        let mut oof = vec![0.0; y.len()];
        let mut per_fold = Vec::with_capacity(k);
        for f in 0..k {
            let test_rows: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let train_rows: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
            let y_test: Vec<f64> = test_rows.iter().map(|&i| y[i]).collect();
            let pred = fit_predict(
                kind,
                a,
                &data.x.select_rows(&train_rows),
                &y_train,
                &data.x.select_rows(&test_rows),
                f,
            )?;
            for (&i, p) in test_rows.iter().zip(&pred) {
                oof[i] = *p;
            }
            let mae = median_abs_error(&y_test, &pred)?;
            log::info!(
                "{} fold {}: median absolute error {mae:.4}",
                model_name(kind),
                f + 1
            );
            csv_rows.push(vec![
                model_name(kind).to_string(),
                (f + 1).to_string(),
                test_rows.len().to_string(),
                num(mae),
            ]);
            per_fold.push(mae);
        }
        let pooled = median_abs_error(y, &oof)?;
        csv_rows.push(vec![
            model_name(kind).to_string(),
            "all".into(),
            y.len().to_string(),
            num(pooled),
        ]);
        lines.push((model_name(kind), pooled, per_fold));
    }
    let scheme = if a.group_column.is_some() {
        "leave-group-out"
    } else {
        "k-fold"
    };
    println!("{scheme} cross-validation, {k} folds, n = {}", y.len());
    println!("{:<8} {:>12}   per-fold", "model", "median AE");
    for (name, pooled, per_fold) in &lines {
        let folds: Vec<String> = per_fold.iter().map(|v| format!("{v:.3}")).collect();
        println!("{name:<8} {pooled:>12.4}   {}", folds.join(" "));
    }
    if let Some(out) = &a.out {
        let header = ["model", "fold", "n", "median_abs_error"].map(String::from);
        write_csv(out, &header, csv_rows)?;
    }
    Ok(())
}
