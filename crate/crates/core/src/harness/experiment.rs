//! Fitting, cross-validation and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::InducingGrid;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Placement};
use crate::harness::data::{load_csv, load_points_csv, Dataset};
use crate::harness::generate::generate;
use crate::harness::metrics::{score_points, summarize, Metrics, PointScore};
use crate::inference::train::{fit, FitResult, ModelBuilder, TemporalModel, TraceRow};
use crate::inference::Algorithm;
use crate::linalg::Gaussian;
use crate::posterior::predict_f;
use crate::spatiotemporal::{st_predict, SpatioTemporalModel};

/// Dataset described by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = match (&cfg.data.path, &cfg.data.generator) {
        (Some(p), _) => load_csv(p, Some(&cfg.likelihood))?,
        (None, Some(g)) => generate(g, cfg.data.n.unwrap_or(0), cfg.data.seed.unwrap_or(0))?,
        _ => return Err(Error::Config("no data source".into())),
    };
    data.check_likelihood(&cfg.likelihood)?;
    let wants_space = cfg.spatial.is_some();
    if wants_space != (data.spatial_dim() > 0) {
        return Err(Error::Config(format!(
            "data has {} spatial columns but the config {} a spatial section",
            data.spatial_dim(),
            if wants_space { "has" } else { "lacks" }
        )));
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub enum Model {
    Temporal(TemporalModel),
    SpaceTime(SpatioTemporalModel),
}

impl Model {
    pub fn builder(&self) -> &dyn ModelBuilder {
        match self {
            Model::Temporal(m) => m,
            Model::SpaceTime(m) => m,
        }
    }
}

fn spatial_locations(
    cfg: &ExperimentConfig,
    train: &Dataset,
    m_override: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let s = cfg
        .spatial
        .as_ref()
        .ok_or_else(|| Error::Config("missing spatial section".into()))?;
    if let (Some(p), None) = (&s.locations, m_override) {
        let z = load_points_csv(p)?;
        if z.iter().any(|v| v.len() != train.spatial_dim()) {
            return Err(Error::Dimension(
                "spatial locations do not match the data's spatial columns".into(),
            ));
        }
        return Ok(z);
    }
    if train.spatial_dim() != 1 {
        return Err(Error::Config(
            "evenly spaced spatial locations need exactly one spatial column; use `locations`"
                .into(),
        ));
    }
    let m = m_override.or(s.m).unwrap_or(1);
    let lo = train.r.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let hi = train
        .r
        .iter()
        .map(|v| v[0])
        .fold(f64::NEG_INFINITY, f64::max);
    if m == 1 {
        return Ok(vec![vec![0.5 * (lo + hi)]]);
    }
    Ok(
        InducingGrid::linspace(lo, if hi > lo { hi } else { lo + 1.0 }, m)?
            .z()
            .iter()
            .map(|&v| vec![v])
            .collect(),
    )
}

/// Model on the training data with `m` temporal inducing inputs (and `m`
/// spatial ones too when `square` is set).
pub fn build_model(
    cfg: &ExperimentConfig,
    train: &Dataset,
    m: usize,
    square: bool,
) -> Result<Model> {
    let grid = match cfg.inducing.placement {
        Placement::Even => InducingGrid::spanning(&train.x, m)?,
        Placement::Data => {
            let mut z = train.x.clone();
            z.dedup();
            InducingGrid::new(z)?
        }
    };
    match &cfg.spatial {
        None => Ok(Model::Temporal(TemporalModel {
            kernel: cfg.kernel.clone(),
            lik: cfg.likelihood.clone(),
            grid,
            x: train.x.clone(),
            y: train.y.clone(),
        })),
        Some(s) => Ok(Model::SpaceTime(SpatioTemporalModel {
            temporal_kernel: cfg.kernel.clone(),
            spatial_kernel: s.kernel.clone(),
            spatial_z: spatial_locations(cfg, train, square.then_some(m))?,
            jitter: s.jitter,
            lik: cfg.likelihood.clone(),
            grid,
            x: train.x.clone(),
            r: train.r.clone(),
            y: train.y.clone(),
        })),
    }
}

pub struct Fitted {
    pub model: Model,
    pub result: FitResult,
}

impl Fitted {
    pub fn predict(&self, data: &Dataset) -> Result<Vec<Gaussian>> {
        let post = self.result.state.posterior();
        match &self.model {
            Model::Temporal(_) => data
                .x
                .par_iter()
                .map(|&x| predict_f(post, &self.result.problem.chain, x))
                .collect(),
            Model::SpaceTime(m) => {
                let st = m.chain(&self.result.log_params)?;
                data.x
                    .par_iter()
                    .zip(&data.r)
                    .map(|(&x, r)| st_predict(post, &st, x, r))
                    .collect()
            }
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        self.result
            .param_names
            .iter()
            .cloned()
            .zip(self.result.log_params.iter().map(|p| p.exp()))
            .collect()
    }

    /// Negative final training objective.
    pub fn nlml(&self) -> f64 {
        self.result.trace.last().map_or(f64::NAN, |t| -t.objective)
    }
}

pub fn fit_model(
    cfg: &ExperimentConfig,
    algorithm: &Algorithm,
    train: &Dataset,
    m: usize,
    square: bool,
) -> Result<Fitted> {
    let model = build_model(cfg, train, m, square)?;
    let result = fit(model.builder(), algorithm, &cfg.train)?;
    Ok(Fitted { model, result })
}

/// Contiguous blocks over the sorted data, rotated by the seed. Test indices per fold.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    if n == 0 || k == 0 {
        return vec![Vec::new(); k];
    }
    let offset = (seed % n as u64) as usize;
    (0..k)
        .map(|f| {
            (f * n / k..(f + 1) * n / k)
                .map(|j| (j + offset) % n)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    pub fold: usize,
    /// Row in the original data file.
    pub row: usize,
    pub x: f64,
    pub r: Vec<f64>,
    pub y: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub score: PointScore,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub train_nlml: f64,
    pub params: BTreeMap<String, f64>,
    pub param_names: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub predictions: Vec<PredictionRow>,
}

impl PredictionRow {
    pub fn batch(
        fold: usize,
        data: &Dataset,
        preds: &[Gaussian],
        scores: &[PointScore],
    ) -> Vec<PredictionRow> {
        (0..data.len())
            .map(|i| PredictionRow {
                fold,
                row: data.order[i],
                x: data.x[i],
                r: data.r[i].clone(),
                y: data.y[i],
                mean: preds[i].mean.iter().copied().collect(),
                var: preds[i].cov.diagonal().iter().copied().collect(),
                score: scores[i],
            })
            .collect()
    }
}

pub fn run_fold(
    cfg: &ExperimentConfig,
    algorithm: &Algorithm,
    data: &Dataset,
    test: &[usize],
    fold: usize,
    m: usize,
    square: bool,
) -> Result<FoldResult> {
    let mut is_test = vec![false; data.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();
    let train = data.subset(&train_idx);
    let test = data.subset(test);
    let fitted = fit_model(cfg, algorithm, &train, m, square)?;
    let preds = fitted.predict(&test)?;
    let scores = score_points(&cfg.likelihood, &preds, &test.y)?;
    Ok(FoldResult {
        fold,
        metrics: summarize(&cfg.likelihood, &scores, &test.y),
        train_nlml: fitted.nlml(),
        params: fitted.params(),
        param_names: fitted.result.param_names.clone(),
        trace: fitted.result.trace.clone(),
        predictions: PredictionRow::batch(fold, &test, &preds, &scores),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> MeanStd {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub nlpd: f64,
    pub rmse: f64,
    pub error_rate: Option<f64>,
    pub train_nlml: f64,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub algorithm: String,
    pub likelihood: String,
    pub n: usize,
    pub m: usize,
    pub folds: usize,
    pub nlpd: MeanStd,
    pub rmse: MeanStd,
    pub error_rate: Option<MeanStd>,
    pub train_nlml: MeanStd,
    pub per_fold: Vec<FoldSummary>,
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub summary: Summary,
    pub folds: Vec<FoldResult>,
}

/// k-fold cross-validation; folds run in parallel.
pub fn cross_validate(
    cfg: &ExperimentConfig,
    algorithm: &Algorithm,
    data: &Dataset,
    m: usize,
    square: bool,
) -> Result<CvRun> {
    let seed = cfg.data.seed.unwrap_or(0);
    let folds = fold_indices(data.len(), cfg.folds, seed);
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| run_fold(cfg, algorithm, data, test, f, m, square))
        .collect::<Result<Vec<_>>>()?;
    let col = |g: &dyn Fn(&FoldResult) -> f64| results.iter().map(g).collect::<Vec<f64>>();
    let error_rate = results[0]
        .metrics
        .error_rate
        .map(|_| MeanStd::of(&col(&|r| r.metrics.error_rate.unwrap_or(f64::NAN))));
    let summary = Summary {
        schema_version: crate::harness::config::SCHEMA_VERSION,
        algorithm: algorithm.label(),
        likelihood: cfg.likelihood.name().to_string(),
        n: data.len(),
        m,
        folds: cfg.folds,
        nlpd: MeanStd::of(&col(&|r| r.metrics.nlpd)),
        rmse: MeanStd::of(&col(&|r| r.metrics.rmse)),
        error_rate,
        train_nlml: MeanStd::of(&col(&|r| r.train_nlml)),
        per_fold: results
            .iter()
            .map(|r| FoldSummary {
                fold: r.fold,
                nlpd: r.metrics.nlpd,
                rmse: r.metrics.rmse,
                error_rate: r.metrics.error_rate,
                train_nlml: r.train_nlml,
                params: r.params.clone(),
            })
            .collect(),
    };
    Ok(CvRun {
        summary,
        folds: results,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn trace_csv(folds: &[(usize, &[String], &[TraceRow])]) -> String {
    let mut out = String::new();
    if let Some((_, names, _)) = folds.first() {
        let _ = writeln!(
            out,
            "fold,iteration,objective,skips{}",
            names.iter().map(|n| format!(",{n}")).collect::<String>()
        );
    }
    for (fold, _, rows) in folds {
        for t in rows.iter() {
            let _ = write!(out, "{fold},{},{},{}", t.iteration, t.objective, t.skips);
            for p in &t.params {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::new();
    let p = rows.first().map_or(0, |r| r.r.len());
    let o = rows.first().map_or(1, |r| r.mean.len());
    out.push_str("fold,row,x");
    (1..=p).for_each(|i| out.push_str(&format!(",r{i}")));
    out.push_str(",y");
    for j in 0..o {
        let s = if o == 1 { String::new() } else { j.to_string() };
        out.push_str(&format!(",mean{s},var{s}"));
    }
    out.push_str(",log_pred,y_mean\n");
    for r in rows {
        let _ = write!(out, "{},{},{}", r.fold, r.row, r.x);
        r.r.iter().for_each(|v| {
            let _ = write!(out, ",{v}");
        });
        let _ = write!(out, ",{}", r.y);
        for j in 0..r.mean.len() {
            let _ = write!(out, ",{},{}", r.mean[j], r.var[j]);
        }
        let _ = writeln!(out, ",{},{}", r.score.log_pred, r.score.y_mean);
    }
    out
}

/// `summary.json`, `trace.csv` and `predictions.csv` under `dir`.
pub fn write_cv(dir: &Path, run: &CvRun) -> Result<()> {
    write_json(&dir.join("summary.json"), &run.summary)?;
    let traces: Vec<(usize, &[String], &[TraceRow])> = run
        .folds
        .iter()
        .map(|f| (f.fold, f.param_names.as_slice(), f.trace.as_slice()))
        .collect();
    write_text(&dir.join("trace.csv"), &trace_csv(&traces))?;
    let preds: Vec<PredictionRow> = run
        .folds
        .iter()
        .flat_map(|f| f.predictions.clone())
        .collect();
    write_text(&dir.join("predictions.csv"), &predictions_csv(&preds))
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub algorithm: String,
    pub nlpd: MeanStd,
    pub rmse: MeanStd,
    pub error_rate: Option<MeanStd>,
    pub train_nlml: MeanStd,
}

impl From<&Summary> for CompareRow {
    fn from(s: &Summary) -> Self {
        CompareRow {
            algorithm: s.algorithm.clone(),
            nlpd: s.nlpd,
            rmse: s.rmse,
            error_rate: s.error_rate,
            train_nlml: s.train_nlml,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub nlml: f64,
    pub nlpd: f64,
    pub error_rate: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = "algorithm,nlpd_mean,nlpd_std,rmse_mean,rmse_std,error_mean,error_std,train_nlml_mean,train_nlml_std\n".to_string();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.nlpd.mean,
            r.nlpd.std,
            r.rmse.mean,
            r.rmse.std,
            opt(r.error_rate.map(|e| e.mean)),
            opt(r.error_rate.map(|e| e.std)),
            r.train_nlml.mean,
            r.train_nlml.std
        );
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = "m,nlml,nlpd,error_rate\n".to_string();
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.m, r.nlml, r.nlpd, opt(r.error_rate));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_data() {
        for (n, k, seed) in [(100, 10, 0), (103, 7, 55), (10, 10, 3), (5, 2, 999)] {
            let folds = fold_indices(n, k, seed);
            let mut seen = vec![0; n];
            for f in &folds {
                for &i in f {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "n={n} k={k}");
        }
    }

    #[test]
    fn folds_are_contiguous_modulo_rotation() {
        let folds = fold_indices(20, 4, 3);
        for f in &folds {
            for w in f.windows(2) {
                assert_eq!(w[1], (w[0] + 1) % 20);
            }
        }
        assert_eq!(folds[0][0], 3);
    }

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }
}
