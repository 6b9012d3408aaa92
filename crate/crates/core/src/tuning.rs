//! Cross-validated tuning of `(λ, α_Enet)`, repeated-split stability
//! selection and the simulation benchmark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{kfold_partition, split_train_test, DataError, SurvivalDataset};
use crate::em::{default_lambda_grid, fit_path, initialize, support, EmError, EmOptions, FitResult, PathOptions};
use crate::gmifs::{gmifs_fit, GmifsError, GmifsOptions};
use crate::metrics::{
    c_statistic, c_statistic_cure, fit_oracle, observed_cure_status, rme_err, selection_metrics, MetricsError,
};
use crate::model::ParamSet;
use crate::optim::{PenaltyConfig, SolverOptions};
use crate::rng::derive_seed;
use crate::simulate::{
    run_monte_carlo, sample_dataset, GeneratedTruth, MetricValues, MonteCarloReport, ReplicationEvaluator,
    SimulationError, SimulationScenario,
};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("invalid tuning configuration: {0}")]
    InvalidConfig(String),
    #[error("no grid cell has a valid held-out score")]
    NoValidCell,
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gmifs(#[from] GmifsError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// λ grid source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    /// Log-spaced from λ_max (computed per α_Enet on the tuning data).
    Auto { n_values: usize, min_ratio: f64 },
    Grid(Vec<f64>),
}

/// EM settings used by the harness: accelerated EM and a looser inner
/// tolerance keep full cross-validated paths affordable.
pub fn harness_em_options() -> EmOptions {
    EmOptions {
        tol: 1e-5,
        max_iter: 500,
        solver: SolverOptions { tol: 1e-5, ..Default::default() },
        accelerate: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub lambda: LambdaSpec,
    pub alpha_grid: Vec<f64>,
    pub folds: usize,
    /// 1 = elastic net, 2 = adaptive elastic net.
    pub stages: usize,
    pub frailty_enabled: bool,
    pub path: PathOptions,
    /// Choose α_Enet by the score on a supplied test set after tuning λ by
    /// cross-validation. Off by default (α_Enet is tuned inside the folds).
    pub alpha_on_test: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            lambda: LambdaSpec::Auto { n_values: 20, min_ratio: 0.05 },
            alpha_grid: vec![0.1, 0.5, 0.9, 1.0],
            folds: 4,
            stages: 2,
            frailty_enabled: true,
            path: PathOptions { em: harness_em_options(), max_support: None, standardize: true },
            alpha_on_test: false,
        }
    }
}

impl TunerConfig {
    fn validate(&self) -> Result<(), TuningError> {
        let bad = |m: &str| Err(TuningError::InvalidConfig(m.into()));
        if self.folds < 2 {
            return bad("at least 2 folds are required");
        }
        if self.alpha_grid.is_empty() {
            return bad("empty α_Enet grid");
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("α_Enet values must lie in (0, 1]");
        }
        match &self.lambda {
            LambdaSpec::Grid(g) if g.is_empty() => bad("empty λ grid"),
            LambdaSpec::Auto { n_values: 0, .. } => bad("λ grid needs at least one value"),
            _ => Ok(()),
        }
    }

    fn grid_for(&self, ds: &SurvivalDataset, init: &ParamSet, alpha: f64) -> Result<Vec<f64>, TuningError> {
        Ok(match &self.lambda {
            LambdaSpec::Grid(g) => g.clone(),
            LambdaSpec::Auto { n_values, min_ratio } => {
                default_lambda_grid(ds, init, alpha, *n_values, *min_ratio, &self.path)?
            }
        })
    }
}

/// Held-out concordance of a fit: latency linear predictor as the risk score,
/// cure-status weights from the observed data (events uncured, censored
/// weighted by `π̂`).
pub fn held_out_c_cure(params: &ParamSet, test: &SurvivalDataset) -> Result<f64, MetricsError> {
    let scores = params.latency_lp(test);
    let pi = params.uncured_probabilities(test);
    c_statistic_cure(&scores, &pi, &test.time, &test.status, &observed_cure_status(&test.status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub alpha_enet: f64,
    pub lambda_index: usize,
    pub lambda: f64,
    /// Held-out score per fold; `None` when that fold's fit failed or the
    /// path stopped before this λ.
    pub fold_scores: Vec<Option<f64>>,
    pub mean: f64,
    pub sd: Option<f64>,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
    /// Index into `cells` of the selected cell.
    pub best: usize,
    pub fold_failures: Vec<String>,
}

/// Best cell among `indices`: highest mean score, then larger λ, then
/// earlier α_Enet.
fn argmax_cell(cells: &[CvCell], indices: impl Iterator<Item = usize>) -> Option<usize> {
    indices.filter(|&i| cells[i].mean.is_finite()).fold(None, |best, i| match best {
        None => Some(i),
        Some(b) => {
            let (x, y) = (&cells[i], &cells[b]);
            let better = x.mean > y.mean || (x.mean == y.mean && x.lambda > y.lambda);
            Some(if better { i } else { b })
        }
    })
}

fn fold_scores(
    ds: &SurvivalDataset,
    test_idx: &[usize],
    grid: &[f64],
    alpha: f64,
    cfg: &TunerConfig,
) -> Result<Vec<Option<f64>>, TuningError> {
    let test_set: std::collections::BTreeSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..ds.n()).filter(|i| !test_set.contains(i)).collect();
    let train = ds.subset(&train_idx);
    let test = ds.subset(test_idx);
    let init = initialize(&train, cfg.frailty_enabled)?;
    let path = fit_path(&train, &PenaltyConfig::new(grid.to_vec(), alpha, cfg.stages), &init, &cfg.path)?;
    Ok((0..grid.len())
        .map(|k| path.get(k, cfg.stages).and_then(|e| held_out_c_cure(&e.fit.params, &test).ok()))
        .collect())
}

/// k-fold cross-validation over the `(λ, α_Enet)` grid, maximizing the mean
/// held-out C_cure.
pub fn cross_validate(ds: &SurvivalDataset, cfg: &TunerConfig, seed: u64) -> Result<(CvTable, Vec<Vec<f64>>), TuningError> {
    cfg.validate()?;
    let folds = kfold_partition(ds.n(), cfg.folds, derive_seed(seed, "cv-folds", 0))?;
    let init = initialize(ds, cfg.frailty_enabled)?;
    let grids: Vec<Vec<f64>> =
        cfg.alpha_grid.iter().map(|&a| cfg.grid_for(ds, &init, a)).collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..cfg.alpha_grid.len()).flat_map(|a| (0..folds.len()).map(move |f| (a, f))).collect();
    let results: Vec<Result<Vec<Option<f64>>, TuningError>> = tasks
        .par_iter()
        .map(|&(a, f)| fold_scores(ds, &folds[f], &grids[a], cfg.alpha_grid[a], cfg))
        .collect();
    let mut fold_failures = Vec::new();
    let mut cells = Vec::new();
    for (a, grid) in grids.iter().enumerate() {
        let per_fold: Vec<Option<&Vec<Option<f64>>>> = (0..folds.len())
            .map(|f| match &results[a * folds.len() + f] {
                Ok(v) => Some(v),
                Err(e) => {
                    fold_failures.push(format!("alpha_enet {} fold {}: {e}", cfg.alpha_grid[a], f + 1));
                    None
                }
            })
            .collect();
        for (k, &lambda) in grid.iter().enumerate() {
            let fold_scores: Vec<Option<f64>> = per_fold.iter().map(|v| v.and_then(|s| s[k])).collect();
            let ok: Vec<f64> = fold_scores.iter().flatten().copied().collect();
            let (mean, sd) = if ok.is_empty() { (f64::NAN, None) } else { crate::simulate::mean_sd(&ok) };
            cells.push(CvCell {
                alpha_enet: cfg.alpha_grid[a],
                lambda_index: k,
                lambda,
                n_failed: fold_scores.len() - ok.len(),
                fold_scores,
                mean,
                sd,
            });
        }
    }
    let best = argmax_cell(&cells, 0..cells.len()).ok_or(TuningError::NoValidCell)?;
    Ok((CvTable { cells, best, fold_failures }, grids))
}

/// Tuned fit on the full data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunedFit {
    pub cv: CvTable,
    pub alpha_enet: f64,
    pub lambda: f64,
    pub fit: FitResult,
}

fn refit(ds: &SurvivalDataset, grid: &[f64], upto: usize, alpha: f64, cfg: &TunerConfig) -> Result<FitResult, TuningError> {
    let init = initialize(ds, cfg.frailty_enabled)?;
    let path = fit_path(ds, &PenaltyConfig::new(grid[..=upto].to_vec(), alpha, cfg.stages), &init, &cfg.path)?;
    let entry = path.final_stage().last().ok_or(TuningError::NoValidCell)?;
    Ok(entry.fit.clone())
}

/// Cross-validates and refits the selected cell on all of `ds`. With
/// `cfg.alpha_on_test` and a test set, λ is tuned per α_Enet by
/// cross-validation and α_Enet is then chosen by the test-set score.
pub fn tune(
    ds: &SurvivalDataset,
    cfg: &TunerConfig,
    seed: u64,
    test: Option<&SurvivalDataset>,
) -> Result<TunedFit, TuningError> {
    let (mut cv, grids) = cross_validate(ds, cfg, seed)?;
    if let (true, Some(test)) = (cfg.alpha_on_test, test) {
        let mut best: Option<(f64, usize, FitResult)> = None;
        for (a, grid) in grids.iter().enumerate() {
            let start = cv.cells.iter().position(|c| c.alpha_enet == cfg.alpha_grid[a]).unwrap_or(0);
            let Some(i) = argmax_cell(&cv.cells, start..start + grid.len()) else { continue };
            let fit = refit(ds, grid, cv.cells[i].lambda_index, cfg.alpha_grid[a], cfg)?;
            let score = held_out_c_cure(&fit.params, test).unwrap_or(f64::NAN);
            if score.is_finite() && best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, i, fit));
            }
        }
        let (_, i, fit) = best.ok_or(TuningError::NoValidCell)?;
        cv.best = i;
        let cell = &cv.cells[i];
        return Ok(TunedFit { alpha_enet: cell.alpha_enet, lambda: cell.lambda, fit, cv });
    }
    let cell = cv.cells[cv.best].clone();
    let a = cfg.alpha_grid.iter().position(|&x| x == cell.alpha_enet).expect("cell alpha is a grid member");
    let fit = refit(ds, &grids[a], cell.lambda_index, cell.alpha_enet, cfg)?;
    Ok(TunedFit { alpha_enet: cell.alpha_enet, lambda: cell.lambda, fit, cv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: usize,
    pub alpha_enet: f64,
    pub lambda: f64,
    pub support_b: Vec<usize>,
    pub support_beta: Vec<usize>,
    pub test_c_cure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub splits: usize,
    /// Number of successful splits selecting each coordinate.
    pub frequency_b: Vec<usize>,
    pub frequency_beta: Vec<usize>,
    pub union_b: Vec<usize>,
    pub union_beta: Vec<usize>,
    /// Coefficients averaged over successful splits, zeros included.
    pub mean_b: Vec<f64>,
    pub mean_beta: Vec<f64>,
    pub per_split: Vec<SplitSummary>,
    pub failures: Vec<(usize, String)>,
}

/// Repeats random train/test splitting with tuning on each training part.
pub fn repeated_split_selection(
    ds: &SurvivalDataset,
    splits: usize,
    test_fraction: f64,
    cfg: &TunerConfig,
    seed: u64,
) -> Result<StabilityReport, TuningError> {
    if splits == 0 {
        return Err(TuningError::InvalidConfig("at least one split is required".into()));
    }
    let results: Vec<Result<(SplitSummary, ParamSet), String>> = (0..splits)
        .into_par_iter()
        .map(|r| {
            let (train, test) =
                split_train_test(ds, test_fraction, derive_seed(seed, "split", r as u64)).map_err(|e| e.to_string())?;
            let tuned = tune(&train, cfg, derive_seed(seed, "split-cv", r as u64), Some(&test)).map_err(|e| e.to_string())?;
            let p = tuned.fit.params;
            let summary = SplitSummary {
                split: r,
                alpha_enet: tuned.alpha_enet,
                lambda: tuned.lambda,
                support_b: support(&p.b_p),
                support_beta: support(&p.beta_p),
                test_c_cure: held_out_c_cure(&p, &test).ok(),
            };
            Ok((summary, p))
        })
        .collect();
    let (pb, pbeta) = (ds.z_pen.ncols(), ds.x_pen.ncols());
    let mut report = StabilityReport {
        splits,
        frequency_b: vec![0; pb],
        frequency_beta: vec![0; pbeta],
        union_b: Vec::new(),
        union_beta: Vec::new(),
        mean_b: vec![0.0; pb],
        mean_beta: vec![0.0; pbeta],
        per_split: Vec::new(),
        failures: Vec::new(),
    };
    let mut ok = 0usize;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok((summary, p)) => {
                ok += 1;
                summary.support_b.iter().for_each(|&j| report.frequency_b[j] += 1);
                summary.support_beta.iter().for_each(|&j| report.frequency_beta[j] += 1);
                report.mean_b.iter_mut().zip(&p.b_p).for_each(|(m, c)| *m += c);
                report.mean_beta.iter_mut().zip(&p.beta_p).for_each(|(m, c)| *m += c);
                report.per_split.push(summary);
            }
            Err(msg) => report.failures.push((r, msg)),
        }
    }
    if ok > 0 {
        report.mean_b.iter_mut().for_each(|m| *m /= ok as f64);
        report.mean_beta.iter_mut().for_each(|m| *m /= ok as f64);
    }
    report.union_b = (0..pb).filter(|&j| report.frequency_b[j] > 0).collect();
    report.union_beta = (0..pbeta).filter(|&j| report.frequency_beta[j] > 0).collect();
    Ok(report)
}

/// Methods compared in the simulation benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// EM with λ tuned by cross-validation at a fixed α_Enet.
    Em { alpha_enet: f64 },
    /// Stagewise fit of the frailty model.
    Gmifs,
    /// Stagewise fit without frailty.
    McmGmifs,
    /// Unpenalized fit on the true support.
    Oracle,
}

impl BenchMethod {
    pub fn name(&self) -> String {
        match self {
            BenchMethod::Em { alpha_enet } => format!("penMCFM-EM(alpha={alpha_enet})"),
            BenchMethod::Gmifs => "penMCFM-GMIFS".into(),
            BenchMethod::McmGmifs => "MCM-GMIFS".into(),
            BenchMethod::Oracle => "oracle".into(),
        }
    }

    pub fn default_set(alpha_grid: &[f64]) -> Vec<BenchMethod> {
        let mut m: Vec<BenchMethod> = alpha_grid.iter().map(|&a| BenchMethod::Em { alpha_enet: a }).collect();
        m.extend([BenchMethod::Gmifs, BenchMethod::McmGmifs, BenchMethod::Oracle]);
        m
    }
}

/// Competitors that are reported as absent rather than fitted.
pub const ABSENT_METHODS: [&str; 1] = ["penCox.1se"];

pub struct BenchmarkEvaluator {
    pub scenario: SimulationScenario,
    pub methods: Vec<BenchMethod>,
    pub tuner: TunerConfig,
    pub gmifs: GmifsOptions,
    /// Size of the independent test sample drawn per replication.
    pub n_test: usize,
}

impl BenchmarkEvaluator {
    pub fn new(scenario: SimulationScenario, methods: Vec<BenchMethod>) -> Self {
        let n_test = scenario.n;
        BenchmarkEvaluator { scenario, methods, tuner: TunerConfig::default(), gmifs: GmifsOptions::default(), n_test }
    }
}

fn push_selection(out: &mut MetricValues, suffix: &str, truth: &[f64], est: &[f64]) {
    if let Ok(s) = selection_metrics(truth, est) {
        out.push((format!("sensitivity_{suffix}"), s.sensitivity));
        out.push((format!("specificity_{suffix}"), s.specificity));
        out.push((format!("fpr_{suffix}"), s.fpr));
    }
    out.push((format!("nonzero_{suffix}"), support(est).len() as f64));
}

/// Table metrics of one fitted parameter set on a replication.
pub fn replication_metrics(
    params: &ParamSet,
    truth: &GeneratedTruth,
    test: &SurvivalDataset,
    oracle: Option<&ParamSet>,
) -> MetricValues {
    let ds = &truth.dataset;
    let tp = &truth.params;
    let mut out = MetricValues::new();
    push_selection(&mut out, "beta", &tp.beta_p, &params.beta_p);
    push_selection(&mut out, "b", &tp.b_p, &params.b_p);
    if let Some(o) = oracle {
        for (suffix, est, t, or) in
            [("beta", &params.beta_p, &tp.beta_p, &o.beta_p), ("b", &params.b_p, &tp.b_p, &o.b_p)]
        {
            if let Ok(e) = rme_err(est, t, &truth.covariance, or) {
                out.push((format!("rme_{suffix}"), e.rme));
                out.push((format!("err_{suffix}"), e.err));
            }
        }
    }
    for (suffix, est, t) in [("beta", &params.beta_p, &tp.beta_p), ("b", &params.b_p, &tp.b_p)] {
        if let Ok(e) = rme_err(est, t, &truth.covariance, &vec![0.0; t.len()]) {
            out.push((format!("rme_null_{suffix}"), e.rme));
        }
    }
    if let Some(pi_true) = &ds.pi_true {
        let pi_hat = params.uncured_probabilities(ds);
        let n = pi_hat.len() as f64;
        out.push(("bias_pi".into(), pi_hat.iter().zip(pi_true).map(|(h, t)| h - t).sum::<f64>() / n));
        out.push(("mse_pi".into(), pi_hat.iter().zip(pi_true).map(|(h, t)| (h - t) * (h - t)).sum::<f64>() / n));
    }
    for (suffix, data) in [("train", ds), ("test", test)] {
        let scores = params.latency_lp(data);
        if let Ok(c) = c_statistic(&scores, &data.time, &data.status) {
            out.push((format!("c_{suffix}"), c));
        }
        if let Ok(c) = held_out_c_cure(params, data) {
            out.push((format!("c_cure_{suffix}"), c));
        }
    }
    out
}

impl ReplicationEvaluator for BenchmarkEvaluator {
    fn methods(&self) -> Vec<String> {
        self.methods.iter().map(BenchMethod::name).collect()
    }

    fn evaluate(&self, truth: &GeneratedTruth, replication: usize, seed: u64) -> Vec<Result<MetricValues, String>> {
        let _ = replication;
        let ds = &truth.dataset;
        let test_sc = SimulationScenario { n: self.n_test, ..self.scenario.clone() };
        let test = match sample_dataset(&test_sc, &truth.params, derive_seed(seed, "test", 0)) {
            Ok(t) => t,
            Err(e) => return self.methods.iter().map(|_| Err(format!("test sample: {e}"))).collect(),
        };
        let sig = &truth.signal_indices;
        let oracle = fit_oracle(ds, sig, sig, self.tuner.frailty_enabled, &self.tuner.path.em).map(|f| f.params);
        self.methods
            .iter()
            .enumerate()
            .map(|(k, method)| {
                let params = match method {
                    BenchMethod::Em { alpha_enet } => {
                        let cfg = TunerConfig { alpha_grid: vec![*alpha_enet], ..self.tuner.clone() };
                        tune(ds, &cfg, derive_seed(seed, "cv", k as u64), None).map(|t| t.fit.params).map_err(|e| e.to_string())
                    }
                    BenchMethod::Gmifs => gmifs_fit(ds, true, &self.gmifs).map(|f| f.params).map_err(|e| e.to_string()),
                    BenchMethod::McmGmifs => gmifs_fit(ds, false, &self.gmifs).map(|f| f.params).map_err(|e| e.to_string()),
                    BenchMethod::Oracle => oracle.as_ref().map(Clone::clone).map_err(|e| e.to_string()),
                }?;
                Ok(replication_metrics(&params, truth, &test, oracle.as_ref().ok()))
            })
            .collect()
    }
}

/// Run description written next to benchmark reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchManifest {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub replications: usize,
    pub scenarios: Vec<(String, SimulationScenario)>,
    pub methods: Vec<String>,
    pub absent_methods: Vec<String>,
    pub tuner: TunerConfig,
    pub gmifs: GmifsOptions,
    /// Per scenario: mean censoring and cure proportions.
    pub censoring_rate: Vec<f64>,
    pub cure_rate: Vec<f64>,
    pub failures: Vec<(String, usize, String, String)>,
    /// Seconds since the Unix epoch; the only field that varies across
    /// identical runs.
    pub created_unix: u64,
}

/// Monte Carlo comparison of `methods` on each scenario; replication seeds
/// derive from each scenario's own seed.
pub fn benchmark(
    scenarios: &[(String, SimulationScenario)],
    methods: &[BenchMethod],
    replications: usize,
    tuner: &TunerConfig,
    gmifs: &GmifsOptions,
) -> Result<(Vec<MonteCarloReport>, BenchManifest), TuningError> {
    let mut reports = Vec::new();
    for (name, sc) in scenarios {
        let evaluator = BenchmarkEvaluator {
            scenario: sc.clone(),
            methods: methods.to_vec(),
            tuner: tuner.clone(),
            gmifs: gmifs.clone(),
            n_test: sc.n,
        };
        reports.push(run_monte_carlo(name, sc, replications, &evaluator)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let manifest = BenchManifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: scenarios.first().map_or(0, |s| s.1.seed),
        replications,
        scenarios: scenarios.to_vec(),
        methods: methods.iter().map(BenchMethod::name).collect(),
        absent_methods: ABSENT_METHODS.iter().map(|s| s.to_string()).collect(),
        tuner: tuner.clone(),
        gmifs: gmifs.clone(),
        censoring_rate: reports.iter().map(|r| mean(&r.censoring_rate)).collect(),
        cure_rate: reports.iter().map(|r| mean(&r.cure_rate)).collect(),
        failures: reports
            .iter()
            .flat_map(|r| r.failures.iter().map(move |(k, m, e)| (r.scenario.clone(), *k, m.clone(), e.clone())))
            .collect(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    Ok((reports, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(alpha: f64, lambda: f64, mean: f64) -> CvCell {
        CvCell { alpha_enet: alpha, lambda_index: 0, lambda, fold_scores: vec![], mean, sd: None, n_failed: 0 }
    }

    #[test]
    fn ties_go_to_the_larger_lambda() {
        let cells = vec![cell(1.0, 0.5, 0.7), cell(1.0, 0.2, 0.7), cell(0.5, 0.9, 0.7), cell(0.5, 0.1, 0.6)];
        assert_eq!(argmax_cell(&cells, 0..4), Some(2));
    }

    #[test]
    fn nan_cells_are_skipped() {
        let cells = vec![cell(1.0, 0.5, f64::NAN), cell(1.0, 0.2, 0.6)];
        assert_eq!(argmax_cell(&cells, 0..2), Some(1));
        assert_eq!(argmax_cell(&cells[..1], 0..1), None);
    }

    #[test]
    fn config_validation() {
        let bad_folds = TunerConfig { folds: 1, ..Default::default() };
        assert!(bad_folds.validate().is_err());
        let bad_alpha = TunerConfig { alpha_grid: vec![0.0], ..Default::default() };
        assert!(bad_alpha.validate().is_err());
        let empty = TunerConfig { lambda: LambdaSpec::Grid(vec![]), ..Default::default() };
        assert!(empty.validate().is_err());
        assert!(TunerConfig::default().validate().is_ok());
    }
}
