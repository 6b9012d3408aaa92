//! `penmcfm`: batch interface for simulation, fitting, tuning, benchmarking
//! and evaluation of penalized mixture cure frailty models.
//!
//! Every setting resolves as command-line flag, then `--config` file key,
//! then built-in default. Exit codes: 0 success, 1 input or solver error,
//! 2 a fit stopped at the iteration limit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ndarray::Axis;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use penmcfm::data::{validate_dataset, ColumnRoles, DataError, SurvivalDataset};
use penmcfm::em::{
    default_lambda_grid, fit_path, initialize, support, EmError, EmOptions, FitResult, PathOptions, PathResult,
};
use penmcfm::gmifs::{gmifs_fit, GmifsError, GmifsOptions};
use penmcfm::io::{read_json, read_table_file, roles_of, write_dataset_file, write_json, write_report};
use penmcfm::metrics::{
    c_statistic, fit_oracle, logrank_test, prognostic_risk_score, rme_err, selection_metrics, LogRank, MetricsError,
};
use penmcfm::model::ParamSet;
use penmcfm::optim::PenaltyConfig;
use penmcfm::simulate::{simulate, SimulationError, SimulationScenario};
use penmcfm::tuning::{
    benchmark, held_out_c_cure, repeated_split_selection, tune, BenchMethod, LambdaSpec, StabilityReport,
    TunerConfig, TuningError,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Data { context: String, source: DataError },
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Gmifs(#[from] GmifsError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on `{path}`: {message}")]
    Io { path: String, message: String },
}

fn data_err(context: impl Into<String>) -> impl FnOnce(DataError) -> CliError {
    let context = context.into();
    move |source| CliError::Data { context, source }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Em,
    Gmifs,
}

#[derive(Parser)]
#[command(name = "penmcfm", version, about = "Penalized Weibull mixture cure frailty models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

/// Flags shared by all commands. Each may also be set by the config key
/// given in brackets.
#[derive(Args, Debug, Default)]
struct Shared {
    /// JSON config file; its keys fill any flag not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV [data].
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Column-role JSON for the input CSV [roles; default: <data>.roles.json].
    #[arg(long, global = true)]
    roles: Option<PathBuf>,
    /// Output directory [out; default: .].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; all randomness derives from it [seed; default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it [threads; default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Gamma frailty in the latency part [frailty; default: on].
    #[arg(long, global = true, value_enum)]
    frailty: Option<Toggle>,
    /// Fitting method [method; default: em].
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
    /// Elastic-net mixing value, or a comma-separated grid for cv and bench
    /// [alpha_enet; default: 1 for fit, 0.1,0.5,0.9,1 for cv and bench].
    #[arg(long = "alpha-enet", global = true)]
    alpha_enet: Option<String>,
    /// `auto` (cross-validated), `path` (whole grid), `max` (λ_max) or a number
    /// [lambda; default: auto].
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// 1 = elastic net, 2 = adaptive elastic net [k_stages; default: 2].
    #[arg(long = "k-stages", global = true)]
    k_stages: Option<usize>,
    /// EM convergence tolerance on objective components [tol; default: 1e-5].
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// EM iteration limit per fit [max_iter; default: 500].
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset: data.csv, data.roles.json, truth.json.
    Simulate {
        /// Scenario JSON [scenario; default: built-in design].
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Fit one model: fit.json, plus path.csv for paths and GMIFS.
    Fit,
    /// Cross-validate (λ, α_Enet): cv.json and cv.csv; with --splits,
    /// repeated-split stability selection: stability.json.
    Cv {
        /// Folds [folds; default: 4].
        #[arg(long)]
        folds: Option<usize>,
        /// Automatic λ grid size [n_lambda; default: 20].
        #[arg(long = "n-lambda")]
        n_lambda: Option<usize>,
        /// Repeated random splits [splits].
        #[arg(long)]
        splits: Option<usize>,
        /// Test share of each split [test_fraction; default: 0.2].
        #[arg(long = "test-fraction")]
        test_fraction: Option<f64>,
        /// Choose α_Enet on each split's test part [alpha_on_test; default: false].
        #[arg(long = "alpha-on-test")]
        alpha_on_test: bool,
    },
    /// Monte Carlo benchmark: bench.csv and manifest.json.
    Bench {
        /// Scenario JSON [scenario; default: built-in design].
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Replications [replications; default: 10].
        #[arg(long)]
        replications: Option<usize>,
        /// Automatic λ grid size [n_lambda; default: 20].
        #[arg(long = "n-lambda")]
        n_lambda: Option<usize>,
        /// GMIFS step limit [max_steps; default: 20000].
        #[arg(long = "max-steps")]
        max_steps: Option<usize>,
    },
    /// Compare a fit with the simulation truth: metrics.csv and metrics.json.
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        fit: PathBuf,
    },
    /// Prognostic risk score over the selected latency covariates, median
    /// split and log-rank test: prs.csv and prs.json.
    Prs {
        /// fit.json or stability.json supplying the coefficients.
        #[arg(long)]
        fit: PathBuf,
    },
}

/// Config file: any subset of the flag keys.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    roles: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    frailty: Option<Toggle>,
    method: Option<Method>,
    alpha_enet: Option<serde_json::Value>,
    lambda: Option<serde_json::Value>,
    k_stages: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    scenario: Option<PathBuf>,
    folds: Option<usize>,
    n_lambda: Option<usize>,
    splits: Option<usize>,
    test_fraction: Option<f64>,
    alpha_on_test: Option<bool>,
    replications: Option<usize>,
    max_steps: Option<usize>,
}

fn json_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) => items.iter().map(json_to_string).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Resolved settings.
struct Settings {
    data: Option<PathBuf>,
    roles: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    frailty: bool,
    method: Method,
    alpha_enet: Option<Vec<f64>>,
    lambda: String,
    k_stages: usize,
    em: EmOptions,
    file: FileConfig,
}

impl Settings {
    fn resolve(shared: Shared) -> Result<Self, CliError> {
        let file: FileConfig = match &shared.config {
            Some(p) => read_json(p).map_err(data_err("config"))?,
            None => FileConfig::default(),
        };
        if let Some(n) = shared.threads.or(file.threads) {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        }
        let alpha_enet = match shared.alpha_enet.or_else(|| file.alpha_enet.as_ref().map(json_to_string)) {
            Some(s) => Some(parse_list(&s)?),
            None => None,
        };
        let k_stages = shared.k_stages.or(file.k_stages).unwrap_or(2);
        if !(1..=2).contains(&k_stages) {
            return Err(CliError::Usage(format!("--k-stages must be 1 or 2, got {k_stages}")));
        }
        let base = penmcfm::tuning::harness_em_options();
        let em = EmOptions {
            tol: shared.tol.or(file.tol).unwrap_or(base.tol),
            max_iter: shared.max_iter.or(file.max_iter).unwrap_or(base.max_iter),
            ..base
        };
        Ok(Settings {
            data: shared.data.or(file.data.clone()),
            roles: shared.roles.or(file.roles.clone()),
            out: shared.out.or(file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
            seed: shared.seed.or(file.seed).unwrap_or(1),
            frailty: shared.frailty.or(file.frailty).unwrap_or(Toggle::On) == Toggle::On,
            method: shared.method.or(file.method).unwrap_or(Method::Em),
            alpha_enet,
            lambda: shared
                .lambda
                .or_else(|| file.lambda.as_ref().map(json_to_string))
                .unwrap_or_else(|| "auto".into()),
            k_stages,
            em,
            file,
        })
    }

    fn out_file(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        Ok(self.out.join(name))
    }

    fn dataset(&self) -> Result<SurvivalDataset, CliError> {
        let data = self.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
        let roles_path = self.roles.clone().unwrap_or_else(|| data.with_extension("roles.json"));
        let roles: ColumnRoles = read_json(&roles_path).map_err(data_err("roles"))?;
        let table = read_table_file(data).map_err(data_err(data.display().to_string()))?;
        let (ds, report) = validate_dataset(&table, &roles).map_err(data_err(data.display().to_string()))?;
        for name in report.constant_penalized {
            eprintln!("warning: penalized column `{name}` is constant and is excluded");
        }
        Ok(ds)
    }

    fn path_options(&self) -> PathOptions {
        PathOptions { em: self.em, max_support: None, standardize: true }
    }

    fn alpha_single(&self) -> Result<f64, CliError> {
        match self.alpha_enet.as_deref() {
            None => Ok(1.0),
            Some([a]) => Ok(*a),
            Some(_) => Err(CliError::Usage("fit takes a single --alpha-enet value".into())),
        }
    }

    fn alpha_grid(&self) -> Vec<f64> {
        self.alpha_enet.clone().unwrap_or_else(|| vec![0.1, 0.5, 0.9, 1.0])
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("`{v}` is not a number"))))
        .collect()
}

fn load_scenario(path: Option<&PathBuf>, seed: Option<u64>) -> Result<SimulationScenario, CliError> {
    let mut sc: SimulationScenario = match path {
        Some(p) => read_json(p).map_err(data_err("scenario"))?,
        None => SimulationScenario::default(),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate()?;
    Ok(sc)
}

/// Simulation truth written next to a simulated dataset.
#[derive(Serialize, Deserialize)]
struct TruthFile {
    scenario: SimulationScenario,
    params: ParamSet,
    signal_indices: Vec<usize>,
    y_true: Vec<bool>,
    pi_true: Vec<f64>,
}

/// Output of `fit`.
#[derive(Serialize, Deserialize)]
struct FitFile {
    method: Method,
    frailty_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_enet: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stages: Option<usize>,
    converged: bool,
    /// Selected model on the original covariate scale.
    params: ParamSet,
    selected_support_b: Vec<usize>,
    selected_support_beta: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<PathResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gmifs_selected_step: Option<usize>,
}

impl FitFile {
    fn from_fit(s: &Settings, alpha: f64, lambda: f64, fit: FitResult) -> Self {
        FitFile {
            method: Method::Em,
            frailty_enabled: s.frailty,
            alpha_enet: Some(alpha),
            lambda: Some(lambda),
            stages: Some(s.k_stages),
            converged: fit.converged,
            params: fit.params.clone(),
            selected_support_b: fit.selected_support_b.clone(),
            selected_support_beta: fit.selected_support_beta.clone(),
            fit: Some(fit),
            path: None,
            gmifs_selected_step: None,
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn cmd_simulate(s: &Settings, scenario: Option<PathBuf>, seed_flag: Option<u64>) -> Result<Outcome, CliError> {
    let path = scenario.or(s.file.scenario.clone());
    let sc = load_scenario(path.as_ref(), seed_flag.or(s.file.seed))?;
    let truth = simulate(&sc)?;
    let ds = &truth.dataset;
    write_dataset_file(ds, &s.out_file("data.csv")?).map_err(data_err("data.csv"))?;
    write_json(&roles_of(ds), &s.out_file("data.roles.json")?).map_err(data_err("roles"))?;
    let file = TruthFile {
        scenario: sc,
        params: truth.params.clone(),
        signal_indices: truth.signal_indices.clone(),
        y_true: ds.y_true.as_ref().map(|y| y.iter().map(|v| v.unwrap_or(false)).collect()).unwrap_or_default(),
        pi_true: ds.pi_true.clone().unwrap_or_default(),
    };
    write_json(&file, &s.out_file("truth.json")?).map_err(data_err("truth.json"))?;
    Ok(Outcome::Done)
}

fn write_path_csv(path: &PathResult, out: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| CliError::Io { path: out.display().to_string(), message: e.to_string() };
    w.write_record(["lambda_b", "lambda_beta", "stage", "iterations", "converged", "nonzero_b", "nonzero_beta"])
        .map_err(csv_err)?;
    for e in &path.entries {
        w.write_record([
            e.lambda_b.to_string(),
            e.lambda_beta.to_string(),
            e.stage.to_string(),
            e.fit.iterations.to_string(),
            e.fit.converged.to_string(),
            e.fit.selected_support_b.len().to_string(),
            e.fit.selected_support_beta.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(out))
}

fn cmd_fit(s: &Settings) -> Result<Outcome, CliError> {
    let ds = s.dataset()?;
    let file = match s.method {
        Method::Gmifs => {
            let opts = GmifsOptions { max_steps: s.file.max_steps.unwrap_or(20_000), ..Default::default() };
            let fit = gmifs_fit(&ds, s.frailty, &opts)?;
            let out = s.out_file("path.csv")?;
            fit.state.write_path_csv(fs::File::create(&out).map_err(io_err(&out))?)?;
            FitFile {
                method: Method::Gmifs,
                frailty_enabled: s.frailty,
                alpha_enet: None,
                lambda: None,
                stages: None,
                converged: true,
                selected_support_b: support(&fit.params.b_p),
                selected_support_beta: support(&fit.params.beta_p),
                params: fit.params,
                fit: None,
                path: None,
                gmifs_selected_step: Some(fit.selected_step),
            }
        }
        Method::Em => {
            let alpha = s.alpha_single()?;
            let popts = s.path_options();
            let init = initialize(&ds, s.frailty)?;
            match s.lambda.as_str() {
                "auto" => {
                    let cfg = TunerConfig {
                        alpha_grid: vec![alpha],
                        stages: s.k_stages,
                        frailty_enabled: s.frailty,
                        path: popts,
                        lambda: LambdaSpec::Auto { n_values: s.file.n_lambda.unwrap_or(20), min_ratio: 0.05 },
                        folds: s.file.folds.unwrap_or(4),
                        ..Default::default()
                    };
                    let tuned = tune(&ds, &cfg, s.seed, None)?;
                    FitFile::from_fit(s, alpha, tuned.lambda, tuned.fit)
                }
                "path" => {
                    let grid = default_lambda_grid(&ds, &init, alpha, s.file.n_lambda.unwrap_or(20), 0.05, &popts)?;
                    let path = fit_path(&ds, &PenaltyConfig::new(grid, alpha, s.k_stages), &init, &popts)?;
                    write_path_csv(&path, &s.out_file("path.csv")?)?;
                    let last = path.final_stage().last().expect("non-empty path").clone();
                    let mut file = FitFile::from_fit(s, alpha, last.lambda_b, last.fit);
                    file.converged = path.entries.iter().all(|e| e.fit.converged);
                    file.fit = None;
                    file.path = Some(path);
                    file
                }
                value => {
                    let lambda = if value == "max" {
                        default_lambda_grid(&ds, &init, alpha, 1, 0.05, &popts)?[0]
                    } else {
                        value
                            .parse::<f64>()
                            .ok()
                            .filter(|l| *l >= 0.0)
                            .ok_or_else(|| CliError::Usage(format!("--lambda `{value}` is not auto, path, max or a number ≥ 0")))?
                    };
                    let path = fit_path(&ds, &PenaltyConfig::new(vec![lambda], alpha, s.k_stages), &init, &popts)?;
                    let last = path.final_stage().last().expect("single-λ path").clone();
                    let mut file = FitFile::from_fit(s, alpha, lambda, last.fit);
                    file.converged = path.entries.iter().all(|e| e.fit.converged);
                    file
                }
            }
        }
    };
    write_json(&file, &s.out_file("fit.json")?).map_err(data_err("fit.json"))?;
    Ok(if file.converged { Outcome::Done } else { Outcome::NotConverged })
}

fn cmd_cv(
    s: &Settings,
    folds: Option<usize>,
    n_lambda: Option<usize>,
    splits: Option<usize>,
    test_fraction: Option<f64>,
    alpha_on_test: bool,
) -> Result<Outcome, CliError> {
    let ds = s.dataset()?;
    let lambda = match s.lambda.as_str() {
        "auto" | "path" => LambdaSpec::Auto { n_values: n_lambda.or(s.file.n_lambda).unwrap_or(20), min_ratio: 0.05 },
        other => LambdaSpec::Grid(parse_list(other)?),
    };
    let cfg = TunerConfig {
        lambda,
        alpha_grid: s.alpha_grid(),
        folds: folds.or(s.file.folds).unwrap_or(4),
        stages: s.k_stages,
        frailty_enabled: s.frailty,
        path: s.path_options(),
        alpha_on_test: alpha_on_test || s.file.alpha_on_test.unwrap_or(false),
    };
    if let Some(r) = splits.or(s.file.splits) {
        let report =
            repeated_split_selection(&ds, r, test_fraction.or(s.file.test_fraction).unwrap_or(0.2), &cfg, s.seed)?;
        write_json(&report, &s.out_file("stability.json")?).map_err(data_err("stability.json"))?;
        return Ok(Outcome::Done);
    }
    let tuned = tune(&ds, &cfg, s.seed, None)?;
    let out = s.out_file("cv.csv")?;
    let mut w = csv::Writer::from_path(&out).map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| CliError::Io { path: out.display().to_string(), message: e.to_string() };
    w.write_record(["alpha_enet", "lambda", "fold", "c_cure"]).map_err(csv_err)?;
    for cell in &tuned.cv.cells {
        for (f, score) in cell.fold_scores.iter().enumerate() {
            w.write_record([
                cell.alpha_enet.to_string(),
                cell.lambda.to_string(),
                (f + 1).to_string(),
                score.map_or_else(String::new, |v| v.to_string()),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(&out))?;
    let converged = tuned.fit.converged;
    write_json(&tuned, &s.out_file("cv.json")?).map_err(data_err("cv.json"))?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

fn cmd_bench(
    s: &Settings,
    scenario: Option<PathBuf>,
    replications: Option<usize>,
    n_lambda: Option<usize>,
    max_steps: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<Outcome, CliError> {
    let path = scenario.or(s.file.scenario.clone());
    let sc = load_scenario(path.as_ref(), seed_flag.or(s.file.seed))?;
    let name = path
        .as_ref()
        .and_then(|p| p.file_stem())
        .map_or_else(|| "default".to_string(), |n| n.to_string_lossy().into_owned());
    let alpha_grid = s.alpha_grid();
    let tuner = TunerConfig {
        lambda: LambdaSpec::Auto { n_values: n_lambda.or(s.file.n_lambda).unwrap_or(20), min_ratio: 0.05 },
        alpha_grid: alpha_grid.clone(),
        folds: s.file.folds.unwrap_or(4),
        stages: s.k_stages,
        frailty_enabled: s.frailty,
        path: s.path_options(),
        alpha_on_test: false,
    };
    let gmifs = GmifsOptions { max_steps: max_steps.or(s.file.max_steps).unwrap_or(20_000), ..Default::default() };
    let methods = BenchMethod::default_set(&alpha_grid);
    let m = replications.or(s.file.replications).unwrap_or(10);
    let (reports, manifest) = benchmark(&[(name, sc)], &methods, m, &tuner, &gmifs)?;
    let out = s.out_file("bench.csv")?;
    write_report(&reports, fs::File::create(&out).map_err(io_err(&out))?)
        .map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    write_json(&manifest, &s.out_file("manifest.json")?).map_err(data_err("manifest.json"))?;
    Ok(Outcome::Done)
}

fn cmd_metrics(s: &Settings, truth_path: &Path, fit_path_: &Path) -> Result<Outcome, CliError> {
    let truth: TruthFile = read_json(truth_path).map_err(data_err("truth"))?;
    let fit: FitFile = read_json(fit_path_).map_err(data_err("fit"))?;
    let (t, p) = (&truth.params, &fit.params);
    let mut rows: Vec<(String, f64)> = Vec::new();
    for (suffix, tc, ec) in [("beta", &t.beta_p, &p.beta_p), ("b", &t.b_p, &p.b_p)] {
        let sm = selection_metrics(tc, ec)?;
        rows.push((format!("sensitivity_{suffix}"), sm.sensitivity));
        rows.push((format!("specificity_{suffix}"), sm.specificity));
        rows.push((format!("fpr_{suffix}"), sm.fpr));
    }
    if s.data.is_some() {
        let ds = s.dataset()?;
        let sig = &truth.signal_indices;
        let oracle = fit_oracle(&ds, sig, sig, fit.frailty_enabled, &s.em)?.params;
        let cov = truth.scenario.covariance();
        for (suffix, ec, tc, oc) in [("beta", &p.beta_p, &t.beta_p, &oracle.beta_p), ("b", &p.b_p, &t.b_p, &oracle.b_p)] {
            let e = rme_err(ec, tc, &cov, oc)?;
            rows.push((format!("rme_{suffix}"), e.rme));
            rows.push((format!("err_{suffix}"), e.err));
        }
        let scores = p.latency_lp(&ds);
        rows.push(("c".into(), c_statistic(&scores, &ds.time, &ds.status)?));
        rows.push(("c_cure".into(), held_out_c_cure(p, &ds)?));
        if truth.pi_true.len() == ds.n() {
            let pi = p.uncured_probabilities(&ds);
            let (bias, mse) = penmcfm::metrics::uncured_bias_mse(&[(pi, truth.pi_true.clone())])?;
            rows.push(("bias_pi".into(), bias));
            rows.push(("mse_pi".into(), mse));
        }
    }
    let out = s.out_file("metrics.csv")?;
    let mut w = csv::Writer::from_path(&out).map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| CliError::Io { path: out.display().to_string(), message: e.to_string() };
    w.write_record(["metric", "value"]).map_err(csv_err)?;
    for (k, v) in &rows {
        w.write_record([k.clone(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&out))?;
    let map: serde_json::Map<String, serde_json::Value> =
        rows.into_iter().map(|(k, v)| (k, serde_json::json!(v))).collect();
    write_json(&map, &s.out_file("metrics.json")?).map_err(data_err("metrics.json"))?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct PrsFile {
    selected: Vec<String>,
    coefficients: Vec<f64>,
    n_high: usize,
    n_low: usize,
    degenerate: bool,
    logrank: LogRank,
}

fn cmd_prs(s: &Settings, coef_path: &Path) -> Result<Outcome, CliError> {
    let raw: serde_json::Value = read_json(coef_path).map_err(data_err("coefficients"))?;
    let beta_p: Vec<f64> = if raw.get("mean_beta").is_some() {
        let report: StabilityReport =
            serde_json::from_value(raw).map_err(|e| CliError::Usage(format!("stability report: {e}")))?;
        report.mean_beta
    } else {
        let fit: FitFile = serde_json::from_value(raw).map_err(|e| CliError::Usage(format!("fit file: {e}")))?;
        fit.params.beta_p
    };
    let ds = s.dataset()?;
    if beta_p.len() != ds.x_pen.ncols() {
        return Err(CliError::Usage(format!(
            "coefficients cover {} columns but the data has {} penalized latency columns",
            beta_p.len(),
            ds.x_pen.ncols()
        )));
    }
    let selected = support(&beta_p);
    let coefs: Vec<f64> = selected.iter().map(|&j| beta_p[j]).collect();
    let x = ds.x_pen.select(Axis(1), &selected);
    let scores = prognostic_risk_score(&coefs, &x)?;
    let lr = logrank_test(&scores.high, &ds.time, &ds.status)?;
    let out = s.out_file("prs.csv")?;
    let mut w = csv::Writer::from_path(&out).map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| CliError::Io { path: out.display().to_string(), message: e.to_string() };
    w.write_record(["row", "score", "group"]).map_err(csv_err)?;
    for (i, (sc, h)) in scores.scores.iter().zip(&scores.high).enumerate() {
        w.write_record([(i + 1).to_string(), sc.to_string(), if *h { "high" } else { "low" }.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&out))?;
    let n_high = scores.high.iter().filter(|h| **h).count();
    let file = PrsFile {
        selected: selected.iter().map(|&j| ds.names.x_pen[j].clone()).collect(),
        coefficients: coefs,
        n_high,
        n_low: ds.n() - n_high,
        degenerate: scores.degenerate,
        logrank: lr,
    };
    write_json(&file, &s.out_file("prs.json")?).map_err(data_err("prs.json"))?;
    Ok(Outcome::Done)
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let seed_flag = cli.shared.seed;
    let s = Settings::resolve(cli.shared)?;
    match cli.command {
        Command::Simulate { scenario } => cmd_simulate(&s, scenario, seed_flag),
        Command::Fit => cmd_fit(&s),
        Command::Cv { folds, n_lambda, splits, test_fraction, alpha_on_test } => {
            cmd_cv(&s, folds, n_lambda, splits, test_fraction, alpha_on_test)
        }
        Command::Bench { scenario, replications, n_lambda, max_steps } => {
            cmd_bench(&s, scenario, replications, n_lambda, max_steps, seed_flag)
        }
        Command::Metrics { truth, fit } => cmd_metrics(&s, &truth, &fit),
        Command::Prs { fit } => cmd_prs(&s, &fit),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: a fit stopped at the iteration limit before converging");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
