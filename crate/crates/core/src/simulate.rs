//! Data generation from the Weibull mixture cure frailty model and Monte
//! Carlo orchestration.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BlockNames, SurvivalDataset};
use crate::metrics::CovarianceSpec;
use crate::model::{logistic, ModelError, ParamSet};
use crate::rng::{derive_seed, labeled_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("u = {u} outside the invertible range [0, π = {pi})")]
    OutsideSupport { u: f64, pi: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("monte carlo needs at least one replication")]
    NoReplications,
}

/// Simulation design. Defaults reproduce the reference high-dimensional
/// setting with the strongest signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationScenario {
    pub n: usize,
    /// Width of the shared penalized block.
    #[serde(rename = "P")]
    pub p: usize,
    /// Nonzero entries in each of `b_p` and `β_p`.
    pub s: usize,
    /// Common value of the nonzero penalized coefficients.
    pub v: f64,
    pub rho: f64,
    pub block_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub frailty_enabled: bool,
    pub b0: f64,
    pub b_u: Vec<f64>,
    pub beta_u_range: (f64, f64),
    pub lambda_c: f64,
    pub categorical_weights: Vec<f64>,
    #[serde(rename = "P2u")]
    pub p2u: usize,
    pub seed: u64,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        SimulationScenario {
            n: 500,
            p: 1000,
            s: 20,
            v: 2.5,
            rho: 0.0,
            block_size: 50,
            alpha: 1.25,
            gamma: 2.5,
            theta: 0.5,
            frailty_enabled: true,
            b0: -2.0,
            b_u: vec![-1.0, 1.0],
            beta_u_range: (-3.0, 3.0),
            lambda_c: 0.5,
            categorical_weights: vec![0.4, 0.35, 0.25],
            p2u: 10,
            seed: 1,
        }
    }
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidScenario(m));
        if self.n < 2 {
            return bad(format!("n = {} (need at least 2)", self.n));
        }
        if self.s > self.p {
            return bad(format!("s = {} exceeds P = {}", self.s, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho = {} outside [0, 1)", self.rho));
        }
        if self.p > 0 && (self.block_size == 0 || self.p % self.block_size != 0) {
            return bad(format!("block_size = {} does not divide P = {}", self.block_size, self.p));
        }
        if !(self.lambda_c > 0.0) {
            return bad(format!("lambda_c = {} must be positive", self.lambda_c));
        }
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma), ("theta", self.theta)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        let k = self.categorical_weights.len();
        if k < 1 || self.b_u.len() + 1 != k {
            return bad(format!("{} categorical levels need {} dummy coefficients, got {}", k, k.saturating_sub(1), self.b_u.len()));
        }
        if self.categorical_weights.iter().any(|w| !(*w >= 0.0)) || self.categorical_weights.iter().sum::<f64>() <= 0.0 {
            return bad("categorical weights must be non-negative with positive sum".into());
        }
        if !(self.beta_u_range.0 <= self.beta_u_range.1) {
            return bad("beta_u_range must be ordered".into());
        }
        Ok(())
    }

    pub fn covariance(&self) -> CovarianceSpec {
        if self.rho == 0.0 {
            CovarianceSpec::Identity
        } else {
            CovarianceSpec::BlockToeplitz { rho: self.rho, block_size: self.block_size }
        }
    }
}

/// Covariate blocks of one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    /// Dummy-coded categorical incidence covariate.
    pub z_u: Array2<f64>,
    /// Shared penalized block (`Z_p = X_p`).
    pub x_p: Array2<f64>,
    pub x_u: Array2<f64>,
}

/// Draws the categorical, correlated Gaussian and independent Gaussian blocks.
pub fn generate_covariates(sc: &SimulationScenario, seed: u64) -> Result<Covariates, SimulationError> {
    sc.validate()?;
    let n = sc.n;
    let levels = sc.categorical_weights.len();
    let mut rng = labeled_rng(seed, "categorical", 0);
    let dist = WeightedIndex::new(&sc.categorical_weights)
        .map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
    let mut z_u = Array2::zeros((n, levels - 1));
    for i in 0..n {
        let level = dist.sample(&mut rng);
        if level > 0 {
            z_u[[i, level - 1]] = 1.0;
        }
    }

    let mut rng = labeled_rng(seed, "penalized", 0);
    let mut x_p = Array2::<f64>::zeros((n, sc.p));
    x_p.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    if sc.rho > 0.0 && sc.p > 0 {
        let b = sc.block_size;
        let corr = DMatrix::from_fn(b, b, |i, j| sc.rho.powi((i as i32 - j as i32).abs()));
        let chol = corr.cholesky().ok_or_else(|| {
            SimulationError::InvalidScenario("block correlation matrix is not positive definite".into())
        })?;
        let l = chol.l();
        let mut buf = vec![0.0; b];
        for start in (0..sc.p).step_by(b) {
            for i in 0..n {
                for (r, slot) in buf.iter_mut().enumerate() {
                    *slot = (0..=r).map(|c| l[(r, c)] * x_p[[i, start + c]]).sum();
                }
                for (r, v) in buf.iter().enumerate() {
                    x_p[[i, start + r]] = *v;
                }
            }
        }
    }

    let mut rng = labeled_rng(seed, "latency-unpenalized", 0);
    let mut x_u = Array2::<f64>::zeros((n, sc.p2u));
    x_u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    Ok(Covariates { z_u, x_p, x_u })
}

/// Equally spaced 0-based indices `⌊kP/s + P/(2s)⌋`, the midpoints of `s`
/// equal segments of `0..P`.
pub fn signal_indices(p: usize, s: usize) -> Vec<usize> {
    if s == 0 {
        return Vec::new();
    }
    (0..s).map(|k| (k * p) / s + p / (2 * s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCoefficients {
    pub params: ParamSet,
    pub signal_indices: Vec<usize>,
}

/// True parameters: `s` signals of value `v` in each penalized vector and
/// `β_u` drawn uniformly on `beta_u_range`.
pub fn generate_coefficients(sc: &SimulationScenario) -> Result<TrueCoefficients, SimulationError> {
    sc.validate()?;
    let idx = signal_indices(sc.p, sc.s);
    let mut pen = vec![0.0; sc.p];
    for &j in &idx {
        pen[j] = sc.v;
    }
    let mut rng = labeled_rng(sc.seed, "coefficients", 0);
    let (lo, hi) = sc.beta_u_range;
    let beta_u = if lo == hi {
        vec![lo; sc.p2u]
    } else {
        let u = Uniform::new_inclusive(lo, hi).map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
        (0..sc.p2u).map(|_| u.sample(&mut rng)).collect()
    };
    Ok(TrueCoefficients {
        params: ParamSet {
            alpha: sc.alpha,
            gamma: sc.gamma,
            theta: sc.theta,
            beta_u,
            beta_p: pen.clone(),
            b0: sc.b0,
            b_u: sc.b_u.clone(),
            b_p: pen,
            frailty_enabled: sc.frailty_enabled,
        },
        signal_indices: if sc.v == 0.0 { Vec::new() } else { idx },
    })
}

fn row_lp(params: &ParamSet, x_row: &[f64], z_row: &[f64]) -> Result<(f64, f64), ModelError> {
    let check = |what, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(ModelError::Dimension { what, expected, found })
        }
    };
    check("latency row", params.latency_width(), x_row.len())?;
    check("incidence row", params.incidence_width(), z_row.len())?;
    let eta = x_row.iter().zip(params.beta_u.iter().chain(&params.beta_p)).map(|(x, b)| x * b).sum();
    let zb = z_row
        .iter()
        .zip(std::iter::once(&params.b0).chain(&params.b_u).chain(&params.b_p))
        .map(|(z, b)| z * b)
        .sum();
    Ok((eta, zb))
}

/// `F_pop(t) = π(z) (1 - S_u(t | x))`, computed with `expm1` for accuracy near 0.
pub fn population_cdf(params: &ParamSet, x_row: &[f64], z_row: &[f64], t: f64) -> Result<f64, ModelError> {
    let (eta, zb) = row_lp(params, x_row, z_row)?;
    if !(t >= 0.0) {
        return Err(ModelError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let h = (params.alpha.ln() + params.gamma * t.ln() + eta).exp();
    let log_su = if params.frailty_enabled { -params.theta * (h / params.theta).ln_1p() } else { -h };
    Ok(logistic(zb) * -log_su.exp_m1())
}

/// Inverse of [`population_cdf`] on `[0, π(z))`.
pub fn inverse_pop_cdf(params: &ParamSet, x_row: &[f64], z_row: &[f64], u: f64) -> Result<f64, SimulationError> {
    let (eta, zb) = row_lp(params, x_row, z_row)?;
    let pi = logistic(zb);
    if !(u >= 0.0 && u < pi) {
        return Err(SimulationError::OutsideSupport { u, pi });
    }
    Ok(inverse_given_lp(params, eta, pi, u))
}

fn inverse_given_lp(params: &ParamSet, eta: f64, pi: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    // -log S_u at the target, then the cumulative hazard that produces it.
    let neg_log_su = -(-u / pi).ln_1p();
    let h = if params.frailty_enabled {
        params.theta * (neg_log_su / params.theta).exp_m1()
    } else {
        neg_log_su
    };
    ((h.ln() - params.alpha.ln() - eta) / params.gamma).exp()
}

/// Outcomes of one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    pub y_true: Vec<bool>,
    pub pi_true: Vec<f64>,
}

/// Inverse-transform event times for the uncured, exponential censoring, and
/// the latent cure status.
pub fn generate_outcomes(
    params: &ParamSet,
    cov: &Covariates,
    lambda_c: f64,
    seed: u64,
) -> Result<Outcomes, SimulationError> {
    if !(lambda_c > 0.0) {
        return Err(SimulationError::InvalidScenario(format!("lambda_c = {lambda_c} must be positive")));
    }
    let n = cov.x_p.nrows();
    let mut zb = vec![params.b0; n];
    crate::model::add_matvec(&mut zb, &cov.z_u, &params.b_u);
    crate::model::add_matvec(&mut zb, &cov.x_p, &params.b_p);
    let mut eta = vec![0.0; n];
    crate::model::add_matvec(&mut eta, &cov.x_u, &params.beta_u);
    crate::model::add_matvec(&mut eta, &cov.x_p, &params.beta_p);
    let mut rng = labeled_rng(seed, "outcomes", 0);
    let exp = Exp::new(lambda_c).map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
    let mut out = Outcomes {
        time: Vec::with_capacity(n),
        status: Vec::with_capacity(n),
        y_true: Vec::with_capacity(n),
        pi_true: Vec::with_capacity(n),
    };
    for i in 0..n {
        let pi = logistic(zb[i]);
        let u: f64 = loop {
            let u = rng.random::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let uncured = u < pi;
        let t_event = if uncured { inverse_given_lp(params, eta[i], pi, u) } else { f64::INFINITY };
        let c: f64 = exp.sample(&mut rng).max(f64::MIN_POSITIVE);
        let event = t_event <= c;
        out.time.push(if event { t_event.max(f64::MIN_POSITIVE) } else { c });
        out.status.push(event);
        out.y_true.push(uncured);
        out.pi_true.push(pi);
    }
    Ok(out)
}

/// A simulated sample together with the parameters that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTruth {
    pub params: ParamSet,
    pub signal_indices: Vec<usize>,
    pub dataset: SurvivalDataset,
    pub covariance: CovarianceSpec,
}

/// Covariates, coefficients and outcomes for one scenario seed.
pub fn simulate(sc: &SimulationScenario) -> Result<GeneratedTruth, SimulationError> {
    let coefs = generate_coefficients(sc)?;
    let dataset = sample_dataset(sc, &coefs.params, sc.seed)?;
    Ok(GeneratedTruth { params: coefs.params, signal_indices: coefs.signal_indices, dataset, covariance: sc.covariance() })
}

/// A fresh sample of the scenario design from fixed true parameters; used
/// for independent test sets.
pub fn sample_dataset(sc: &SimulationScenario, params: &ParamSet, seed: u64) -> Result<SurvivalDataset, SimulationError> {
    let cov = generate_covariates(sc, seed)?;
    let out = generate_outcomes(params, &cov, sc.lambda_c, seed)?;
    let names = BlockNames {
        z_unpen: (1..=cov.z_u.ncols()).map(|k| format!("zu{k}")).collect(),
        z_pen: (1..=sc.p).map(|k| format!("g{k}")).collect(),
        x_unpen: (1..=sc.p2u).map(|k| format!("xu{k}")).collect(),
        x_pen: (1..=sc.p).map(|k| format!("g{k}")).collect(),
    };
    Ok(SurvivalDataset {
        time: out.time,
        status: out.status,
        z_unpen: cov.z_u,
        z_pen: cov.x_p.clone(),
        x_unpen: cov.x_u,
        x_pen: cov.x_p,
        names,
        shared_penalized: true,
        y_true: Some(out.y_true.into_iter().map(Some).collect()),
        w_true: None,
        pi_true: Some(out.pi_true),
    })
}

/// Scenario for replication `r`: identical design with a derived seed.
pub fn replication_scenario(sc: &SimulationScenario, r: usize) -> SimulationScenario {
    SimulationScenario { seed: derive_seed(sc.seed, "replication", r as u64), ..sc.clone() }
}

/// Named metric values for one method on one replication.
pub type MetricValues = Vec<(String, f64)>;

/// Fits and scores a list of methods on one simulated replication.
pub trait ReplicationEvaluator: Sync {
    fn methods(&self) -> Vec<String>;
    /// One entry per method, in [`methods`](Self::methods) order.
    fn evaluate(&self, truth: &GeneratedTruth, replication: usize, seed: u64) -> Vec<Result<MetricValues, String>>;
}

/// Mean and sample SD of one metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Absent with fewer than two successful replications.
    pub sd: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub replications: usize,
    pub rows: Vec<ReportRow>,
    /// `(replication, method, message)` for each failed fit.
    pub failures: Vec<(usize, String, String)>,
    /// Censoring and cure proportions per replication.
    pub censoring_rate: Vec<f64>,
    pub cure_rate: Vec<f64>,
}

pub fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// Runs `m` replications in parallel on the current rayon pool and aggregates
/// the per-method metrics. Output does not depend on the pool size.
pub fn run_monte_carlo(
    scenario_name: &str,
    sc: &SimulationScenario,
    m: usize,
    evaluator: &dyn ReplicationEvaluator,
) -> Result<MonteCarloReport, SimulationError> {
    if m == 0 {
        return Err(SimulationError::NoReplications);
    }
    sc.validate()?;
    let methods = evaluator.methods();
    let per_rep: Vec<Result<(GeneratedTruth, Vec<Result<MetricValues, String>>), SimulationError>> = (0..m)
        .into_par_iter()
        .map(|r| {
            let rep = replication_scenario(sc, r);
            let truth = simulate(&rep)?;
            let results = evaluator.evaluate(&truth, r, rep.seed);
            Ok((truth, results))
        })
        .collect();
    let mut failures = Vec::new();
    let mut censoring_rate = Vec::with_capacity(m);
    let mut cure_rate = Vec::with_capacity(m);
    // (method, metric) -> values, in first-seen order.
    let mut table: Vec<(usize, String, Vec<f64>)> = Vec::new();
    let mut failed = vec![0usize; methods.len()];
    for (r, res) in per_rep.into_iter().enumerate() {
        let (truth, results) = res?;
        let ds = &truth.dataset;
        censoring_rate.push(1.0 - ds.n_events() as f64 / ds.n() as f64);
        let cured = ds.y_true.as_ref().map_or(0, |y| y.iter().filter(|v| **v == Some(false)).count());
        cure_rate.push(cured as f64 / ds.n() as f64);
        for (k, result) in results.into_iter().enumerate() {
            match result {
                Ok(values) => {
                    for (metric, v) in values {
                        match table.iter_mut().find(|(mk, name, _)| *mk == k && *name == metric) {
                            Some(entry) => entry.2.push(v),
                            None => table.push((k, metric, vec![v])),
                        }
                    }
                }
                Err(msg) => {
                    failed[k] += 1;
                    failures.push((r, methods[k].clone(), msg));
                }
            }
        }
    }
    table.sort_by_key(|(k, _, _)| *k);
    let rows = table
        .into_iter()
        .map(|(k, metric, values)| {
            let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let (mean, sd) = mean_sd(&finite);
            ReportRow {
                scenario: scenario_name.to_string(),
                method: methods[k].clone(),
                metric,
                mean,
                sd,
                n_ok: finite.len(),
                n_failed: failed[k] + (values.len() - finite.len()),
            }
        })
        .collect();
    Ok(MonteCarloReport { scenario: scenario_name.to_string(), replications: m, rows, failures, censoring_rate, cure_rate })
}
