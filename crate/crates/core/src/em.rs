//! Expectation-conditional-maximization fitting of the penalized model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize_penalized, DataError, ScalingInfo, SurvivalDataset};
use crate::model::{log_add_exp, logistic, softplus, ModelError, ParamSet};
use crate::optim::{
    maximize_theta, solve_l1_smooth, theta_objective, DesignView, IncidenceObjective, LatencyObjective,
    OptimError, Penalty, PenaltyConfig, SmoothObjective, SolverOptions, ThetaBound, WeibullScale, THETA_BOUNDS,
};
use crate::special::{digamma_pos, ln_gamma_pos};

/// Coefficients with magnitude at or below this count as zero.
pub const ZERO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{substep} update failed: {source}")]
    Optim { substep: Substep, source: OptimError },
    #[error("non-finite expectation at row {row}")]
    NonFiniteExpectation { row: usize },
    #[error("initialization needs at least 2 events, found {0}")]
    TooFewEvents(usize),
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

/// The five conditional-maximization sub-steps, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substep {
    IncidencePenalized,
    LatencyPenalized,
    IncidenceUnpenalized,
    LatencyUnpenalized,
    Theta,
}

impl std::fmt::Display for Substep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Substep::IncidencePenalized => "penalized incidence",
            Substep::LatencyPenalized => "penalized latency",
            Substep::IncidenceUnpenalized => "unpenalized incidence",
            Substep::LatencyUnpenalized => "unpenalized latency",
            Substep::Theta => "frailty precision",
        };
        f.write_str(s)
    }
}

/// Per-subject conditional expectations given the data and current parameters:
/// `p = E[y]`, `a = E[w]`, `b = E[log w]`, `c = E[y w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EStepCache {
    pub p: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn e_step(params: &ParamSet, ds: &SurvivalDataset) -> Result<EStepCache, EmError> {
    params.check(ds)?;
    let zb = params.incidence_lp(ds);
    let eta = params.latency_lp(ds);
    e_step_from_lp(params, ds, &zb, &eta)
}

fn e_step_from_lp(params: &ParamSet, ds: &SurvivalDataset, zb: &[f64], eta: &[f64]) -> Result<EStepCache, EmError> {
    let n = ds.n();
    let mut cache = EStepCache { p: vec![0.0; n], a: vec![0.0; n], b: vec![0.0; n], c: vec![0.0; n] };
    let (la, gamma) = (params.alpha.ln(), params.gamma);
    let theta = params.theta;
    let ln_theta = theta.ln();
    let psi = [digamma_pos(theta), digamma_pos(theta + 1.0)];
    for i in 0..n {
        let event = ds.status[i];
        let log_h = la + gamma * ds.time[i].ln() + eta[i];
        let (p, a, b, c) = if params.frailty_enabled {
            let d = event as u8 as f64;
            let ln_th = log_add_exp(ln_theta, log_h);
            let p = if event { 1.0 } else { logistic(zb[i] - theta * (ln_th - ln_theta)) };
            let post_mean = (d + theta) * (-ln_th).exp();
            let prior_mean = (d + theta) / theta;
            let psi_d = psi[event as usize];
            let a = post_mean * p + prior_mean * (1.0 - p);
            let b = (psi_d - ln_theta) * (1.0 - p) + (psi_d - ln_th) * p;
            (p, a, b, post_mean * p)
        } else {
            let p = if event { 1.0 } else { logistic(zb[i] - log_h.exp()) };
            (p, 1.0, 0.0, p)
        };
        if !(p.is_finite() && a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(EmError::NonFiniteExpectation { row: i + 1 });
        }
        cache.p[i] = p;
        cache.a[i] = a;
        cache.b[i] = b;
        cache.c[i] = c;
    }
    Ok(cache)
}

/// The three expected complete-data log-likelihood components (sum scale,
/// penalties included in the first two).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub incidence: f64,
    pub latency: f64,
    pub frailty: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.incidence + self.latency + self.frailty
    }

    fn max_abs_change(&self, other: &Components) -> f64 {
        (self.incidence - other.incidence)
            .abs()
            .max((self.latency - other.latency).abs())
            .max((self.frailty - other.frailty).abs())
    }
}

fn delta_vec(ds: &SurvivalDataset) -> Vec<f64> {
    ds.status.iter().map(|&d| d as u8 as f64).collect()
}

fn incidence_component(zb: &[f64], cache: &EStepCache) -> f64 {
    zb.iter().zip(&cache.p).map(|(&z, &p)| p * z - softplus(z)).sum()
}

fn latency_component(params: &ParamSet, ds: &SurvivalDataset, eta: &[f64], cache: &EStepCache) -> f64 {
    let (la, lg, g) = (params.alpha.ln(), params.gamma.ln(), params.gamma);
    (0..ds.n())
        .map(|i| {
            let lt = ds.time[i].ln();
            let ch = if cache.c[i] == 0.0 { 0.0 } else { cache.c[i] * (la + g * lt + eta[i]).exp() };
            let ev = if ds.status[i] { la + lg + (g - 1.0) * lt + eta[i] } else { 0.0 };
            ev - ch
        })
        .sum()
}

fn frailty_component(params: &ParamSet, delta: &[f64], cache: &EStepCache) -> f64 {
    if params.frailty_enabled {
        theta_objective(&cache.a, &cache.b, delta, params.theta)
    } else {
        0.0
    }
}

/// Expected-log-likelihood components of `params` under `cache`.
pub fn components(
    params: &ParamSet,
    ds: &SurvivalDataset,
    cache: &EStepCache,
    penalty: &Penalty,
) -> Components {
    let n = ds.n() as f64;
    let zb = params.incidence_lp(ds);
    let eta = params.latency_lp(ds);
    let a = penalty.alpha_enet;
    Components {
        incidence: incidence_component(&zb, cache)
            - n * penalty.lambda_b * Penalty::enet(a, &penalty.weights_b, &params.b_p),
        latency: latency_component(params, ds, &eta, cache)
            - n * penalty.lambda_beta * Penalty::enet(a, &penalty.weights_beta, &params.beta_p),
        frailty: frailty_component(params, &delta_vec(ds), cache),
    }
}

/// Observed log-likelihood minus `n` times the penalty.
pub fn penalized_objective(params: &ParamSet, ds: &SurvivalDataset, penalty: &Penalty) -> Result<f64, ModelError> {
    let ll = crate::model::observed_log_likelihood(params, ds)?;
    Ok(ll - ds.n() as f64 * penalty.value(&params.b_p, &params.beta_p))
}

/// Own-component values around one sub-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstepReport {
    pub substep: Substep,
    pub before: f64,
    pub after: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub params: ParamSet,
    pub substeps: Vec<SubstepReport>,
    pub theta_bound: Option<ThetaBound>,
}

fn ridge(lambda: f64, alpha: f64, p: usize) -> Vec<f64> {
    vec![lambda * (1.0 - alpha); p]
}

fn optim_err(substep: Substep) -> impl Fn(OptimError) -> EmError {
    move |source| EmError::Optim { substep, source }
}

/// One conditional-maximization sweep under a fixed E-step cache.
pub fn m_step(
    params: &ParamSet,
    cache: &EStepCache,
    penalty: &Penalty,
    ds: &SurvivalDataset,
    solver: &SolverOptions,
) -> Result<MStepOutput, EmError> {
    params.check(ds)?;
    let n = ds.n();
    let nf = n as f64;
    let mut cur = params.clone();
    let delta = delta_vec(ds);
    let log_t: Vec<f64> = ds.time.iter().map(|t| t.ln()).collect();
    let alpha_enet = penalty.alpha_enet;
    let mut reports = Vec::with_capacity(5);
    let mut zu_part = vec![cur.b0; n];
    crate::model::add_matvec(&mut zu_part, &ds.z_unpen, &cur.b_u);
    let mut xu_part = vec![0.0; n];
    crate::model::add_matvec(&mut xu_part, &ds.x_unpen, &cur.beta_u);

    // 1. Penalized incidence coefficients.
    {
        let obj = IncidenceObjective {
            design: DesignView::new(n, false, vec![&ds.z_pen]),
            offset: zu_part.clone(),
            p: &cache.p,
            ridge: ridge(penalty.lambda_b, alpha_enet, cur.b_p.len()),
        };
        let scale = penalty.lambda_b * alpha_enet;
        let before = -nf * (obj.value(&cur.b_p) + scale * l1(&penalty.weights_b, &cur.b_p));
        let r = solve_l1_smooth(&obj, &penalty.weights_b, scale, &cur.b_p, solver)
            .map_err(optim_err(Substep::IncidencePenalized))?;
        cur.b_p = r.x;
        reports.push(SubstepReport {
            substep: Substep::IncidencePenalized,
            before,
            after: -nf * r.value,
            converged: r.converged,
        });
    }

    // 2. Penalized latency coefficients.
    {
        let obj = LatencyObjective {
            design: DesignView::new(n, false, vec![&ds.x_pen]),
            offset: xu_part.clone(),
            log_t: &log_t,
            delta: &delta,
            c: &cache.c,
            scale: WeibullScale::Fixed { log_alpha: cur.alpha.ln(), log_gamma: cur.gamma.ln() },
            ridge: ridge(penalty.lambda_beta, alpha_enet, cur.beta_p.len()),
        };
        let scale = penalty.lambda_beta * alpha_enet;
        let before = -nf * (obj.value(&cur.beta_p) + scale * l1(&penalty.weights_beta, &cur.beta_p));
        let r = solve_l1_smooth(&obj, &penalty.weights_beta, scale, &cur.beta_p, solver)
            .map_err(optim_err(Substep::LatencyPenalized))?;
        cur.beta_p = r.x;
        reports.push(SubstepReport {
            substep: Substep::LatencyPenalized,
            before,
            after: -nf * r.value,
            converged: r.converged,
        });
    }

    // 3. Intercept and unpenalized incidence coefficients.
    {
        let mut offset = vec![0.0; n];
        crate::model::add_matvec(&mut offset, &ds.z_pen, &cur.b_p);
        let obj = IncidenceObjective {
            design: DesignView::new(n, true, vec![&ds.z_unpen]),
            offset,
            p: &cache.p,
            ridge: vec![0.0; 1 + cur.b_u.len()],
        };
        let x0: Vec<f64> = std::iter::once(cur.b0).chain(cur.b_u.iter().copied()).collect();
        let before = -nf * obj.value(&x0);
        let w = vec![0.0; x0.len()];
        let r = solve_l1_smooth(&obj, &w, 0.0, &x0, solver).map_err(optim_err(Substep::IncidenceUnpenalized))?;
        cur.b0 = r.x[0];
        cur.b_u = r.x[1..].to_vec();
        reports.push(SubstepReport {
            substep: Substep::IncidenceUnpenalized,
            before,
            after: -nf * r.value,
            converged: r.converged,
        });
    }

    // 4. Weibull scale, shape and unpenalized latency coefficients.
    {
        let mut offset = vec![0.0; n];
        crate::model::add_matvec(&mut offset, &ds.x_pen, &cur.beta_p);
        let obj = LatencyObjective {
            design: DesignView::new(n, false, vec![&ds.x_unpen]),
            offset,
            log_t: &log_t,
            delta: &delta,
            c: &cache.c,
            scale: WeibullScale::Free,
            ridge: vec![0.0; cur.beta_u.len()],
        };
        if obj.is_degenerate() {
            return Err(EmError::Optim {
                substep: Substep::LatencyUnpenalized,
                source: OptimError::Diverged("all expected uncured frailty weights are zero".into()),
            });
        }
        let x0: Vec<f64> = [cur.alpha.ln(), cur.gamma.ln()].into_iter().chain(cur.beta_u.iter().copied()).collect();
        let before = -nf * obj.value(&x0);
        let w = vec![0.0; x0.len()];
        let r = solve_l1_smooth(&obj, &w, 0.0, &x0, solver).map_err(optim_err(Substep::LatencyUnpenalized))?;
        cur.alpha = r.x[0].exp();
        cur.gamma = r.x[1].exp();
        cur.beta_u = r.x[2..].to_vec();
        reports.push(SubstepReport {
            substep: Substep::LatencyUnpenalized,
            before,
            after: -nf * r.value,
            converged: r.converged,
        });
    }

    // 5. Frailty precision.
    let mut theta_bound = None;
    if cur.frailty_enabled {
        let before = theta_objective(&cache.a, &cache.b, &delta, cur.theta);
        let r = maximize_theta(&cache.a, &cache.b, &delta, THETA_BOUNDS);
        let after = theta_objective(&cache.a, &cache.b, &delta, r.theta);
        let (theta, after) = if after >= before { (r.theta, after) } else { (cur.theta, before) };
        cur.theta = theta;
        theta_bound = r.bound;
        reports.push(SubstepReport { substep: Substep::Theta, before, after, converged: true });
    }

    Ok(MStepOutput { params: cur, substeps: reports, theta_bound })
}

fn l1(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, x)| w * x.abs()).sum()
}

/// Convergence and inner-solver settings for [`fit_em`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Bound on every component change between successive iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
    /// Squared-extrapolation acceleration: each iteration chains two EM
    /// updates, extrapolates along them and keeps the extrapolated update only
    /// when it does not lower the penalized observed objective.
    pub accelerate: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-5, max_iter: 500, solver: SolverOptions::default(), accelerate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParamSet,
    pub estep: EStepCache,
    pub iterations: usize,
    pub objective_trace: Vec<[f64; 3]>,
    pub converged: bool,
    pub selected_support_beta: Vec<usize>,
    pub selected_support_b: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bound: Option<ThetaBound>,
}

pub fn support(coefs: &[f64]) -> Vec<usize> {
    coefs.iter().enumerate().filter(|(_, c)| c.abs() > ZERO_THRESHOLD).map(|(j, _)| j).collect()
}

/// Per-iteration diagnostics passed to an observer.
pub struct IterationInfo<'a> {
    pub iteration: usize,
    pub params: &'a ParamSet,
    pub components: Components,
    pub substeps: &'a [SubstepReport],
}

/// EM iterations at a fixed penalty until every component changes by less
/// than `opts.tol` or `opts.max_iter` is reached.
pub fn fit_em(
    ds: &SurvivalDataset,
    penalty: &Penalty,
    init: &ParamSet,
    opts: &EmOptions,
) -> Result<FitResult, EmError> {
    fit_em_observed(ds, penalty, init, opts, |_| {})
}

/// [`fit_em`] with a callback after every iteration.
pub fn fit_em_observed(
    ds: &SurvivalDataset,
    penalty: &Penalty,
    init: &ParamSet,
    opts: &EmOptions,
    mut observer: impl FnMut(&IterationInfo<'_>),
) -> Result<FitResult, EmError> {
    if !(opts.tol > 0.0) {
        return Err(EmError::InvalidOption(format!("tol must be positive, got {}", opts.tol)));
    }
    init.check(ds)?;
    if penalty.weights_b.len() != init.b_p.len() || penalty.weights_beta.len() != init.beta_p.len() {
        return Err(EmError::InvalidOption("penalty weights do not match penalized widths".into()));
    }
    let mut params = init.clone();
    let mut prev: Option<Components> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut theta_bound = None;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let cache = e_step(&params, ds)?;
        let start = *prev.get_or_insert_with(|| components(&params, ds, &cache, penalty));
        let mut out = m_step(&params, &cache, penalty, ds, &opts.solver)?;
        let mut comps = components(&out.params, ds, &cache, penalty);
        if opts.accelerate {
            if let Some((acc, acc_comps)) = squarem_step(ds, penalty, &params, &out.params, &opts.solver)? {
                out = acc;
                comps = acc_comps;
            }
        }
        params = out.params;
        theta_bound = out.theta_bound;
        iterations += 1;
        trace.push([comps.incidence, comps.latency, comps.frailty]);
        observer(&IterationInfo { iteration: iterations, params: &params, components: comps, substeps: &out.substeps });
        let change = comps.max_abs_change(&start);
        prev = Some(comps);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("EM stopped after {iterations} iterations without meeting tol {}", opts.tol);
    }
    let estep = e_step(&params, ds)?;
    Ok(FitResult {
        selected_support_beta: support(&params.beta_p),
        selected_support_b: support(&params.b_p),
        params,
        estep,
        iterations,
        objective_trace: trace,
        converged,
        theta_bound,
    })
}

fn unconstrained(p: &ParamSet) -> Vec<f64> {
    let mut v = vec![p.alpha.ln(), p.gamma.ln(), p.theta.ln(), p.b0];
    v.extend(&p.beta_u);
    v.extend(&p.beta_p);
    v.extend(&p.b_u);
    v.extend(&p.b_p);
    v
}

fn from_unconstrained(template: &ParamSet, v: &[f64]) -> ParamSet {
    let mut p = template.clone();
    p.alpha = v[0].exp();
    p.gamma = v[1].exp();
    p.theta = v[2].clamp(THETA_BOUNDS.0.ln(), THETA_BOUNDS.1.ln()).exp();
    p.b0 = v[3];
    let mut k = 4;
    for block in [&mut p.beta_u, &mut p.beta_p, &mut p.b_u, &mut p.b_p] {
        let w = block.len();
        block.copy_from_slice(&v[k..k + w]);
        k += w;
    }
    p
}

/// One squared-extrapolation cycle started from `x0` with first EM image
/// `x1`. Returns the accepted update and its components under the cache it
/// was computed with, or `None` when plain EM is kept.
fn squarem_step(
    ds: &SurvivalDataset,
    penalty: &Penalty,
    x0: &ParamSet,
    x1: &ParamSet,
    solver: &SolverOptions,
) -> Result<Option<(MStepOutput, Components)>, EmError> {
    let cache1 = e_step(x1, ds)?;
    let out2 = m_step(x1, &cache1, penalty, ds, solver)?;
    let comps2 = components(&out2.params, ds, &cache1, penalty);
    let obj2 = penalized_objective(&out2.params, ds, penalty).unwrap_or(f64::NEG_INFINITY);
    let (u0, u1, u2) = (unconstrained(x0), unconstrained(x1), unconstrained(&out2.params));
    let r: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = (0..u0.len()).map(|j| u2[j] - 2.0 * u1[j] + u0[j]).collect();
    let (rn, vn) = (r.iter().map(|x| x * x).sum::<f64>().sqrt(), v.iter().map(|x| x * x).sum::<f64>().sqrt());
    let fallback = Some((out2.clone(), comps2));
    if !(vn > 0.0) || !(rn > 0.0) {
        return Ok(fallback);
    }
    let step = (-rn / vn).min(-1.0);
    let ux: Vec<f64> = (0..u0.len()).map(|j| u0[j] - 2.0 * step * r[j] + step * step * v[j]).collect();
    if ux.iter().any(|x| !x.is_finite()) || ux[..2].iter().any(|x| x.abs() > 50.0) {
        return Ok(fallback);
    }
    let xe = from_unconstrained(x0, &ux);
    let Ok(cache_e) = e_step(&xe, ds) else {
        return Ok(fallback);
    };
    let Ok(out3) = m_step(&xe, &cache_e, penalty, ds, solver) else {
        return Ok(fallback);
    };
    match penalized_objective(&out3.params, ds, penalty) {
        Ok(obj3) if obj3.is_finite() && obj3 >= obj2 => {
            let comps3 = components(&out3.params, ds, &cache_e, penalty);
            Ok(Some((out3, comps3)))
        }
        _ => Ok(fallback),
    }
}

/// Weibull shape by the method of moments on a sample, via the squared
/// coefficient of variation `Γ(1+2/γ)/Γ(1+1/γ)² - 1`.
fn weibull_moments(times: &[f64]) -> (f64, f64) {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    let cv2 = var / (mean * mean);
    if !(cv2 > 0.0) || !cv2.is_finite() {
        return (1.0 / mean, 1.0);
    }
    let cv2_of = |g: f64| (ln_gamma_pos(1.0 + 2.0 / g) - 2.0 * ln_gamma_pos(1.0 + 1.0 / g)).exp() - 1.0;
    let (mut lo, mut hi) = (0.02f64.ln(), 500f64.ln());
    if cv2 >= cv2_of(lo.exp()) {
        hi = lo;
    } else if cv2 <= cv2_of(hi.exp()) {
        lo = hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cv2_of(mid.exp()) > cv2 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let gamma = (0.5 * (lo + hi)).exp();
    let alpha = ((ln_gamma_pos(1.0 + 1.0 / gamma) - mean.ln()) * gamma).exp();
    (alpha, gamma)
}

/// Starting values: Weibull moments on event times, events-only Weibull
/// regression for `β_u`, `θ = 1` and zeros elsewhere.
pub fn initialize(ds: &SurvivalDataset, frailty_enabled: bool) -> Result<ParamSet, EmError> {
    let events: Vec<usize> = (0..ds.n()).filter(|&i| ds.status[i]).collect();
    if events.len() < 2 {
        return Err(EmError::TooFewEvents(events.len()));
    }
    let times: Vec<f64> = events.iter().map(|&i| ds.time[i]).collect();
    let (alpha, gamma) = weibull_moments(&times);
    let mut params = ParamSet::zeros_like(ds, frailty_enabled);
    params.alpha = alpha;
    params.gamma = gamma;
    params.theta = 1.0;
    if ds.x_unpen.ncols() > 0 {
        let sub = ds.x_unpen.select(ndarray::Axis(0), &events);
        let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let ones = vec![1.0; events.len()];
        let obj = LatencyObjective {
            design: DesignView::new(events.len(), false, vec![&sub]),
            offset: vec![0.0; events.len()],
            log_t: &log_t,
            delta: &ones,
            c: &ones,
            scale: WeibullScale::Fixed { log_alpha: alpha.ln(), log_gamma: gamma.ln() },
            ridge: vec![0.0; sub.ncols()],
        };
        let w = vec![0.0; sub.ncols()];
        match solve_l1_smooth(&obj, &w, 0.0, &params.beta_u, &SolverOptions::default()) {
            Ok(r) if r.x.iter().all(|v| v.is_finite()) => params.beta_u = r.x,
            _ => log::debug!("latency initialization failed; starting from zero"),
        }
    }
    Ok(params)
}

/// Fit with the penalized blocks held at zero.
pub fn null_fit(ds: &SurvivalDataset, init: &ParamSet, opts: &EmOptions) -> Result<FitResult, EmError> {
    let reduced = ds.select_penalized(&[], &[]);
    let mut start = init.clone();
    start.b_p.clear();
    start.beta_p.clear();
    let fit = fit_em(&reduced, &Penalty::none(0, 0), &start, opts)?;
    let mut params = fit.params.clone();
    params.b_p = vec![0.0; ds.z_pen.ncols()];
    params.beta_p = vec![0.0; ds.x_pen.ncols()];
    let estep = e_step(&params, ds)?;
    Ok(FitResult { params, estep, ..fit })
}

/// Magnitudes of the smooth-objective gradients at zero penalized
/// coefficients, per subject: `(incidence block, latency block)`.
pub fn gradient_at_zero(params: &ParamSet, ds: &SurvivalDataset, cache: &EStepCache) -> (Vec<f64>, Vec<f64>) {
    let n = ds.n();
    let inv_n = 1.0 / n as f64;
    let mut zu = vec![params.b0; n];
    crate::model::add_matvec(&mut zu, &ds.z_unpen, &params.b_u);
    let r_inc: Vec<f64> = (0..n).map(|i| -(cache.p[i] - logistic(zu[i])) * inv_n).collect();
    let mut xu = vec![0.0; n];
    crate::model::add_matvec(&mut xu, &ds.x_unpen, &params.beta_u);
    let (la, g) = (params.alpha.ln(), params.gamma);
    let r_lat: Vec<f64> = (0..n)
        .map(|i| {
            let ch = cache.c[i] * (la + g * ds.time[i].ln() + xu[i]).exp();
            -(ds.delta(i) - ch) * inv_n
        })
        .collect();
    (crate::model::tmatvec(&ds.z_pen, &r_inc), crate::model::tmatvec(&ds.x_pen, &r_lat))
}

/// Smallest λ at which zero is optimal for both penalized blocks with unit
/// weights, given the expectations of a fit with those blocks at zero.
pub fn lambda_max(
    params: &ParamSet,
    ds: &SurvivalDataset,
    cache: &EStepCache,
    alpha_enet: f64,
) -> Result<f64, EmError> {
    if !(alpha_enet > 0.0) {
        return Err(EmError::InvalidOption("lambda_max requires alpha_enet > 0".into()));
    }
    let (gb, gbeta) = gradient_at_zero(params, ds, cache);
    let m = gb.iter().chain(&gbeta).fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(m / alpha_enet)
}

/// Descending λ grid from [`lambda_max`] down to `min_ratio · λ_max`.
pub fn lambda_path(
    params: &ParamSet,
    ds: &SurvivalDataset,
    cache: &EStepCache,
    alpha_enet: f64,
    n_values: usize,
    min_ratio: f64,
) -> Result<Vec<f64>, EmError> {
    let lmax = lambda_max(params, ds, cache, alpha_enet)?;
    crate::optim::lambda_grid(lmax, n_values, min_ratio).map_err(|e| EmError::InvalidOption(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub em: EmOptions,
    /// Stop the path once a stage-1 fit selects more than this many
    /// penalized coefficients in total.
    pub max_support: Option<usize>,
    /// Standardize penalized columns before fitting.
    pub standardize: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { em: EmOptions::default(), max_support: None, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub lambda_b: f64,
    pub lambda_beta: f64,
    pub stage: usize,
    /// Adaptive weights used, on the standardized scale.
    pub weights_b: Vec<f64>,
    pub weights_beta: Vec<f64>,
    /// Parameters reported on the original covariate scale.
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub penalty: PenaltyConfig,
    pub entries: Vec<PathEntry>,
    pub scaling: ScalingInfo,
}

impl PathResult {
    /// Entry for grid point `index` at `stage`.
    pub fn get(&self, index: usize, stage: usize) -> Option<&PathEntry> {
        let lb = *self.penalty.lambda_grid.get(index)?;
        self.entries.iter().find(|e| e.stage == stage && e.lambda_b == lb)
    }

    /// Final-stage entries in grid order.
    pub fn final_stage(&self) -> impl Iterator<Item = &PathEntry> {
        let k = self.penalty.stages;
        self.entries.iter().filter(move |e| e.stage == k)
    }
}

/// Converts parameters fitted on standardized penalized columns to the
/// original scale.
pub fn params_to_original(params: &ParamSet, scaling: &ScalingInfo) -> ParamSet {
    let mut out = params.clone();
    let (b_p, shift_b) = scaling.z_pen.coefs_to_original(&params.b_p);
    let (beta_p, shift_beta) = scaling.x_pen.coefs_to_original(&params.beta_p);
    out.b_p = zero_constant(b_p, &scaling.z_pen.constant);
    out.beta_p = zero_constant(beta_p, &scaling.x_pen.constant);
    out.b0 += shift_b;
    out.alpha = (params.alpha.ln() + shift_beta).exp();
    out
}

/// Inverse of [`params_to_original`].
pub fn params_to_standardized(params: &ParamSet, scaling: &ScalingInfo) -> ParamSet {
    let mut out = params.clone();
    let (b_p, shift_b) = scaling.z_pen.coefs_to_standardized(&params.b_p);
    let (beta_p, shift_beta) = scaling.x_pen.coefs_to_standardized(&params.beta_p);
    out.b_p = zero_constant(b_p, &scaling.z_pen.constant);
    out.beta_p = zero_constant(beta_p, &scaling.x_pen.constant);
    out.b0 += shift_b;
    out.alpha = (params.alpha.ln() + shift_beta).exp();
    out
}

fn zero_constant(mut v: Vec<f64>, constant: &[bool]) -> Vec<f64> {
    v.iter_mut().zip(constant).filter(|(_, &c)| c).for_each(|(x, _)| *x = 0.0);
    v
}

fn adaptive_weights(coefs: &[f64], cap: f64) -> Vec<f64> {
    coefs.iter().map(|c| if c.abs() > 1.0 / cap { 1.0 / c.abs() } else { cap }).collect()
}

fn fit_to_original(mut fit: FitResult, scaling: &ScalingInfo) -> FitResult {
    fit.params = params_to_original(&fit.params, scaling);
    fit.selected_support_b = support(&fit.params.b_p);
    fit.selected_support_beta = support(&fit.params.beta_p);
    fit
}

/// Penalized fits along the λ grid, with one or two adaptive stages per λ.
///
/// `init` is given on the original scale. Each λ warm-starts from the previous
/// λ's stage-1 solution; stage 2 starts from stage 1 with weights
/// `min(1/|coef|, weight_cap)` computed on the standardized scale.
pub fn fit_path(
    ds: &SurvivalDataset,
    config: &PenaltyConfig,
    init: &ParamSet,
    opts: &PathOptions,
) -> Result<PathResult, EmError> {
    config.validate().map_err(|e| EmError::InvalidOption(e.to_string()))?;
    let (pb, pbeta) = (ds.z_pen.ncols(), ds.x_pen.ncols());
    let weights_or_unit = |w: &[f64], p: usize| if w.is_empty() { vec![1.0; p] } else { w.to_vec() };
    let w1_b = weights_or_unit(&config.weights_b, pb);
    let w1_beta = weights_or_unit(&config.weights_beta, pbeta);
    if w1_b.len() != pb || w1_beta.len() != pbeta {
        return Err(EmError::InvalidOption("stage-1 weights do not match penalized widths".into()));
    }
    let (work, scaling) = if opts.standardize {
        standardize_penalized(ds)
    } else {
        (ds.clone(), ScalingInfo::identity(ds))
    };
    let mut warm = params_to_standardized(init, &scaling);
    let mut entries = Vec::new();
    for (idx, (&lb, &lbeta)) in config.lambda_grid.iter().zip(config.beta_grid()).enumerate() {
        let pen1 = Penalty {
            lambda_b: lb,
            lambda_beta: lbeta,
            alpha_enet: config.alpha_enet,
            weights_b: w1_b.clone(),
            weights_beta: w1_beta.clone(),
        };
        let stage1 = fit_em(&work, &pen1, &warm, &opts.em)?;
        warm = stage1.params.clone();
        let size = stage1.selected_support_b.len() + stage1.selected_support_beta.len();
        if config.stages == 2 {
            let pen2 = Penalty {
                weights_b: adaptive_weights(&stage1.params.b_p, config.weight_cap),
                weights_beta: adaptive_weights(&stage1.params.beta_p, config.weight_cap),
                ..pen1.clone()
            };
            let stage2 = fit_em(&work, &pen2, &stage1.params, &opts.em)?;
            entries.push(PathEntry {
                lambda_b: lb,
                lambda_beta: lbeta,
                stage: 1,
                weights_b: pen1.weights_b,
                weights_beta: pen1.weights_beta,
                fit: fit_to_original(stage1, &scaling),
            });
            entries.push(PathEntry {
                lambda_b: lb,
                lambda_beta: lbeta,
                stage: 2,
                weights_b: pen2.weights_b,
                weights_beta: pen2.weights_beta,
                fit: fit_to_original(stage2, &scaling),
            });
        } else {
            entries.push(PathEntry {
                lambda_b: lb,
                lambda_beta: lbeta,
                stage: 1,
                weights_b: pen1.weights_b,
                weights_beta: pen1.weights_beta,
                fit: fit_to_original(stage1, &scaling),
            });
        }
        if let Some(limit) = opts.max_support {
            if size > limit {
                log::debug!("path stopped at grid point {idx}: support {size} exceeds {limit}");
                break;
            }
        }
    }
    Ok(PathResult { penalty: config.clone(), entries, scaling })
}

/// λ grid for `ds` computed on the scale [`fit_path`] works on.
pub fn default_lambda_grid(
    ds: &SurvivalDataset,
    init: &ParamSet,
    alpha_enet: f64,
    n_values: usize,
    min_ratio: f64,
    opts: &PathOptions,
) -> Result<Vec<f64>, EmError> {
    let work = if opts.standardize { standardize_penalized(ds).0 } else { ds.clone() };
    let tight = EmOptions { tol: opts.em.tol.min(1e-8), max_iter: opts.em.max_iter.max(1000), ..opts.em };
    let null = null_fit(&work, init, &tight)?;
    lambda_path(&null.params, &work, &null.estep, alpha_enet, n_values, min_ratio)
}
