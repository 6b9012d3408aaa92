//! Generalized monotone incremental forward stagewise (GMIFS) fitting.
//!
//! Every penalized coefficient is split into a nonnegative pair
//! `(pos, neg)`; a step adds `epsilon` to the single expanded coordinate with
//! the steepest descent of the negative observed log-likelihood. Unpenalized
//! parameters are re-optimized every `refresh_every` steps.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize_penalized, ScalingInfo, SurvivalDataset};
use crate::em::{initialize, params_to_original, EmError};
use crate::model::{logistic, observed_loglik_from_lp, row_derivatives, tmatvec, ModelError, ParamSet};
use crate::optim::{solve_l1_smooth, SmoothObjective, SolverOptions, THETA_BOUNDS};

/// Minimum observed log-likelihood gain over a refresh cycle.
pub const CYCLE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GmifsError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("refresh_every must be at least 1")]
    InvalidRefresh,
    #[error("non-finite observed log-likelihood at step {step}")]
    NonFinite { step: usize },
    #[error("step {step} is beyond the last step {last}")]
    StepOutOfRange { step: usize, last: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error("cannot write path: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmifsOptions {
    pub epsilon: f64,
    pub max_steps: usize,
    pub refresh_every: usize,
    /// Run on standardized penalized columns.
    pub standardize: bool,
    pub solver: SolverOptions,
}

impl Default for GmifsOptions {
    fn default() -> Self {
        GmifsOptions {
            epsilon: 0.001,
            max_steps: 20_000,
            refresh_every: 10,
            standardize: true,
            solver: SolverOptions { tol: 1e-6, max_iter: 100, ..Default::default() },
        }
    }
}

/// One ε-increment: penalized coordinate (b_p first, then β_p) and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Increment {
    pub coordinate: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unpenalized {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub b0: f64,
    pub b_u: Vec<f64>,
    pub beta_u: Vec<f64>,
}

impl Unpenalized {
    fn of(p: &ParamSet) -> Self {
        Unpenalized {
            alpha: p.alpha,
            gamma: p.gamma,
            theta: p.theta,
            b0: p.b0,
            b_u: p.b_u.clone(),
            beta_u: p.beta_u.clone(),
        }
    }

    fn apply(&self, p: &mut ParamSet) {
        p.alpha = self.alpha;
        p.gamma = self.gamma;
        p.theta = self.theta;
        p.b0 = self.b0;
        p.b_u.clone_from(&self.b_u);
        p.beta_u.clone_from(&self.beta_u);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loglik: f64,
    pub aic: f64,
    /// Set at the end of each refresh cycle.
    pub refreshed: bool,
}

/// Full stagewise path on the working (standardized when requested) scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagewiseState {
    pub epsilon: f64,
    pub frailty_enabled: bool,
    pub width_b: usize,
    pub width_beta: usize,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub step: usize,
    pub history: Vec<Increment>,
    pub trace: Vec<StepRecord>,
    /// Unpenalized parameters in force after each step (index = step).
    pub unpenalized: Vec<Unpenalized>,
    #[serde(skip)]
    pub scaling: Option<ScalingInfo>,
    #[serde(skip)]
    names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GmifsFit {
    pub state: StagewiseState,
    pub selected_step: usize,
    /// Selected model on the original covariate scale.
    pub params: ParamSet,
}

/// Negative mean observed log-likelihood in the unpenalized parameters with
/// the penalized linear predictors held fixed. `log θ` is mapped through a
/// logistic onto the admissible interval.
struct UnpenalizedObjective<'a> {
    ds: &'a SurvivalDataset,
    zb_offset: &'a [f64],
    eta_offset: &'a [f64],
    template: &'a ParamSet,
}

fn log_theta_range() -> (f64, f64) {
    (THETA_BOUNDS.0.ln(), THETA_BOUNDS.1.ln())
}

fn theta_to_free(theta: f64) -> f64 {
    let (lo, hi) = log_theta_range();
    let f = ((theta.ln() - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
    (f / (1.0 - f)).ln()
}

fn free_to_theta(u: f64) -> f64 {
    let (lo, hi) = log_theta_range();
    (lo + (hi - lo) * logistic(u)).exp().clamp(THETA_BOUNDS.0, THETA_BOUNDS.1)
}

impl UnpenalizedObjective<'_> {
    fn frailty(&self) -> usize {
        self.template.frailty_enabled as usize
    }

    fn encode(&self, p: &ParamSet) -> Vec<f64> {
        let mut x = vec![p.alpha.ln(), p.gamma.ln()];
        if p.frailty_enabled {
            x.push(theta_to_free(p.theta));
        }
        x.push(p.b0);
        x.extend(&p.b_u);
        x.extend(&p.beta_u);
        x
    }

    fn decode(&self, x: &[f64]) -> ParamSet {
        let mut p = self.template.clone();
        p.alpha = x[0].exp();
        p.gamma = x[1].exp();
        let mut k = 2;
        if p.frailty_enabled {
            p.theta = free_to_theta(x[2]);
            k += 1;
        }
        p.b0 = x[k];
        k += 1;
        let nb = p.b_u.len();
        p.b_u.copy_from_slice(&x[k..k + nb]);
        k += nb;
        let nbeta = p.beta_u.len();
        p.beta_u.copy_from_slice(&x[k..k + nbeta]);
        p
    }
}

impl SmoothObjective for UnpenalizedObjective<'_> {
    fn dim(&self) -> usize {
        3 + self.frailty() + self.template.b_u.len() + self.template.beta_u.len()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.decode(x);
        let n = self.ds.n();
        let mut zb = self.zb_offset.to_vec();
        let mut eta = self.eta_offset.to_vec();
        crate::model::add_matvec(&mut zb, &self.ds.z_unpen, &p.b_u);
        zb.iter_mut().for_each(|v| *v += p.b0);
        crate::model::add_matvec(&mut eta, &self.ds.x_unpen, &p.beta_u);
        let Ok(rd) = row_derivatives(&p, self.ds, &zb, &eta) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        };
        let scale = -1.0 / n as f64;
        grad[0] = rd.log_alpha * scale;
        grad[1] = rd.log_gamma * scale;
        let mut k = 2;
        if p.frailty_enabled {
            let s = logistic(x[2]);
            let (lo, hi) = log_theta_range();
            grad[2] = rd.log_theta * (hi - lo) * s * (1.0 - s) * scale;
            k += 1;
        }
        grad[k] = rd.d_zb.iter().sum::<f64>() * scale;
        k += 1;
        for (g, v) in grad[k..].iter_mut().zip(tmatvec(&self.ds.z_unpen, &rd.d_zb)) {
            *g = v * scale;
        }
        k += p.b_u.len();
        for (g, v) in grad[k..].iter_mut().zip(tmatvec(&self.ds.x_unpen, &rd.d_eta)) {
            *g = v * scale;
        }
        rd.value * scale
    }
}

fn penalized_lp(ds: &SurvivalDataset, p: &ParamSet) -> (Vec<f64>, Vec<f64>) {
    let mut zb = vec![0.0; ds.n()];
    let mut eta = vec![0.0; ds.n()];
    crate::model::add_matvec(&mut zb, &ds.z_pen, &p.b_p);
    crate::model::add_matvec(&mut eta, &ds.x_pen, &p.beta_p);
    (zb, eta)
}

/// Re-optimizes the unpenalized parameters of `params` in place and returns
/// the resulting observed log-likelihood. The update is kept only when it
/// does not lower the likelihood.
fn refresh(ds: &SurvivalDataset, params: &mut ParamSet, solver: &SolverOptions) -> Result<f64, ModelError> {
    let before = crate::model::observed_log_likelihood(params, ds)?;
    let (zb_off, eta_off) = penalized_lp(ds, params);
    let obj = UnpenalizedObjective { ds, zb_offset: &zb_off, eta_offset: &eta_off, template: params };
    let x0 = obj.encode(params);
    let zeros = vec![0.0; x0.len()];
    let res = solve_l1_smooth(&obj, &zeros, 0.0, &x0, solver);
    if let Ok(r) = res {
        let candidate = obj.decode(&r.x);
        if let Ok(after) = crate::model::observed_log_likelihood(&candidate, ds) {
            if after >= before {
                *params = candidate;
                return Ok(after);
            }
        }
    }
    Ok(before)
}

fn aic(loglik: f64, params: &ParamSet) -> f64 {
    let unpen = 3 + params.frailty_enabled as usize + params.b_u.len() + params.beta_u.len();
    let active = params.b_p.iter().chain(&params.beta_p).filter(|c| **c != 0.0).count();
    -2.0 * loglik + 2.0 * (unpen + active) as f64
}

/// Runs the stagewise path and selects the step with the smallest AIC.
///
/// The loop stops after `max_steps` increments, when no expanded coordinate
/// has a descent direction, or when a refresh cycle raises the observed
/// log-likelihood by less than [`CYCLE_TOL`]; such a cycle is undone, so the
/// log-likelihood recorded at refresh points strictly increases.
pub fn gmifs_fit(ds: &SurvivalDataset, frailty_enabled: bool, opts: &GmifsOptions) -> Result<GmifsFit, GmifsError> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(GmifsError::InvalidEpsilon(opts.epsilon));
    }
    if opts.refresh_every == 0 {
        return Err(GmifsError::InvalidRefresh);
    }
    let (work, scaling) = if opts.standardize {
        standardize_penalized(ds)
    } else {
        (ds.clone(), ScalingInfo::identity(ds))
    };
    let (pb, pbeta) = (work.z_pen.ncols(), work.x_pen.ncols());
    let mut params = initialize(&work, frailty_enabled)?;
    let mut ll = refresh(&work, &mut params, &opts.solver)?;
    let names = work
        .names
        .z_pen
        .iter()
        .map(|c| format!("b_p.{c}"))
        .chain(work.names.x_pen.iter().map(|c| format!("beta_p.{c}")))
        .collect();
    let mut state = StagewiseState {
        epsilon: opts.epsilon,
        frailty_enabled,
        width_b: pb,
        width_beta: pbeta,
        pos: vec![0.0; pb + pbeta],
        neg: vec![0.0; pb + pbeta],
        step: 0,
        history: Vec::new(),
        trace: vec![StepRecord { step: 0, loglik: ll, aic: aic(ll, &params), refreshed: true }],
        unpenalized: vec![Unpenalized::of(&params)],
        scaling: Some(scaling.clone()),
        names,
    };
    // Columns that are constant after standardization are all zero and can
    // never be selected.
    let mut zb = params.incidence_lp(&work);
    let mut eta = params.latency_lp(&work);
    let mut cycle_start = (0usize, ll);
    for s in 1..=opts.max_steps {
        let rd = row_derivatives(&params, &work, &zb, &eta).map_err(|_| GmifsError::NonFinite { step: s })?;
        let grad: Vec<f64> = tmatvec(&work.z_pen, &rd.d_zb)
            .into_iter()
            .chain(tmatvec(&work.x_pen, &rd.d_eta))
            .collect();
        let Some((j, g)) = grad
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (j, g)| match best {
                Some((_, bg)) if bg.abs() >= g.abs() => best,
                _ => Some((j, g)),
            })
            .filter(|(_, g)| *g != 0.0 && g.is_finite())
        else {
            break;
        };
        let positive = g > 0.0;
        let delta = if positive { opts.epsilon } else { -opts.epsilon };
        if positive {
            state.pos[j] += opts.epsilon;
        } else {
            state.neg[j] += opts.epsilon;
        }
        if j < pb {
            params.b_p[j] = state.pos[j] - state.neg[j];
            zb.iter_mut().zip(work.z_pen.column(j)).for_each(|(v, x)| *v += delta * x);
        } else {
            let k = j - pb;
            params.beta_p[k] = state.pos[j] - state.neg[j];
            eta.iter_mut().zip(work.x_pen.column(k)).for_each(|(v, x)| *v += delta * x);
        }
        state.history.push(Increment { coordinate: j, positive });
        state.step = s;
        let cycle_end = s % opts.refresh_every == 0 || s == opts.max_steps;
        ll = if cycle_end {
            let value = refresh(&work, &mut params, &opts.solver).map_err(|_| GmifsError::NonFinite { step: s })?;
            zb = params.incidence_lp(&work);
            eta = params.latency_lp(&work);
            value
        } else {
            observed_loglik_from_lp(&params, &work, &zb, &eta).map_err(|_| GmifsError::NonFinite { step: s })?
        };
        if !ll.is_finite() {
            return Err(GmifsError::NonFinite { step: s });
        }
        state.trace.push(StepRecord { step: s, loglik: ll, aic: aic(ll, &params), refreshed: cycle_end });
        state.unpenalized.push(Unpenalized::of(&params));
        if cycle_end {
            if ll - cycle_start.1 < CYCLE_TOL {
                let keep = cycle_start.0;
                state.trace.truncate(keep + 1);
                state.unpenalized.truncate(keep + 1);
                state.history.truncate(keep);
                let (pos, neg) = replay(&state.history, pb + pbeta, opts.epsilon, keep);
                state.pos = pos;
                state.neg = neg;
                state.step = keep;
                break;
            }
            cycle_start = (s, ll);
        }
    }
    let selected_step = state
        .trace
        .iter()
        .enumerate()
        .fold(0, |best, (k, r)| if r.aic < state.trace[best].aic { k } else { best });
    let working = state.params_at(selected_step, &work)?;
    let params = params_to_original(&working, &scaling);
    Ok(GmifsFit { state, selected_step, params })
}

fn replay(history: &[Increment], width: usize, epsilon: f64, step: usize) -> (Vec<f64>, Vec<f64>) {
    let mut counts = vec![(0u64, 0u64); width];
    for inc in &history[..step] {
        let c = &mut counts[inc.coordinate];
        if inc.positive {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    counts.iter().map(|&(p, n)| (p as f64 * epsilon, n as f64 * epsilon)).unzip()
}

impl StagewiseState {
    /// Expanded `(pos, neg)` vectors after `step` increments.
    pub fn expanded_at(&self, step: usize) -> Result<(Vec<f64>, Vec<f64>), GmifsError> {
        if step > self.step {
            return Err(GmifsError::StepOutOfRange { step, last: self.step });
        }
        Ok(replay(&self.history, self.width_b + self.width_beta, self.epsilon, step))
    }

    /// Working-scale parameter vector at `step` for a dataset with the same
    /// block widths.
    pub fn params_at(&self, step: usize, ds: &SurvivalDataset) -> Result<ParamSet, GmifsError> {
        let (b_p, beta_p) = gmifs_path_coefficients(self, step)?;
        let mut p = ParamSet::zeros_like(ds, self.frailty_enabled);
        p.b_p = b_p;
        p.beta_p = beta_p;
        self.unpenalized[step].apply(&mut p);
        Ok(p)
    }

    /// Writes the path as CSV: `step, loglik, aic`, then the expanded
    /// coordinates (`<name>+`, `<name>-`) on the working scale.
    pub fn write_path_csv<W: Write>(&self, out: W) -> Result<(), GmifsError> {
        let width = self.width_b + self.width_beta;
        let names: Vec<String> = if self.names.len() == width {
            self.names.clone()
        } else {
            (0..width).map(|j| format!("c{j}")).collect()
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "loglik".into(), "aic".into()];
        for name in &names {
            header.push(format!("{name}+"));
            header.push(format!("{name}-"));
        }
        w.write_record(&header).map_err(csv_io)?;
        let mut pos = vec![0u64; width];
        let mut neg = vec![0u64; width];
        for record in &self.trace {
            if record.step > 0 {
                let inc = self.history[record.step - 1];
                if inc.positive {
                    pos[inc.coordinate] += 1;
                } else {
                    neg[inc.coordinate] += 1;
                }
            }
            let mut row = vec![record.step.to_string(), record.loglik.to_string(), record.aic.to_string()];
            for j in 0..width {
                row.push((pos[j] as f64 * self.epsilon).to_string());
                row.push((neg[j] as f64 * self.epsilon).to_string());
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Effective working-scale coefficients `pos − neg` at `step`, split into
/// `(b_p, β_p)`.
pub fn gmifs_path_coefficients(state: &StagewiseState, step: usize) -> Result<(Vec<f64>, Vec<f64>), GmifsError> {
    let (pos, neg) = state.expanded_at(step)?;
    let coefs: Vec<f64> = pos.iter().zip(&neg).map(|(p, n)| p - n).collect();
    let (b, beta) = coefs.split_at(state.width_b);
    Ok((b.to_vec(), beta.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn informative(n: usize, p: usize) -> SurvivalDataset {
        let mut z = Array2::zeros((n, p));
        let mut x = Array2::zeros((n, p));
        let mut time = Vec::new();
        let mut status = Vec::new();
        for i in 0..n {
            for j in 0..p {
                // Deterministic pseudo-noise; column 0 carries the signal.
                let v = ((i * 7919 + j * 104729) % 1000) as f64 / 500.0 - 1.0;
                z[[i, j]] = v;
                x[[i, j]] = ((i * 31 + j * 17 + 3) % 97) as f64 / 48.5 - 1.0;
            }
            let sig = z[[i, 0]];
            status.push(sig > -0.2 && i % 3 != 0);
            time.push(1.0 + ((i * 13) % 29) as f64 / 10.0);
        }
        SurvivalDataset::new(time, status, Array2::zeros((n, 0)), z, Array2::zeros((n, 0)), x).unwrap()
    }

    #[test]
    fn zero_steps_is_the_unpenalized_fit() {
        let ds = informative(60, 4);
        let fit = gmifs_fit(&ds, false, &GmifsOptions { max_steps: 0, ..Default::default() }).unwrap();
        assert_eq!(fit.state.step, 0);
        assert_eq!(fit.selected_step, 0);
        assert!(fit.params.b_p.iter().chain(&fit.params.beta_p).all(|c| *c == 0.0));
    }

    #[test]
    fn consecutive_steps_differ_in_one_coordinate() {
        let ds = informative(80, 5);
        let fit = gmifs_fit(&ds, true, &GmifsOptions { max_steps: 60, epsilon: 0.01, ..Default::default() }).unwrap();
        let st = &fit.state;
        for s in 0..st.step {
            let (p0, n0) = st.expanded_at(s).unwrap();
            let (p1, n1) = st.expanded_at(s + 1).unwrap();
            let diffs: Vec<f64> =
                p0.iter().chain(&n0).zip(p1.iter().chain(&n1)).map(|(a, b)| b - a).filter(|d| *d != 0.0).collect();
            assert_eq!(diffs.len(), 1);
            assert!((diffs[0] - 0.01).abs() < 1e-12);
        }
        assert!(matches!(st.expanded_at(st.step + 1), Err(GmifsError::StepOutOfRange { .. })));
    }

    #[test]
    fn refresh_gradient_matches_finite_differences() {
        let n = 40;
        let mut zu = Array2::zeros((n, 1));
        let mut xu = Array2::zeros((n, 2));
        let mut time = Vec::new();
        let mut status = Vec::new();
        for i in 0..n {
            zu[[i, 0]] = (i % 3) as f64;
            xu[[i, 0]] = (i as f64 * 0.37).sin();
            xu[[i, 1]] = (i as f64 * 0.11).cos();
            time.push(0.2 + (i as f64 * 0.53).sin().abs() * 2.0);
            status.push(i % 3 != 1);
        }
        let ds = SurvivalDataset::new(time, status, zu, Array2::zeros((n, 0)), xu, Array2::zeros((n, 0))).unwrap();
        let mut p = ParamSet::zeros_like(&ds, true);
        p.theta = 0.7;
        let off: Vec<f64> = (0..n).map(|i| 0.1 * (i as f64).cos()).collect();
        let obj = UnpenalizedObjective { ds: &ds, zb_offset: &off, eta_offset: &off, template: &p };
        let x: Vec<f64> = vec![0.2, 0.3, theta_to_free(0.7), -0.4, 0.5, 0.3, -0.2];
        let mut g = vec![0.0; x.len()];
        obj.value_grad(&x, &mut g);
        for j in 0..x.len() {
            let h = 1e-6;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "coordinate {j}: fd {fd} analytic {}", g[j]);
        }
    }

    #[test]
    fn theta_map_round_trip() {
        for theta in [1e-3, 0.5, 1.0, 7.0, 300.0] {
            assert!((free_to_theta(theta_to_free(theta)) / theta - 1.0).abs() < 1e-10);
        }
    }
}
