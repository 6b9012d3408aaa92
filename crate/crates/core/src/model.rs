//! Weibull mixture cure model with gamma frailty.
//!
//! Incidence is logistic in `z = (1, z_u, z_p)`; the latency baseline is
//! Weibull with cumulative hazard `H0(t) = α t^γ`; the frailty `W` is gamma
//! with mean 1 and variance `1/θ`, marginalized through its Laplace transform.
//! All likelihood arithmetic is done on the log scale.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SurvivalDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("Laplace transform argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("non-finite log-likelihood contribution at row {row}")]
    NonFinite { row: usize },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Full parameter vector `(α, γ, θ, β_u, β_p, b0, b_u, b_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamRepr", from = "ParamRepr")]
pub struct ParamSet {
    pub alpha: f64,
    pub gamma: f64,
    /// Ignored when `frailty_enabled` is false.
    pub theta: f64,
    pub beta_u: Vec<f64>,
    pub beta_p: Vec<f64>,
    pub b0: f64,
    pub b_u: Vec<f64>,
    pub b_p: Vec<f64>,
    pub frailty_enabled: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamRepr {
    alpha: f64,
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    beta_u: Vec<f64>,
    beta_p: Vec<f64>,
    b0: f64,
    b_u: Vec<f64>,
    b_p: Vec<f64>,
    frailty_enabled: bool,
}

impl From<ParamSet> for ParamRepr {
    fn from(p: ParamSet) -> Self {
        ParamRepr {
            alpha: p.alpha,
            gamma: p.gamma,
            theta: p.frailty_enabled.then_some(p.theta),
            beta_u: p.beta_u,
            beta_p: p.beta_p,
            b0: p.b0,
            b_u: p.b_u,
            b_p: p.b_p,
            frailty_enabled: p.frailty_enabled,
        }
    }
}

impl From<ParamRepr> for ParamSet {
    fn from(r: ParamRepr) -> Self {
        ParamSet {
            alpha: r.alpha,
            gamma: r.gamma,
            theta: r.theta.unwrap_or(1.0),
            beta_u: r.beta_u,
            beta_p: r.beta_p,
            b0: r.b0,
            b_u: r.b_u,
            b_p: r.b_p,
            frailty_enabled: r.frailty_enabled,
        }
    }
}

impl ParamSet {
    /// All coefficients zero, `α = γ = θ = 1`, sized for `ds`.
    pub fn zeros_like(ds: &SurvivalDataset, frailty_enabled: bool) -> Self {
        ParamSet {
            alpha: 1.0,
            gamma: 1.0,
            theta: 1.0,
            beta_u: vec![0.0; ds.x_unpen.ncols()],
            beta_p: vec![0.0; ds.x_pen.ncols()],
            b0: 0.0,
            b_u: vec![0.0; ds.z_unpen.ncols()],
            b_p: vec![0.0; ds.z_pen.ncols()],
            frailty_enabled,
        }
    }

    pub fn check(&self, ds: &SurvivalDataset) -> Result<(), ModelError> {
        let dims = [
            ("b_u", ds.z_unpen.ncols(), self.b_u.len()),
            ("b_p", ds.z_pen.ncols(), self.b_p.len()),
            ("beta_u", ds.x_unpen.ncols(), self.beta_u.len()),
            ("beta_p", ds.x_pen.ncols(), self.beta_p.len()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(ModelError::Dimension { what, expected, found });
            }
        }
        for (name, value) in [("alpha", self.alpha), ("gamma", self.gamma), ("theta", self.theta)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// `z_iᵀ b` for every row.
    pub fn incidence_lp(&self, ds: &SurvivalDataset) -> Vec<f64> {
        let mut lp = vec![self.b0; ds.n()];
        add_matvec(&mut lp, &ds.z_unpen, &self.b_u);
        add_matvec(&mut lp, &ds.z_pen, &self.b_p);
        lp
    }

    /// `x_iᵀ β` for every row.
    pub fn latency_lp(&self, ds: &SurvivalDataset) -> Vec<f64> {
        let mut lp = vec![0.0; ds.n()];
        add_matvec(&mut lp, &ds.x_unpen, &self.beta_u);
        add_matvec(&mut lp, &ds.x_pen, &self.beta_p);
        lp
    }

    /// Estimated uncured probabilities `π(z_i)`.
    pub fn uncured_probabilities(&self, ds: &SurvivalDataset) -> Vec<f64> {
        self.incidence_lp(ds).into_iter().map(logistic).collect()
    }

    /// Linear predictor layout length `1 + |b_u| + |b_p|`.
    pub fn incidence_width(&self) -> usize {
        1 + self.b_u.len() + self.b_p.len()
    }

    pub fn latency_width(&self) -> usize {
        self.beta_u.len() + self.beta_p.len()
    }

    pub fn frailty(&self) -> Frailty {
        if self.frailty_enabled {
            Frailty::Gamma { theta: self.theta }
        } else {
            Frailty::None
        }
    }
}

/// `out += m · v`, rows in order.
pub(crate) fn add_matvec(out: &mut [f64], m: &Array2<f64>, v: &[f64]) {
    if v.is_empty() {
        return;
    }
    if v.iter().all(|&c| c == 0.0) {
        return;
    }
    for (o, row) in out.iter_mut().zip(m.rows()) {
        *o += dot(row, v);
    }
}

#[inline]
pub(crate) fn dot(row: ArrayView1<'_, f64>, v: &[f64]) -> f64 {
    match row.as_slice() {
        Some(r) => r.iter().zip(v).map(|(a, b)| a * b).sum(),
        None => row.iter().zip(v).map(|(a, b)| a * b).sum(),
    }
}

/// Numerically stable `e^x / (1 + e^x)`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(e^a + e^b)`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frailty specification of the latency part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frailty {
    /// `W ≡ 1`.
    None,
    /// Gamma with mean 1 and variance `1/θ`.
    Gamma { theta: f64 },
}

impl Frailty {
    /// `log L_W(s)` for `s = exp(log_s)`.
    #[inline]
    pub(crate) fn log_laplace_from_log(self, log_s: f64) -> f64 {
        match self {
            Frailty::None => -log_s.exp(),
            Frailty::Gamma { theta } => -theta * softplus(log_s - theta.ln()),
        }
    }
}

/// Laplace transform of the frailty, `E[e^{-sW}]`: `(1 + s/θ)^{-θ}` for gamma
/// frailty and `e^{-s}` without frailty.
pub fn frailty_laplace(s: f64, theta: f64, frailty_enabled: bool) -> Result<f64, ModelError> {
    if !(s >= 0.0) {
        return Err(ModelError::NegativeArgument(s));
    }
    if frailty_enabled && !(theta > 0.0) {
        return Err(ModelError::InvalidParameter { name: "theta", value: theta });
    }
    Ok(if frailty_enabled { (-theta * (s / theta).ln_1p()).exp() } else { (-s).exp() })
}

fn check_row(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, found })
    }
}

/// `π(z)` for a row laid out as `(1, z_u, z_p)`.
pub fn uncured_probability(params: &ParamSet, z_row: &[f64]) -> Result<f64, ModelError> {
    Ok(logistic(incidence_row_lp(params, z_row)?))
}

fn incidence_row_lp(params: &ParamSet, z_row: &[f64]) -> Result<f64, ModelError> {
    check_row("incidence row", params.incidence_width(), z_row.len())?;
    let coefs = std::iter::once(&params.b0).chain(&params.b_u).chain(&params.b_p);
    Ok(z_row.iter().zip(coefs).map(|(z, b)| z * b).sum())
}

fn latency_row_lp(params: &ParamSet, x_row: &[f64]) -> Result<f64, ModelError> {
    check_row("latency row", params.latency_width(), x_row.len())?;
    let coefs = params.beta_u.iter().chain(&params.beta_p);
    Ok(x_row.iter().zip(coefs).map(|(x, b)| x * b).sum())
}

/// `log(α t^γ e^η)`, the log cumulative hazard of the uncured before frailty.
#[inline]
pub(crate) fn log_cum_hazard(alpha: f64, gamma: f64, t: f64, eta: f64) -> f64 {
    alpha.ln() + gamma * t.ln() + eta
}

/// Marginal survival of the uncured, `L_W(e^{xᵀβ} H0(t))`.
pub fn latency_survival(params: &ParamSet, x_row: &[f64], t: f64) -> Result<f64, ModelError> {
    let eta = latency_row_lp(params, x_row)?;
    if !(t >= 0.0) {
        return Err(ModelError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let log_h = log_cum_hazard(params.alpha, params.gamma, t, eta);
    Ok(params.frailty().log_laplace_from_log(log_h).exp())
}

/// Population survival `1 - π(z) + π(z) S_u(t | x)`.
pub fn population_survival(
    params: &ParamSet,
    x_row: &[f64],
    z_row: &[f64],
    t: f64,
) -> Result<f64, ModelError> {
    let su = latency_survival(params, x_row, t)?;
    let pi = uncured_probability(params, z_row)?;
    Ok((1.0 - pi) + pi * su)
}

/// Per-row log-likelihood and its derivatives with respect to the incidence
/// predictor, the latency predictor and the log scalar parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct RowTerms {
    pub loglik: f64,
    /// Posterior probability of being uncured.
    pub p: f64,
    pub d_zb: f64,
    pub d_eta: f64,
    pub d_log_alpha: f64,
    pub d_log_gamma: f64,
    pub d_log_theta: f64,
}

#[inline]
pub(crate) fn row_terms(
    alpha: f64,
    gamma: f64,
    frailty: Frailty,
    t: f64,
    event: bool,
    zb: f64,
    eta: f64,
    with_derivatives: bool,
) -> RowTerms {
    let log_t = t.ln();
    let log_h = alpha.ln() + gamma * log_t + eta;
    let h = log_h.exp();
    let log_pi = -softplus(-zb);
    let pi = logistic(zb);
    let mut out = RowTerms::default();
    match frailty {
        Frailty::None => {
            if event {
                out.loglik = log_pi + alpha.ln() + gamma.ln() + (gamma - 1.0) * log_t + eta - h;
                out.p = 1.0;
                if with_derivatives {
                    let d = 1.0 - h;
                    out.d_eta = d;
                    out.d_log_alpha = d;
                    out.d_log_gamma = 1.0 + gamma * log_t * d;
                }
            } else {
                let log_su = -h;
                out.loglik = log_add_exp(-softplus(zb), log_pi + log_su);
                out.p = logistic(zb + log_su);
                if with_derivatives {
                    let d = if out.p == 0.0 { 0.0 } else { -out.p * h };
                    out.d_eta = d;
                    out.d_log_alpha = d;
                    out.d_log_gamma = gamma * log_t * d;
                }
            }
        }
        Frailty::Gamma { theta } => {
            // log(1 + H/θ) from log H, finite even when H overflows.
            let log1p_u = softplus(log_h - theta.ln());
            // u / (1 + u), stable for overflowing hazards.
            let ratio = logistic(log_h - theta.ln());
            if event {
                out.loglik = log_pi + alpha.ln() + gamma.ln() + (gamma - 1.0) * log_t + eta
                    - (theta + 1.0) * log1p_u;
                out.p = 1.0;
                if with_derivatives {
                    let d = 1.0 - (theta + 1.0) * ratio;
                    out.d_eta = d;
                    out.d_log_alpha = d;
                    out.d_log_gamma = 1.0 + gamma * log_t * d;
                    out.d_log_theta = -theta * log1p_u + (theta + 1.0) * ratio;
                }
            } else {
                let log_su = -theta * log1p_u;
                out.loglik = log_add_exp(-softplus(zb), log_pi + log_su);
                out.p = logistic(zb + log_su);
                if with_derivatives {
                    let d = -out.p * theta * ratio;
                    out.d_eta = d;
                    out.d_log_alpha = d;
                    out.d_log_gamma = gamma * log_t * d;
                    out.d_log_theta = if out.p == 0.0 { 0.0 } else { out.p * theta * (ratio - log1p_u) };
                }
            }
        }
    }
    out.d_zb = out.p - pi;
    out
}

/// Observed-data log-likelihood of the mixture cure frailty model.
pub fn observed_log_likelihood(params: &ParamSet, ds: &SurvivalDataset) -> Result<f64, ModelError> {
    params.check(ds)?;
    let zb = params.incidence_lp(ds);
    let eta = params.latency_lp(ds);
    observed_loglik_from_lp(params, ds, &zb, &eta)
}

pub(crate) fn observed_loglik_from_lp(
    params: &ParamSet,
    ds: &SurvivalDataset,
    zb: &[f64],
    eta: &[f64],
) -> Result<f64, ModelError> {
    let frailty = params.frailty();
    let mut total = 0.0;
    for i in 0..ds.n() {
        let r = row_terms(params.alpha, params.gamma, frailty, ds.time[i], ds.status[i], zb[i], eta[i], false);
        if !r.loglik.is_finite() {
            return Err(ModelError::NonFinite { row: i + 1 });
        }
        total += r.loglik;
    }
    Ok(total)
}

/// Gradient of the observed log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikGradient {
    pub value: f64,
    pub log_alpha: f64,
    pub log_gamma: f64,
    /// Zero without frailty.
    pub log_theta: f64,
    pub b0: f64,
    pub b_u: Vec<f64>,
    pub b_p: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub beta_p: Vec<f64>,
}

/// Per-row derivative vectors, from which coefficient gradients follow by
/// transposed products with the covariate blocks.
pub(crate) struct RowDerivatives {
    pub value: f64,
    pub d_zb: Vec<f64>,
    pub d_eta: Vec<f64>,
    pub log_alpha: f64,
    pub log_gamma: f64,
    pub log_theta: f64,
}

pub(crate) fn row_derivatives(
    params: &ParamSet,
    ds: &SurvivalDataset,
    zb: &[f64],
    eta: &[f64],
) -> Result<RowDerivatives, ModelError> {
    let frailty = params.frailty();
    let n = ds.n();
    let mut out = RowDerivatives {
        value: 0.0,
        d_zb: Vec::with_capacity(n),
        d_eta: Vec::with_capacity(n),
        log_alpha: 0.0,
        log_gamma: 0.0,
        log_theta: 0.0,
    };
    for i in 0..n {
        let r = row_terms(params.alpha, params.gamma, frailty, ds.time[i], ds.status[i], zb[i], eta[i], true);
        if !r.loglik.is_finite() {
            return Err(ModelError::NonFinite { row: i + 1 });
        }
        out.value += r.loglik;
        out.d_zb.push(r.d_zb);
        out.d_eta.push(r.d_eta);
        out.log_alpha += r.d_log_alpha;
        out.log_gamma += r.d_log_gamma;
        out.log_theta += r.d_log_theta;
    }
    Ok(out)
}

/// `mᵀ v`.
pub(crate) fn tmatvec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    if out.is_empty() {
        return out;
    }
    for (row, &w) in m.rows().into_iter().zip(v) {
        if w == 0.0 {
            continue;
        }
        match row.as_slice() {
            Some(r) => out.iter_mut().zip(r).for_each(|(o, x)| *o += w * x),
            None => out.iter_mut().zip(row.iter()).for_each(|(o, x)| *o += w * x),
        }
    }
    out
}

/// Observed log-likelihood and its full analytic gradient.
pub fn observed_loglik_gradient(params: &ParamSet, ds: &SurvivalDataset) -> Result<LoglikGradient, ModelError> {
    params.check(ds)?;
    let zb = params.incidence_lp(ds);
    let eta = params.latency_lp(ds);
    let rd = row_derivatives(params, ds, &zb, &eta)?;
    Ok(LoglikGradient {
        value: rd.value,
        log_alpha: rd.log_alpha,
        log_gamma: rd.log_gamma,
        log_theta: rd.log_theta,
        b0: rd.d_zb.iter().sum(),
        b_u: tmatvec(&ds.z_unpen, &rd.d_zb),
        b_p: tmatvec(&ds.z_pen, &rd.d_zb),
        beta_u: tmatvec(&ds.x_unpen, &rd.d_eta),
        beta_p: tmatvec(&ds.x_pen, &rd.d_eta),
    })
}
