//! Concordance, variable-selection, estimation-error and risk-score metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data::SurvivalDataset;
use crate::em::{fit_em, initialize, EmError, EmOptions, FitResult, ZERO_THRESHOLD};
use crate::optim::Penalty;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("zero total pair weight")]
    ZeroDenominator,
    #[error("true coefficient vector has no nonzero entries; sensitivity undefined")]
    NoTrueSignal,
    #[error("oracle estimate has zero error; relative error is infinite")]
    ZeroOracleError,
    #[error("empty selection")]
    EmptySelection,
    #[error("log-rank test needs two non-empty groups")]
    EmptyGroup,
    #[error("log-rank test needs at least one event")]
    NoEvents,
    #[error("log-rank variance is zero")]
    ZeroVariance,
    #[error("oracle support of size {support} is not smaller than n = {n}")]
    SupportTooLarge { support: usize, n: usize },
    #[error("oracle fit failed: {0}")]
    Oracle(#[from] EmError),
}

fn same_len(what: &str, lens: &[usize]) -> Result<(), MetricsError> {
    if lens.windows(2).all(|w| w[0] == w[1]) {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch(format!("{what}: {lens:?}")))
    }
}

#[inline]
fn comparable(ti: f64, di: bool, tj: f64, dj: bool) -> bool {
    di && (ti < tj || (ti == tj && !dj))
}

/// Weighted concordance `Σ 1{s_i > s_j} w_j I_ij / Σ w_j I_ij`.
fn weighted_concordance(scores: &[f64], t: &[f64], delta: &[bool], weight: impl Fn(usize) -> f64) -> (f64, f64) {
    let n = scores.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        if !delta[i] {
            continue;
        }
        for j in 0..n {
            if i == j || !comparable(t[i], delta[i], t[j], delta[j]) {
                continue;
            }
            let w = weight(j);
            den += w;
            if scores[i] > scores[j] {
                num += w;
            }
        }
    }
    (num, den)
}

/// Harrell's concordance index with higher scores meaning higher risk.
/// Tied scores contribute nothing to the numerator.
pub fn c_statistic(scores: &[f64], t: &[f64], delta: &[bool]) -> Result<f64, MetricsError> {
    same_len("c_statistic", &[scores.len(), t.len(), delta.len()])?;
    let (num, den) = weighted_concordance(scores, t, delta, |_| 1.0);
    if den == 0.0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok(num / den)
}

/// Concordance with cure-status weights: the later subject of each pair is
/// weighted by its known uncured status, or by `π̂` when the status is unknown.
pub fn c_statistic_cure(
    scores: &[f64],
    pi_hat: &[f64],
    t: &[f64],
    delta: &[bool],
    known_y: &[Option<bool>],
) -> Result<f64, MetricsError> {
    same_len("c_statistic_cure", &[scores.len(), pi_hat.len(), t.len(), delta.len(), known_y.len()])?;
    let weight = |j: usize| match known_y[j] {
        Some(y) => y as u8 as f64,
        None => pi_hat[j],
    };
    let (num, den) = weighted_concordance(scores, t, delta, weight);
    if den == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(num / den)
}

/// Cure status known from the data alone: uncured for events, unknown otherwise.
pub fn observed_cure_status(delta: &[bool]) -> Vec<Option<bool>> {
    delta.iter().map(|&d| if d { Some(true) } else { None }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Sensitivity, specificity and false-positive rate of an estimated support.
/// Specificity is 1 when every true coefficient is nonzero.
pub fn selection_metrics(true_coefs: &[f64], est_coefs: &[f64]) -> Result<SelectionMetrics, MetricsError> {
    same_len("selection_metrics", &[true_coefs.len(), est_coefs.len()])?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (t, e) in true_coefs.iter().zip(est_coefs) {
        match (t.abs() > ZERO_THRESHOLD, e.abs() > ZERO_THRESHOLD) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    if tp + fn_ == 0 {
        return Err(MetricsError::NoTrueSignal);
    }
    let specificity = if fp + tn == 0 { 1.0 } else { tn as f64 / (fp + tn) as f64 };
    Ok(SelectionMetrics {
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity,
        fpr: 1.0 - specificity,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Covariance of the penalized covariates, used without materializing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity,
    /// Unit variances, correlation `ρ^{|i-j|}` within consecutive blocks,
    /// independent across blocks.
    BlockToeplitz { rho: f64, block_size: usize },
}

impl CovarianceSpec {
    /// `vᵀ Σ v` in `O(len)`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        match *self {
            CovarianceSpec::Identity => v.iter().map(|x| x * x).sum(),
            CovarianceSpec::BlockToeplitz { rho, block_size } => {
                let b = block_size.max(1);
                let mut total = 0.0;
                for block in v.chunks(b) {
                    let m = block.len();
                    let mut fwd = vec![0.0; m];
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc = block[k] + rho * acc;
                        fwd[k] = acc;
                    }
                    let mut bwd = 0.0;
                    for k in (0..m).rev() {
                        bwd = block[k] + rho * bwd;
                        // Σ_l ρ^{|k-l|} v_l = fwd_k + bwd_k - v_k
                        total += block[k] * (fwd[k] + bwd - block[k]);
                    }
                }
                total
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rme: f64,
    pub err: f64,
}

/// Model error and estimation error of `est` relative to the oracle estimate.
pub fn rme_err(est: &[f64], truth: &[f64], sigma: &CovarianceSpec, oracle: &[f64]) -> Result<ErrorMetrics, MetricsError> {
    same_len("rme_err", &[est.len(), truth.len(), oracle.len()])?;
    let diff = |a: &[f64]| -> Vec<f64> { a.iter().zip(truth).map(|(x, y)| x - y).collect() };
    let (d_est, d_or) = (diff(est), diff(oracle));
    let (num_s, den_s) = (sigma.quad_form(&d_est), sigma.quad_form(&d_or));
    let (num_i, den_i) = (CovarianceSpec::Identity.quad_form(&d_est), CovarianceSpec::Identity.quad_form(&d_or));
    if den_s == 0.0 || den_i == 0.0 {
        return Err(MetricsError::ZeroOracleError);
    }
    Ok(ErrorMetrics { rme: num_s / den_s, err: num_i / den_i })
}

/// Unpenalized fit restricted to the given penalized supports; coefficients
/// outside the supports are zero.
pub fn fit_oracle(
    ds: &SurvivalDataset,
    support_b: &[usize],
    support_beta: &[usize],
    frailty_enabled: bool,
    opts: &EmOptions,
) -> Result<FitResult, MetricsError> {
    let size = support_b.len().max(support_beta.len());
    if size >= ds.n() {
        return Err(MetricsError::SupportTooLarge { support: size, n: ds.n() });
    }
    let reduced = ds.select_penalized(support_b, support_beta);
    let init = initialize(&reduced, frailty_enabled)?;
    let fit = fit_em(&reduced, &Penalty::none(support_b.len(), support_beta.len()), &init, opts)?;
    let mut out = fit.clone();
    out.params.b_p = vec![0.0; ds.z_pen.ncols()];
    out.params.beta_p = vec![0.0; ds.x_pen.ncols()];
    for (k, &j) in support_b.iter().enumerate() {
        out.params.b_p[j] = fit.params.b_p[k];
    }
    for (k, &j) in support_beta.iter().enumerate() {
        out.params.beta_p[j] = fit.params.beta_p[k];
    }
    out.selected_support_b = crate::em::support(&out.params.b_p);
    out.selected_support_beta = crate::em::support(&out.params.beta_p);
    Ok(out)
}

/// Bias and mean squared error of estimated uncured probabilities, averaged
/// over subjects and then over replications.
pub fn uncured_bias_mse(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64), MetricsError> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut bias, mut mse) = (0.0, 0.0);
    for (k, (hat, truth)) in pairs.iter().enumerate() {
        same_len(&format!("replication {k}"), &[hat.len(), truth.len()])?;
        let n = hat.len() as f64;
        bias += hat.iter().zip(truth).map(|(h, t)| h - t).sum::<f64>() / n;
        mse += hat.iter().zip(truth).map(|(h, t)| (h - t) * (h - t)).sum::<f64>() / n;
    }
    let r = pairs.len() as f64;
    Ok((bias / r, mse / r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    pub scores: Vec<f64>,
    /// True for the high-risk half.
    pub high: Vec<bool>,
    /// All scores equal, so the split carries no information.
    pub degenerate: bool,
}

/// Linear risk score over the selected columns, split at the median.
///
/// Subjects are ranked by score; the lower `⌈n/2⌉` ranks form the low group,
/// so ties at the median go low and group sizes differ by at most one.
pub fn prognostic_risk_score(coefs: &[f64], x: &Array2<f64>) -> Result<RiskScores, MetricsError> {
    if coefs.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    same_len("prognostic_risk_score", &[coefs.len(), x.ncols()])?;
    let scores: Vec<f64> = x.rows().into_iter().map(|r| r.iter().zip(coefs).map(|(a, b)| a * b).sum()).collect();
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let n_low = n.div_ceil(2);
    let mut high = vec![false; n];
    for &i in &order[n_low..] {
        high[i] = true;
    }
    let degenerate = scores.windows(2).all(|w| w[0] == w[1]);
    Ok(RiskScores { scores, high, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample log-rank chi-square test with one degree of freedom.
pub fn logrank_test(group: &[bool], t: &[f64], delta: &[bool]) -> Result<LogRank, MetricsError> {
    same_len("logrank_test", &[group.len(), t.len(), delta.len()])?;
    let n1_total = group.iter().filter(|&&g| g).count();
    if n1_total == 0 || n1_total == group.len() {
        return Err(MetricsError::EmptyGroup);
    }
    if !delta.iter().any(|&d| d) {
        return Err(MetricsError::NoEvents);
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    let (mut at_risk, mut at_risk1) = (t.len() as f64, n1_total as f64);
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let time = t[order[k]];
        let (mut d, mut d1, mut leaving, mut leaving1) = (0.0, 0.0, 0.0, 0.0);
        while k < order.len() && t[order[k]] == time {
            let i = order[k];
            if delta[i] {
                d += 1.0;
                if group[i] {
                    d1 += 1.0;
                }
            }
            leaving += 1.0;
            if group[i] {
                leaving1 += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            let frac = at_risk1 / at_risk;
            o_minus_e += d1 - d * frac;
            if at_risk > 1.0 {
                var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leaving;
        at_risk1 -= leaving1;
    }
    if !(var > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let statistic = o_minus_e * o_minus_e / var;
    Ok(LogRank { statistic, p_value: erfc((statistic / 2.0).sqrt()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_subject_concordance() {
        let t = [1.0, 2.0];
        let d = [true, true];
        assert_eq!(c_statistic(&[2.0, 1.0], &t, &d).unwrap(), 1.0);
        assert_eq!(c_statistic(&[1.0, 2.0], &t, &d).unwrap(), 0.0);
        assert_eq!(c_statistic(&[1.0, 1.0], &t, &d).unwrap(), 0.0);
        assert!(matches!(c_statistic(&[1.0, 2.0], &t, &[false, false]), Err(MetricsError::NoComparablePairs)));
    }

    #[test]
    fn cure_weighted_three_subjects() {
        // Pairs: (0,1) w=π̂_1=0.5 concordant, (0,2) w=1 discordant, (2,1) w=0.5 concordant.
        let t = [1.0, 3.0, 2.0];
        let d = [true, false, true];
        let scores = [0.5, 0.1, 0.9];
        let pi = [0.9, 0.5, 0.7];
        let known = observed_cure_status(&d);
        let c = c_statistic_cure(&scores, &pi, &t, &d, &known).unwrap();
        assert!((c - 1.0 / 2.0).abs() < 1e-15, "{c}");
        let zero = [0.0; 3];
        assert!(c_statistic_cure(&scores, &zero, &t, &[true, false, false], &[None; 3]).is_err());
    }

    #[test]
    fn selection_counts() {
        let truth = [1.0, 1.0, 0.0, 0.0];
        let m = selection_metrics(&truth, &[0.3, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fpr), (0.5, 0.5, 0.5));
        let m = selection_metrics(&truth, &truth).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fpr), (1.0, 1.0, 0.0));
        let m = selection_metrics(&truth, &[0.0; 4]).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fpr), (0.0, 1.0, 0.0));
        assert!(matches!(selection_metrics(&[0.0; 4], &truth), Err(MetricsError::NoTrueSignal)));
    }

    #[test]
    fn block_quadratic_form_matches_dense() {
        let v = [0.3, -1.2, 2.0, 0.5, -0.7, 1.1, 0.0];
        let (rho, b) = (0.6f64, 3);
        let mut dense = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                if i / b == j / b {
                    dense += rho.powi((i as i32 - j as i32).abs()) * v[i] * v[j];
                }
            }
        }
        let q = CovarianceSpec::BlockToeplitz { rho, block_size: b }.quad_form(&v);
        assert!((q - dense).abs() < 1e-13);
        let q0 = CovarianceSpec::BlockToeplitz { rho: 0.0, block_size: b }.quad_form(&v);
        assert!((q0 - CovarianceSpec::Identity.quad_form(&v)).abs() < 1e-13);
    }

    #[test]
    fn rme_err_reference_points() {
        let truth = [1.0, 0.0, 2.0];
        let oracle = [1.1, 0.0, 1.8];
        let sigma = CovarianceSpec::BlockToeplitz { rho: 0.5, block_size: 3 };
        let e = rme_err(&truth, &truth, &sigma, &oracle).unwrap();
        assert_eq!((e.rme, e.err), (0.0, 0.0));
        let e = rme_err(&oracle, &truth, &sigma, &oracle).unwrap();
        assert_eq!((e.rme, e.err), (1.0, 1.0));
        assert!(matches!(rme_err(&oracle, &truth, &sigma, &truth), Err(MetricsError::ZeroOracleError)));
    }

    #[test]
    fn bias_mse_shift() {
        let pairs = vec![(vec![0.6, 0.2], vec![0.5, 0.1]), (vec![0.4], vec![0.3])];
        let (b, m) = uncured_bias_mse(&pairs).unwrap();
        assert!((b - 0.1).abs() < 1e-15 && (m - 0.01).abs() < 1e-15);
    }

    #[test]
    fn median_split() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let r = prognostic_risk_score(&[1.0], &x).unwrap();
        assert_eq!(r.scores, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.high, vec![false, false, true, true]);
        let r = prognostic_risk_score(&[0.0], &x).unwrap();
        assert!(r.degenerate);
        assert!(matches!(prognostic_risk_score(&[], &x), Err(MetricsError::EmptySelection)));
    }

    #[test]
    fn logrank_single_event() {
        // One event at t=1 in group A with 2 of 4 at risk in each group:
        // O-E = 1 - 0.5, V = 0.25 * 3 / 3.
        let g = [true, true, false, false];
        let t = [1.0, 2.0, 3.0, 4.0];
        let d = [true, false, false, false];
        let r = logrank_test(&g, &t, &d).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-15);
        assert!(matches!(logrank_test(&[true; 4], &t, &d), Err(MetricsError::EmptyGroup)));
    }

    #[test]
    fn logrank_separated_groups() {
        let mut g = vec![true; 10];
        g.extend(vec![false; 10]);
        let t: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 + i as f64 * 0.1 } else { 10.0 + i as f64 }).collect();
        let d: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let r = logrank_test(&g, &t, &d).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
    }
}
