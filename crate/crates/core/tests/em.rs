use approx::assert_relative_eq;

use penmcfm::data::standardize_penalized;
use penmcfm::em::{
    e_step, fit_em, fit_em_observed, initialize, lambda_max, null_fit, penalized_objective, EmOptions,
};
use penmcfm::optim::{maximize_theta, Penalty, THETA_BOUNDS};
use penmcfm::simulate::{simulate, SimulationScenario};
use penmcfm::SurvivalDataset;

fn dataset(seed: u64) -> SurvivalDataset {
    let sc = SimulationScenario { n: 200, p: 30, s: 3, block_size: 10, v: 1.5, seed, ..Default::default() };
    standardize_penalized(&simulate(&sc).unwrap().dataset).0
}

#[test]
fn accelerated_em_is_monotone_and_reaches_the_plain_optimum() {
    let ds = dataset(21);
    let init = initialize(&ds, true).unwrap();
    let penalty = Penalty::unit(0.02, 1.0, 30, 30);
    let plain_opts = EmOptions { tol: 1e-7, max_iter: 3000, ..Default::default() };
    let fast_opts = EmOptions { accelerate: true, ..plain_opts };

    let mut last = penalized_objective(&init, &ds, &penalty).unwrap();
    let fast = fit_em_observed(&ds, &penalty, &init, &fast_opts, |info| {
        let obj = penalized_objective(info.params, &ds, &penalty).unwrap();
        assert!(obj >= last - 1e-8, "iteration {}: {obj} < {last}", info.iteration);
        last = obj;
    })
    .unwrap();
    let plain = fit_em(&ds, &penalty, &init, &plain_opts).unwrap();

    assert!(fast.converged);
    assert!(fast.iterations <= plain.iterations, "{} vs {}", fast.iterations, plain.iterations);
    let f = penalized_objective(&fast.params, &ds, &penalty).unwrap();
    let p = penalized_objective(&plain.params, &ds, &penalty).unwrap();
    assert!(f >= p - 1e-6 * p.abs(), "accelerated {f} vs plain {p}");
    assert_eq!(fast.selected_support_beta, plain.selected_support_beta);
}

#[test]
fn lambda_max_scales_with_the_penalized_columns() {
    // The gradient at zero is linear in each column, so doubling every
    // penalized column doubles λ_max.
    let ds = dataset(22);
    let mut doubled = ds.clone();
    doubled.z_pen.mapv_inplace(|v| 2.0 * v);
    doubled.x_pen.mapv_inplace(|v| 2.0 * v);
    let opts = EmOptions { tol: 1e-9, max_iter: 2000, accelerate: true, ..Default::default() };
    let lmax = |d: &SurvivalDataset| {
        let init = initialize(d, true).unwrap();
        let null = null_fit(d, &init, &opts).unwrap();
        lambda_max(&null.params, d, &null.estep, 1.0).unwrap()
    };
    assert_relative_eq!(lmax(&doubled), 2.0 * lmax(&ds), max_relative = 1e-9);
}

#[test]
fn lambda_max_grows_as_alpha_enet_shrinks() {
    let ds = dataset(23);
    let init = initialize(&ds, true).unwrap();
    let null = null_fit(&ds, &init, &EmOptions { accelerate: true, ..Default::default() }).unwrap();
    let one = lambda_max(&null.params, &ds, &null.estep, 1.0).unwrap();
    let half = lambda_max(&null.params, &ds, &null.estep, 0.5).unwrap();
    assert_relative_eq!(half, 2.0 * one, max_relative = 1e-12);
    assert!(lambda_max(&null.params, &ds, &null.estep, 0.0).is_err());
}

/// Root of `log θ + 1 - ψ(θ) = m` by plain bisection with an independent digamma.
fn theta_root(m: f64) -> f64 {
    let score = |u: f64| u + 1.0 - statrs::function::gamma::digamma(u.exp()) - m;
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[test]
fn theta_update_matches_a_bisection_oracle() {
    for (a, b) in [
        (vec![2.0, 1.5, 1.0], vec![0.5, 0.0, -0.5]),
        (vec![1.2, 1.3], vec![0.1, 0.0]),
        (vec![3.0, 1.0, 2.0, 1.0], vec![0.25, 0.25, 0.25, 0.25]),
    ] {
        let m = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
        let delta = vec![1.0; a.len()];
        let r = maximize_theta(&a, &b, &delta, THETA_BOUNDS);
        assert!(r.bound.is_none());
        assert_relative_eq!(r.theta, theta_root(m), max_relative = 1e-9);
    }
    // mean(a - b) = 1.5 exactly.
    let r = maximize_theta(&[2.0, 2.5], &[0.5, 1.0], &[1.0, 0.0], THETA_BOUNDS);
    assert_relative_eq!(r.theta, theta_root(1.5), max_relative = 1e-9);
}

#[test]
fn converged_fit_caches_its_final_e_step() {
    let ds = dataset(24);
    let init = initialize(&ds, true).unwrap();
    let fit = fit_em(&ds, &Penalty::unit(0.05, 0.5, 30, 30), &init, &EmOptions::default()).unwrap();
    let again = e_step(&fit.params, &ds).unwrap();
    assert_eq!(fit.estep, again);
    assert_eq!(fit.objective_trace.len(), fit.iterations);
}
