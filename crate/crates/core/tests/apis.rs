use pismooth::apis::{ess, rollout, update_initial_proposal, weight_variance, ParticleSystem};
use pismooth::experiments::lq_unlikely;
use pismooth::model::{log_obs_likelihood, Observation};
use pismooth::prelude::*;

fn terminal_problem(sigma: f64, dt: f64, y: f64, prior: InitialStateDistribution) -> SmoothingProblem<BrownianMotion> {
    let steps = (1.0 / dt).round() as usize;
    let grid = TimeGrid::new(dt, steps).unwrap();
    let obs = ObservationSeries::new(&grid, vec![Observation { index: steps, value: vec![y] }]).unwrap();
    SmoothingProblem::new(BrownianMotion::new(sigma), grid, GaussianObservationModel::scalar(1.0).unwrap(), obs, prior)
        .unwrap()
}

/// Self-normalised estimate of `E[X_k]` and its standard error.
fn weighted_mean_and_se(ps: &ParticleSystem, k: usize) -> (f64, f64) {
    let w = ps.weights();
    let mean: f64 = w.iter().enumerate().map(|(p, a)| a * ps.state(p, k)[0]).sum();
    let var: f64 = w.iter().enumerate().map(|(p, a)| a * a * (ps.state(p, k)[0] - mean).powi(2)).sum();
    (mean, var.sqrt())
}

#[test]
fn zero_control_cost_is_minus_log_likelihood() {
    let pb = terminal_problem(1.0, 0.01, 0.7, InitialStateDistribution::delta(vec![0.2]));
    let ps = rollout(&pb, &ZeroControl, None, 50, 3, 0).unwrap();
    for p in 0..50 {
        let expected = -log_obs_likelihood(&pb.obs_model, &[0.7], ps.state(p, 100));
        assert!((ps.costs()[p] - expected).abs() < 1e-12);
        assert_eq!(ps.state(p, 0), &[0.2]);
    }
}

#[test]
fn constant_control_on_a_noiseless_path() {
    // With σ = 1 the cost of the controlled path is c²T/2 + c·W_T - log g,
    // and X_T = x_0 + cT + W_T.
    let c = 0.8;
    let pb = terminal_problem(1.0, 0.01, 0.0, InitialStateDistribution::delta(vec![0.0]));
    let ctrl = FnControl(move |_x: &[f64], _k: usize, _t: f64, out: &mut [f64]| out[0] = c);
    let ps = rollout(&pb, &ctrl, None, 20, 9, 0).unwrap();
    for p in 0..20 {
        let w_t: f64 = (0..100).map(|k| ps.noise(p, k)[0]).sum();
        let x_t = ps.state(p, 100)[0];
        assert!((x_t - (c + w_t)).abs() < 1e-12);
        let expected = 0.5 * c * c + c * w_t - log_obs_likelihood(&pb.obs_model, &[0.0], &[x_t]);
        assert!((ps.costs()[p] - expected).abs() < 1e-10);
    }
}

#[test]
fn proposal_cost_includes_the_density_ratio() {
    let prior = InitialStateDistribution::gaussian(vec![0.0], vec![4.0]).unwrap();
    let pb = terminal_problem(1.0, 0.1, 0.0, prior.clone());
    let q = InitialProposal::new(vec![1.0], vec![0.5]).unwrap();
    let ps = rollout(&pb, &ZeroControl, Some(&q), 10, 1, 0).unwrap();
    for p in 0..10 {
        let x0 = ps.state(p, 0);
        let expected = q.log_density(x0) - prior.log_density(x0).unwrap()
            - log_obs_likelihood(&pb.obs_model, &[0.0], ps.state(p, 10));
        assert!((ps.costs()[p] - expected).abs() < 1e-10);
    }
}

#[test]
fn proposal_update_examples() {
    // Three particles with unequal weights against direct summation.
    let states = vec![1.0, 0.0, -2.0, 0.0, 4.0, 0.0];
    let ps = ParticleSystem::from_parts(3, 1, 1, 1, states, vec![0.0; 3]).unwrap();
    let w = [0.2, 0.5, 0.3];
    let q = update_initial_proposal(&ps, &w, 1e-12);
    let mean: f64 = 0.2 * 1.0 + 0.5 * -2.0 + 0.3 * 4.0;
    let var = 0.2 * (1.0 - mean).powi(2) + 0.5 * (-2.0 - mean).powi(2) + 0.3 * (4.0 - mean).powi(2);
    assert!((q.mean[0] - mean).abs() < 1e-12);
    assert!((q.var[0] - var).abs() < 1e-12);

    let q = update_initial_proposal(&ps, &[1.0, 0.0, 0.0], 1e-6);
    assert_eq!(q.mean, vec![1.0]);
    assert_eq!(q.var, vec![1e-6]);
}

#[test]
fn proposal_update_recovers_the_prior_under_uniform_weights() {
    let prior = InitialStateDistribution::gaussian(vec![1.5], vec![4.0]).unwrap();
    let pb = terminal_problem(1.0, 0.1, 0.0, prior);
    let n = 100_000;
    let ps = rollout(&pb, &ZeroControl, None, n, 2, 0).unwrap();
    let q = update_initial_proposal(&ps, &vec![1.0 / n as f64; n], 1e-12);
    assert!((q.mean[0] - 1.5).abs() < 4.0 * (4.0 / n as f64).sqrt());
    assert!((q.var[0] - 4.0).abs() < 4.0 * 4.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn no_iterations_is_plain_importance_sampling() {
    let pb = lq_unlikely(5.0).unwrap();
    let cfg = ApisConfig { particles: 300, max_iters: 0, seed: 4, ..ApisConfig::default() };
    let out = run_apis(&pb, &cfg).unwrap();
    assert_eq!(out.trace.records.len(), 1);
    assert!(out.proposal.is_none());
    let direct = rollout(&pb, &ZeroControl, None, 300, 4, 0).unwrap();
    assert_eq!(out.particles.weights(), direct.weights());
    assert_eq!(out.particles.states(), direct.states());
}

#[test]
fn uncontrolled_estimate_is_unbiased() {
    let prior = InitialStateDistribution::gaussian(vec![0.0], vec![4.0]).unwrap();
    let pb = terminal_problem(1.0, 0.01, 1.0, prior);
    let cfg = ApisConfig { particles: 100_000, max_iters: 0, seed: 11, ..ApisConfig::default() };
    let out = run_apis(&pb, &cfg).unwrap();
    let (mean, se) = weighted_mean_and_se(&out.particles, 100);
    let ks = kalman_rts(&LinearGaussianSpec::from_problem(&pb).unwrap(), &pb.grid, &pb.observations).unwrap();
    assert!((mean - ks.smooth_mean[100]).abs() < 4.0 * se, "{mean} vs {} (se {se})", ks.smooth_mean[100]);
}

#[test]
fn fixed_control_leaves_the_target_unchanged() {
    let prior = InitialStateDistribution::gaussian(vec![0.0], vec![1.0]).unwrap();
    let pb = terminal_problem(1.0, 0.01, 1.0, prior);
    let ctrl = FnControl(|x: &[f64], _k: usize, t: f64, out: &mut [f64]| out[0] = 0.6 - 0.4 * x[0] + t);
    let n = 50_000;
    let controlled = rollout(&pb, &ctrl, None, n, 5, 0).unwrap();
    let plain = rollout(&pb, &ZeroControl, None, n, 6, 0).unwrap();
    for k in [0, 50, 100] {
        let (a, sa) = weighted_mean_and_se(&controlled, k);
        let (b, sb) = weighted_mean_and_se(&plain, k);
        let combined = (sa * sa + sb * sb).sqrt();
        assert!((a - b).abs() < 4.0 * combined, "k={k}: {a} vs {b} (se {combined})");
    }
}

fn optimal_control(sigma: f64, y: f64, horizon: f64) -> impl Fn(&[f64], usize, f64, &mut [f64]) + Sync {
    move |x, _k, t, out| out[0] = sigma * (y - x[0]) / (sigma * sigma * (horizon - t) + 1.0)
}

#[test]
fn optimal_control_variance_shrinks_with_dt() {
    let prior = InitialStateDistribution::delta(vec![0.0]);
    let coarse = terminal_problem(1.0, 1e-2, 5.0, prior.clone());
    let fine = terminal_problem(1.0, 1e-3, 5.0, prior);
    let ctrl = FnControl(optimal_control(1.0, 5.0, 1.0));
    let a = rollout(&coarse, &ctrl, None, 10_000, 1, 0).unwrap();
    let b = rollout(&fine, &ctrl, None, 10_000, 1, 0).unwrap();
    assert!(weight_variance(b.weights()) < weight_variance(a.weights()));
    assert!(ess(b.weights()) >= 0.99);
}

fn traces_match(a: &ApisOutput, b: &ApisOutput) {
    assert_eq!(a.trace.records.len(), b.trace.records.len());
    for (x, y) in a.trace.records.iter().zip(&b.trace.records) {
        assert_eq!(x.raw_ess.to_bits(), y.raw_ess.to_bits());
        assert_eq!(x.annealed_ess.to_bits(), y.annealed_ess.to_bits());
        assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
        assert_eq!(x.weight_variance.to_bits(), y.weight_variance.to_bits());
    }
    assert_eq!(a.controller, b.controller);
    assert_eq!(a.particles.states(), b.particles.states());
}

#[test]
fn same_seed_gives_identical_runs_on_any_thread_count() {
    let pb = lq_unlikely(5.0).unwrap();
    let cfg = ApisConfig {
        particles: 400,
        eta: 0.2,
        max_iters: 6,
        anneal_threshold: 0.3,
        seed: 21,
        ..ApisConfig::default()
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_apis(&pb, &cfg)).unwrap();
    let b = four.install(|| run_apis(&pb, &cfg)).unwrap();
    let c = run_apis(&pb, &cfg).unwrap();
    traces_match(&a, &b);
    traces_match(&a, &c);

    let other = run_apis(&pb, &ApisConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(other.trace.records[0].raw_ess, a.trace.records[0].raw_ess);
}

#[test]
fn restarting_from_a_learned_controller() {
    let pb = lq_unlikely(5.0).unwrap();
    let cfg = ApisConfig { particles: 1000, eta: 0.2, max_iters: 8, seed: 2, ..ApisConfig::default() };
    let first = run_apis(&pb, &cfg).unwrap();
    let init = ApisInit {
        controller: Some((first.controller.clone(), first.standardization.clone())),
        proposal: first.proposal.clone(),
    };
    let resumed = run_apis_from(&pb, &ApisConfig { max_iters: 0, ..cfg.clone() }, init).unwrap();
    assert!(resumed.trace.final_raw_ess().unwrap() > 10.0 * first.trace.records[0].raw_ess);
}
