//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Set `PISMOOTH_ACCEPTANCE_SKIP_SLOW=1` to skip the two criteria that run
//! the 1000-observation problem (about a quarter of an hour on one core).

use std::process::ExitCode;
use std::time::Instant;

use pismooth::apis::{ess, rollout};
use pismooth::baselines::FilterOutput;
use pismooth::experiments::{lq_unlikely, neural5, LqLong, NeuralPrior};
use pismooth::metrics::{abs_error_vs_truth, cross_run_variance, mse_vs_truth, trapezoid_average};
use pismooth::model::{DiffusionModel, Observation};
use pismooth::prelude::*;
use pismooth::rng::seeded_rng;

mod tol {
    pub const ORACLE: f64 = 1e-10;
    pub const CLIMB_FINAL_MEDIAN: f64 = 0.90;
    pub const CLIMB_START_MAX: f64 = 0.05;
    pub const MSE_RATIO: f64 = 10.0;
    pub const ROBUST_APIS_SPREAD: f64 = 5.0;
    pub const ROBUST_FS_GROWTH: f64 = 10.0;
    pub const LONG_GAIN: f64 = 10.0;
    pub const ANNEAL_ESS: f64 = 0.3;
    pub const NO_ANNEAL_ESS: f64 = 0.01;
    pub const LONG_MAE: f64 = 5e-3;
    pub const OPTIMAL_ESS: f64 = 0.99;
    pub const BASELINE_SE: f64 = 4.0;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn kalman(pb: &SmoothingProblem<BrownianMotion>) -> pismooth::baselines::KalmanOutput {
    kalman_rts(&LinearGaussianSpec::from_problem(pb).unwrap(), &pb.grid, &pb.observations).unwrap()
}

/// Joint Gaussian of `(X_0, X_{0.5}, X_1, y_0, y_1)` conditioned on the
/// observations, solved by Gauss–Jordan elimination on the 2×2 block.
fn conditioned_moments(y0: f64, y1: f64) -> [(f64, f64); 3] {
    let (v0, r) = (4.0, 1.0);
    let times = [0.0, 0.5, 1.0];
    let cov_x = |a: f64, b: f64| v0 + a.min(b);
    let s = [[cov_x(0.0, 0.0) + r, cov_x(0.0, 1.0)], [cov_x(1.0, 0.0), cov_x(1.0, 1.0) + r]];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
    let y = [y0, y1];
    times.map(|t| {
        let c = [cov_x(t, 0.0), cov_x(t, 1.0)];
        let gain = [c[0] * inv[0][0] + c[1] * inv[1][0], c[0] * inv[0][1] + c[1] * inv[1][1]];
        let mean = gain[0] * y[0] + gain[1] * y[1];
        let var = cov_x(t, t) - (gain[0] * c[0] + gain[1] * c[1]);
        (mean, var)
    })
}

fn oracle_exactness() -> Outcome {
    let pb = lq_unlikely(5.0).unwrap();
    let ks = kalman(&pb);
    let oracle = conditioned_moments(0.0, 5.0);
    let mut worst: f64 = 0.0;
    for (k, (m, v)) in [0, 50, 100].into_iter().zip(oracle) {
        worst = worst.max((ks.smooth_mean[k] - m).abs()).max((ks.smooth_var[k] - v).abs());
    }
    outcome(worst <= tol::ORACLE, format!("max deviation {worst:.2e} at t in {{0, 0.5, 1}}"))
}

fn climb_config(seed: u64) -> ApisConfig {
    ApisConfig { particles: 2000, eta: 0.2, max_iters: 15, anneal_threshold: 0.0, seed, ..ApisConfig::default() }
}

fn ess_climb() -> Outcome {
    let pb = lq_unlikely(5.0).unwrap();
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in 1..=10 {
        let out = run_apis(&pb, &climb_config(seed)).unwrap();
        first.push(out.trace.records[0].raw_ess);
        last.push(out.trace.final_raw_ess().unwrap());
    }
    let start_max = first.iter().copied().fold(0.0, f64::max);
    let end_median = median(last.clone());
    outcome(
        end_median >= tol::CLIMB_FINAL_MEDIAN && start_max <= tol::CLIMB_START_MAX,
        format!("iteration-0 ESS max {start_max:.4}, final ESS median {end_median:.4} (min {:.4})", last.iter().copied().fold(1.0, f64::min)),
    )
}

struct BaselineRun {
    fs: Vec<f64>,
    ffbsi: Option<Vec<f64>>,
}

fn run_baselines<M: DiffusionModel>(pb: &SmoothingProblem<M>, n: usize, m: Option<usize>, seed: u64) -> BaselineRun {
    let mut rng = seeded_rng(seed);
    let filter: FilterOutput = bootstrap_filter(pb, n, &mut rng).unwrap();
    let fs = filter_smoother(&filter).marginals().means().to_vec();
    let ffbsi = m.map(|m| {
        ffbsi(&filter, pb, m, &mut rng, pismooth::model::DEFAULT_CONDITION_CAP).unwrap().marginals().means().to_vec()
    });
    BaselineRun { fs, ffbsi }
}

fn as_slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

fn accuracy_ordering() -> Outcome {
    let pb = lq_unlikely(5.0).unwrap();
    let truth = kalman(&pb).smooth_mean;
    let (mut apis, mut fs, mut bs) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 1..=50 {
        apis.push(run_apis(&pb, &climb_config(seed)).unwrap().marginals().means().to_vec());
        let b = run_baselines(&pb, 2000, Some(2000), 1000 + seed);
        fs.push(b.fs);
        bs.push(b.ffbsi.unwrap());
    }
    let mse = |runs: &[Vec<f64>]| mse_vs_truth(&as_slices(runs), &truth, 1).unwrap().overall();
    let (a, f, b) = (mse(&apis), mse(&fs), mse(&bs));
    outcome(
        f >= tol::MSE_RATIO * a && b >= tol::MSE_RATIO * a,
        format!("MSE APIS {a:.2e}, FS {f:.2e} ({:.0}x), FFBSi {b:.2e} ({:.0}x)", f / a, b / a),
    )
}

fn robustness() -> Outcome {
    let mut apis_err = Vec::new();
    let mut fs_err = Vec::new();
    for y in [0.0, 2.5, 5.0] {
        let pb = lq_unlikely(y).unwrap();
        let truth = kalman(&pb).smooth_mean;
        let (mut a, mut f) = (Vec::new(), Vec::new());
        for seed in 1..=20 {
            a.push(run_apis(&pb, &climb_config(seed)).unwrap().marginals().means().to_vec());
            f.push(run_baselines(&pb, 2000, None, 1000 + seed).fs);
        }
        apis_err.push(mse_vs_truth(&as_slices(&a), &truth, 1).unwrap().overall());
        fs_err.push(mse_vs_truth(&as_slices(&f), &truth, 1).unwrap().overall());
    }
    let hi = apis_err.iter().copied().fold(0.0, f64::max);
    let lo = apis_err.iter().copied().fold(f64::INFINITY, f64::min);
    let growth = fs_err[2] / fs_err[0];
    outcome(
        hi / lo < tol::ROBUST_APIS_SPREAD && growth >= tol::ROBUST_FS_GROWTH,
        format!(
            "APIS MSE {:.1e}/{:.1e}/{:.1e} (spread {:.1}x), FS {:.1e}/{:.1e}/{:.1e} (growth {growth:.1}x)",
            apis_err[0], apis_err[1], apis_err[2], hi / lo, fs_err[0], fs_err[1], fs_err[2]
        ),
    )
}

fn long_series() -> Outcome {
    let cfg = |seed| ApisConfig { particles: 300, eta: 0.05, max_iters: 100, seed, ..ApisConfig::default() };
    let (mut start, mut end100, mut end300) = (Vec::new(), Vec::new(), Vec::new());
    let mut collapsed = 0;
    for seed in 1..=10 {
        for (j, end) in [(100, &mut end100), (300, &mut end300)] {
            let sim = LqLong::STANDARD.problem(j, seed).unwrap();
            let out = run_apis(&sim.problem, &cfg(seed)).unwrap();
            if j == 300 {
                start.push(out.trace.records[0].raw_ess);
                if out.proposal.as_ref().is_some_and(|q| q.var[0] < 1e-9) {
                    collapsed += 1;
                }
            }
            let records = &out.trace.records;
            let tail = &records[records.len().saturating_sub(20)..];
            end.push(tail.iter().map(|r| r.raw_ess).sum::<f64>() / tail.len() as f64);
        }
    }
    let (s, e1, e3) = (median(start), median(end100), median(end300));
    outcome(
        e1 > e3 && e1 >= tol::LONG_GAIN * s && e3 >= tol::LONG_GAIN * s,
        format!(
            "median over 10 series: iteration-0 ESS {s:.4}, final ESS J=100 {e1:.3}, J=300 {e3:.3} ({:.1}x); \
             initial proposal collapsed to a point in {collapsed} of 10 J=300 runs",
            e3 / s
        ),
    )
}

struct DenseRuns {
    annealed_ess: f64,
    plain_ess: f64,
    mae: f64,
    iterations: usize,
}

fn dense_runs() -> DenseRuns {
    let sim = LqLong::DENSE.problem(1000, 1).unwrap();
    let pb = &sim.problem;
    let cfg = ApisConfig {
        particles: 10_000,
        eta: 0.05,
        max_iters: 150,
        anneal_threshold: 0.01,
        anneal_factor: 1.15,
        seed: 1,
        ..ApisConfig::default()
    };
    let annealed = run_apis(pb, &cfg).unwrap();
    let plain = run_apis(pb, &ApisConfig { anneal_threshold: 0.0, ..cfg.clone() }).unwrap();
    let tail_mean = |out: &ApisOutput| {
        let r = &out.trace.records;
        let tail = &r[r.len().saturating_sub(10)..];
        tail.iter().map(|x| x.raw_ess).sum::<f64>() / tail.len() as f64
    };
    let truth = kalman(pb).smooth_mean;
    let mae = abs_error_vs_truth(&[annealed.marginals().means()], &truth, 1).unwrap().overall();
    DenseRuns {
        annealed_ess: tail_mean(&annealed),
        plain_ess: plain.trace.final_raw_ess().unwrap().max(tail_mean(&plain)),
        mae,
        iterations: cfg.max_iters,
    }
}

fn annealing_bootstrap(d: &DenseRuns) -> Outcome {
    outcome(
        d.annealed_ess >= tol::ANNEAL_ESS && d.plain_ess < tol::NO_ANNEAL_ESS,
        format!(
            "after {} iterations: with annealing ESS {:.3}, without {:.2e}",
            d.iterations, d.annealed_ess, d.plain_ess
        ),
    )
}

fn long_absolute_error(d: &DenseRuns) -> Outcome {
    outcome(d.mae <= tol::LONG_MAE, format!("time-averaged |mean error| {:.2e}", d.mae))
}

fn terminal_problem(dt: f64) -> SmoothingProblem<BrownianMotion> {
    let steps = (1.0 / dt).round() as usize;
    let grid = TimeGrid::new(dt, steps).unwrap();
    let obs = ObservationSeries::new(&grid, vec![Observation { index: steps, value: vec![5.0] }]).unwrap();
    SmoothingProblem::new(
        BrownianMotion::new(1.0),
        grid,
        GaussianObservationModel::scalar(1.0).unwrap(),
        obs,
        InitialStateDistribution::delta(vec![0.0]),
    )
    .unwrap()
}

fn zero_variance() -> Outcome {
    let ctrl = FnControl(|x: &[f64], _k: usize, t: f64, out: &mut [f64]| out[0] = (5.0 - x[0]) / ((1.0 - t) + 1.0));
    let fine = rollout(&terminal_problem(1e-3), &ctrl, None, 10_000, 1, 0).unwrap();
    let coarse = rollout(&terminal_problem(1e-2), &ctrl, None, 10_000, 1, 0).unwrap();
    let (ef, ec) = (ess(fine.weights()), ess(coarse.weights()));
    outcome(ef >= tol::OPTIMAL_ESS && ef > ec, format!("ESS {ef:.5} at dt=1e-3, {ec:.5} at dt=1e-2"))
}

fn baseline_correctness() -> Outcome {
    let grid = TimeGrid::new(0.05, 20).unwrap();
    let entries = [(5, 0.4), (10, 1.3), (15, 0.2), (20, -0.5)]
        .map(|(k, y)| Observation { index: k, value: vec![y] })
        .to_vec();
    let pb = SmoothingProblem::new(
        BrownianMotion::new(1.0),
        grid,
        GaussianObservationModel::scalar(0.5).unwrap(),
        ObservationSeries::new(&grid, entries).unwrap(),
        InitialStateDistribution::gaussian(vec![0.0], vec![1.0]).unwrap(),
    )
    .unwrap();
    let truth = kalman(&pb).smooth_mean;
    let reps = 20;
    let (mut fs, mut bs) = (Vec::new(), Vec::new());
    for seed in 0..reps {
        let b = run_baselines(&pb, 10_000, Some(1000), 500 + seed);
        fs.push(b.fs);
        bs.push(b.ffbsi.unwrap());
    }
    let worst = |runs: &[Vec<f64>]| {
        (0..truth.len())
            .map(|k| {
                let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
                let mean = vals.iter().sum::<f64>() / reps as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
                (mean - truth[k]).abs() / (var / reps as f64).sqrt()
            })
            .fold(0.0, f64::max)
    };
    let (zf, zb) = (worst(&fs), worst(&bs));
    outcome(
        zf < tol::BASELINE_SE && zb < tol::BASELINE_SE,
        format!("largest deviation from RTS in replicate standard errors: FS {zf:.2}, FFBSi {zb:.2}"),
    )
}

fn neural_variance() -> Outcome {
    let (sim, _) = neural5(50, NeuralPrior::Gaussian, 1).unwrap();
    let pb = &sim.problem;
    let hidden = 4;
    let (mut apis, mut fs, mut bs) = (Vec::new(), Vec::new(), Vec::new());
    let mut final_ess = Vec::new();
    for seed in 1..=8 {
        let cfg = ApisConfig {
            particles: 2000,
            eta: 0.05,
            max_iters: 100,
            ess_threshold: 0.2,
            anneal_threshold: 0.05,
            window: 5,
            seed,
            ..ApisConfig::default()
        };
        let out = run_apis(pb, &cfg).unwrap();
        final_ess.push(out.trace.final_raw_ess().unwrap());
        apis.push(out.marginals().coordinate(hidden).means().to_vec());
        let mut rng = seeded_rng(1000 + seed);
        let filter = bootstrap_filter(pb, 1500, &mut rng).unwrap();
        fs.push(filter_smoother(&filter).marginals().coordinate(hidden).means().to_vec());
        let b = ffbsi(&filter, pb, 750, &mut rng, pismooth::model::DEFAULT_CONDITION_CAP).unwrap();
        bs.push(b.marginals().coordinate(hidden).means().to_vec());
    }
    let var = |runs: &[Vec<f64>]| trapezoid_average(&cross_run_variance(&as_slices(runs), 1, None).unwrap().per_time);
    let (a, f, b) = (var(&apis), var(&fs), var(&bs));
    outcome(
        a < f && a < b,
        format!(
            "hidden-unit cross-run variance APIS {a:.2e}, FS {f:.2e}, FFBSi {b:.2e}; APIS final ESS median {:.3}",
            median(final_ess)
        ),
    )
}

fn invariant_battery() -> Outcome {
    use pismooth::apis::{anneal, compute_tempered_weights, compute_weights};
    use pismooth::baselines::systematic_resample;
    use rand::Rng;

    let mut rng = seeded_rng(99);
    let mut failures = Vec::new();
    for case in 0..500 {
        let n = rng.random_range(1..80);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..300.0)).collect();
        let w = compute_weights(&s);
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            failures.push(format!("normalisation, case {case}"));
        }
        let e = ess(&w);
        if !(e >= 1.0 / n as f64 - 1e-12 && e <= 1.0 + 1e-12) {
            failures.push(format!("ESS bounds, case {case}"));
        }
        let mut previous = e;
        for m in 1..30 {
            let next = ess(&compute_tempered_weights(&s, 1.15f64.powi(m)));
            if next < previous * (1.0 - 1e-12) {
                failures.push(format!("annealing monotonicity, case {case}"));
                break;
            }
            previous = next;
        }
        let gamma = rng.random_range(0.0..0.9);
        if let Ok(a) = anneal(&s, gamma, 1.15) {
            if a.ess < gamma {
                failures.push(format!("anneal threshold, case {case}"));
            }
        }
    }

    let w = [0.1, 0.4, 0.15, 0.35];
    let mut counts = [0.0; 4];
    for _ in 0..100_000 {
        for i in systematic_resample(&w, 5, &mut rng) {
            counts[i] += 1.0;
        }
    }
    let total = 500_000.0;
    let chi2: f64 = counts.iter().zip(&w).map(|(c, p)| (c - total * p).powi(2) / (total * p)).sum();
    if chi2 > 11.345 {
        failures.push(format!("resampling chi2 {chi2:.2}"));
    }

    for case in 0..200 {
        let spec = LinearGaussianSpec {
            drift: rng.random_range(-1.0..1.0),
            dyn_var: rng.random_range(0.05..3.0),
            obs_gain: 1.0,
            obs_var: rng.random_range(0.01..3.0),
            prior_mean: 0.0,
            prior_var: rng.random_range(0.0..5.0),
        };
        let grid = TimeGrid::new(0.05, 30).unwrap();
        let entries = (1..=6).map(|j| Observation { index: 5 * j, value: vec![rng.random_range(-3.0..3.0)] }).collect();
        let out = kalman_rts(&spec, &grid, &ObservationSeries::new(&grid, entries).unwrap()).unwrap();
        if out.smooth_var.iter().zip(&out.filter_var).any(|(s, f)| *s > f * (1.0 + 1e-12) + 1e-15) {
            failures.push(format!("RTS variance dominance, case {case}"));
        }
    }

    let pb = terminal_problem(0.01);
    let ctrl = FnControl(|x: &[f64], _k: usize, t: f64, out: &mut [f64]| out[0] = 1.5 - 0.3 * x[0] + t);
    let mean_se = |ps: &pismooth::apis::ParticleSystem| {
        let w = ps.weights();
        let m: f64 = w.iter().enumerate().map(|(p, a)| a * ps.state(p, 100)[0]).sum();
        let v: f64 = w.iter().enumerate().map(|(p, a)| a * a * (ps.state(p, 100)[0] - m).powi(2)).sum();
        (m, v)
    };
    let (m1, v1) = mean_se(&rollout(&pb, &ctrl, None, 50_000, 3, 0).unwrap());
    let (m0, v0) = mean_se(&rollout(&pb, &ZeroControl, None, 50_000, 4, 0).unwrap());
    if (m1 - m0).abs() > 4.0 * (v1 + v0).sqrt() {
        failures.push(format!("control invariance: {m1:.4} vs {m0:.4}"));
    }

    let pb = lq_unlikely(5.0).unwrap();
    let cfg = ApisConfig { particles: 300, eta: 0.2, max_iters: 4, anneal_threshold: 0.2, seed: 5, ..ApisConfig::default() };
    let a = run_apis(&pb, &cfg).unwrap();
    let b = run_apis(&pb, &cfg).unwrap();
    let same = a.trace.records.iter().zip(&b.trace.records).all(|(x, y)| {
        x.raw_ess.to_bits() == y.raw_ess.to_bits() && x.lambda.to_bits() == y.lambda.to_bits()
    }) && a.controller == b.controller;
    if !same {
        failures.push("determinism".to_owned());
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "normalisation, ESS bounds, annealing, resampling, RTS dominance, control invariance, determinism".to_owned()
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn main() -> ExitCode {
    let skip_slow = std::env::var_os("PISMOOTH_ACCEPTANCE_SKIP_SLOW").is_some();
    let only = std::env::var("PISMOOTH_ACCEPTANCE_ONLY").ok();
    // Name, wall-clock budget in seconds where one applies, and the check.
    type Check = (&'static str, Option<f64>, Box<dyn Fn() -> Outcome>);
    let mut checks: Vec<Check> = vec![
        ("oracle exactness", Some(1.0), Box::new(oracle_exactness)),
        ("ESS climb on the unlikely endpoint", Some(60.0), Box::new(ess_climb)),
        ("accuracy ordering against FS and FFBSi", Some(600.0), Box::new(accuracy_ordering)),
        ("robustness to unlikely observations", None, Box::new(robustness)),
        ("long-series scaling", None, Box::new(long_series)),
    ];
    let mut skipped = Vec::new();
    let slow = ["annealing bootstrap on 1000 observations", "absolute error on 1000 observations"];
    if skip_slow {
        skipped.extend(slow);
    } else {
        // Both criteria read the same pair of runs; the first one pays for them.
        let dense = std::rc::Rc::new(std::cell::OnceCell::new());
        let d1 = dense.clone();
        checks.push((slow[0], Some(1800.0), Box::new(move || annealing_bootstrap(d1.get_or_init(dense_runs)))));
        let d2 = dense.clone();
        checks.push((slow[1], None, Box::new(move || long_absolute_error(d2.get_or_init(dense_runs)))));
    }
    checks.extend::<Vec<Check>>(vec![
        ("zero-variance optimal control", None, Box::new(zero_variance)),
        ("baseline statistical correctness", None, Box::new(baseline_correctness)),
        ("network variance ordering", None, Box::new(neural_variance)),
        ("invariant battery", None, Box::new(invariant_battery)),
    ]);
    if let Some(only) = &only {
        checks.retain(|(name, _, _)| name.contains(only.as_str()));
    }

    let mut failed = 0;
    for (name, budget, check) in &checks {
        let started = Instant::now();
        let mut o = check();
        let secs = started.elapsed().as_secs_f64();
        if let Some(budget) = budget {
            if secs > *budget {
                o.pass = false;
                o.detail.push_str(&format!("; over the {budget:.0} s budget"));
            }
        }
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{status} {name}: {} [{secs:.1} s]", o.detail);
    }
    for name in skipped {
        println!("SKIP {name}");
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    // Failures are reported above; the target itself succeeds so that the
    // rest of the suite still runs.
    ExitCode::SUCCESS
}
