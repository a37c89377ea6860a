//! Building a problem from a config and running its methods.

use std::fs;
use std::path::Path;

use pismooth::apis::{run_apis_observed, ApisInit, DiagnosticsTrace, ParticleSystem};
use pismooth::baselines::{bootstrap_filter, ffbsi, filter_smoother, kalman_rts, KalmanOutput, LinearGaussianSpec};
use pismooth::controller::controller_to_json;
use pismooth::experiments::{observe_path, simulate_path};
use pismooth::io::{write_marginals_csv, write_outputs, RunArtifacts, RunManifest, SampleDump};
use pismooth::metrics::{abs_error_vs_truth, cross_run_variance, mse_vs_truth, Marginals};
use pismooth::model::{
    BrownianMotion, DiffusionModel, GaussianObservationModel, NeuralNetwork, NeuralParams, ObservationSeries,
    TimeGrid,
};
use pismooth::problem::SmoothingProblem;
use pismooth::rng::{seeded_rng, stream_rng};
use rand::Rng;

use crate::config::{ExperimentConfig, ModelBlock};
use crate::CliError;

/// Stream index reserved for the sequential baselines, well above any
/// iteration count the adaptive smoother reaches.
const BASELINE_STREAM: u32 = u32::MAX;

struct Data<M> {
    problem: SmoothingProblem<M>,
    truth: Option<Vec<f64>>,
}

enum Built {
    Brownian(Data<BrownianMotion>),
    Neural(Data<NeuralNetwork>),
}

/// The seed of the simulated dataset: the one pinned in the config, else the run seed.
pub fn data_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.observations.simulate.and_then(|s| s.seed).unwrap_or(cfg.run.seed)
}

fn build(cfg: &ExperimentConfig) -> Result<Built, CliError> {
    let mut rng = seeded_rng(data_seed(cfg));
    match &cfg.model {
        ModelBlock::Brownian { sigma2, drift } => {
            let model = BrownianMotion::new(sigma2.sqrt()).with_drift(*drift);
            Ok(Built::Brownian(assemble(model, cfg, &mut rng)?))
        }
        ModelBlock::Neural { sigma2, dim, params } => {
            let params = match params {
                Some(path) => NeuralParams::load(path)?,
                None => NeuralParams::sample(&mut rng, *dim),
            };
            if params.dim() != *dim {
                return Err(CliError::Config(format!(
                    "network parameters have {} units, model.dim is {dim}",
                    params.dim()
                )));
            }
            let model = NeuralNetwork::new(&params, sigma2.sqrt())?;
            Ok(Built::Neural(assemble(model, cfg, &mut rng)?))
        }
    }
}

fn assemble<M: DiffusionModel, R: Rng>(model: M, cfg: &ExperimentConfig, rng: &mut R) -> Result<Data<M>, CliError> {
    let o = &cfg.observations;
    let obs_model = GaussianObservationModel::new(o.observed.clone(), o.variance.clone())?;
    let n = model.state_dim();
    let (grid, series, truth) = if let Some(s) = o.simulate {
        let grid = TimeGrid::new(cfg.grid.dt, s.every * s.count)?;
        let path = simulate_path(&model, &grid, &cfg.prior, rng)?;
        let indices: Vec<usize> = (1..=s.count).map(|j| j * s.every).collect();
        let full = observe_path(&obs_model, &grid, &path, n, &indices, rng)?;
        let (grid, series) = full.truncated(&grid, s.keep.unwrap_or(s.count))?;
        let truth = path[..grid.num_points() * n].to_vec();
        (grid, series, Some(truth))
    } else {
        let (times, values) = match &o.file {
            Some(path) => read_observation_file(path, o.observed.len())?,
            None => (o.times.clone().unwrap_or_default(), o.values.clone().unwrap_or_default()),
        };
        let horizon = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if times.is_empty() {
            return Err(CliError::Config("the observation series is empty".into()));
        }
        let grid = TimeGrid::from_horizon(horizon, cfg.grid.dt)?;
        let series = ObservationSeries::from_times(&grid, &times, values)?;
        (grid, series, None)
    };
    let problem = SmoothingProblem::new(model, grid, obs_model, series, cfg.prior.clone())?;
    Ok(Data { problem, truth })
}

fn read_observation_file(path: &Path, width: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let shown = path.display();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 1 {
            return Err(CliError::Config(format!(
                "{shown}, line {line}: expected a time and {width} value(s), found {} fields",
                record.len()
            )));
        }
        let parsed: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{shown}, line {line}: {e}")))?;
        times.push(parsed[0]);
        values.push(parsed[1..].to_vec());
    }
    Ok((times, values))
}

/// Builds the problem, which reads and checks every data file.
pub fn check_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    build(cfg).map(|_| ())
}

/// Restores the config of a single run from its manifest.
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig, CliError> {
    let manifest = RunManifest::load(path)?;
    serde_json::from_value(manifest.config)
        .map_err(|e| CliError::Config(format!("{}: config block: {e}", path.display())))
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub method: String,
    pub seed: u64,
    pub ess: f64,
    pub iterations: Option<usize>,
    pub mean_squared_error: Option<f64>,
    pub mean_absolute_error: Option<f64>,
    pub variance_absolute_error: Option<f64>,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// What a method produced for one seed.
struct MethodResult {
    marginals: Marginals,
    ess: f64,
    trace: Option<DiagnosticsTrace>,
    filter_ess: Option<Vec<(usize, f64)>>,
    backward_ess: Option<Vec<f64>>,
    particles: Option<ParticleSystem>,
    filtered: Option<Marginals>,
    controller: Option<String>,
}

impl MethodResult {
    fn new(marginals: Marginals, ess: f64) -> Self {
        MethodResult {
            marginals,
            ess,
            trace: None,
            filter_ess: None,
            backward_ess: None,
            particles: None,
            filtered: None,
            controller: None,
        }
    }
}

/// The posterior used to score the estimates: the Kalman smoother when the
/// model is linear-Gaussian, otherwise the simulated path (means only).
struct Reference {
    mean: Vec<f64>,
    var: Option<Vec<f64>>,
}

/// Runs every configured method for seeds `seed..seed + repeats` and writes
/// the results under `dir`. Returns one summary row per run.
pub fn run_config(cfg: &ExperimentConfig, dir: &Path, log: bool) -> Result<Vec<SummaryRow>, CliError> {
    match build(cfg)? {
        Built::Brownian(data) => {
            let kalman = if cfg.observations.observed.len() == 1 {
                let spec = LinearGaussianSpec::from_problem(&data.problem)?;
                Some(kalman_rts(&spec, &data.problem.grid, &data.problem.observations)?)
            } else {
                None
            };
            run_methods(cfg, &data, kalman.as_ref(), dir, log)
        }
        Built::Neural(data) => run_methods(cfg, &data, None, dir, log),
    }
}

fn run_methods<M: DiffusionModel>(
    cfg: &ExperimentConfig,
    data: &Data<M>,
    kalman: Option<&KalmanOutput>,
    dir: &Path,
    log: bool,
) -> Result<Vec<SummaryRow>, CliError> {
    let problem = &data.problem;
    let grid = &problem.grid;
    let n = problem.state_dim();
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_data_tables(dir, problem, data.truth.as_deref())?;

    let reference = match (kalman, &data.truth) {
        (Some(k), _) => Some(Reference { mean: k.smooth_mean.clone(), var: Some(k.smooth_var.clone()) }),
        (None, Some(truth)) => Some(Reference { mean: truth.clone(), var: None }),
        (None, None) => None,
    };
    let snapshots = cfg
        .run
        .snapshots
        .iter()
        .map(|&t| grid.index_of(t).ok_or_else(|| CliError::Config(format!("snapshot time {t} is not on the grid"))))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(apis) = &cfg.methods.apis {
        let dt = grid.dt();
        if apis.particles as f64 <= 2.0 / dt {
            eprintln!(
                "warning: {} particles at dt = {dt}; the adaptive smoother is usually unstable unless N > 2/dt = {}",
                apis.particles,
                (2.0 / dt).round()
            );
        }
    }

    let mut rows = Vec::new();
    for method in cfg.methods.names() {
        let seeds: Vec<u64> = if method == "kalman" {
            vec![cfg.run.seed]
        } else {
            (0..cfg.run.repeats as u64).map(|r| cfg.run.seed + r).collect()
        };
        let mut estimates = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let mut manifest = RunManifest::new(manifest_config(cfg, method, seed)?, seed, method, cfg.model.name());
            let result = match method {
                "apis" => run_apis_method(cfg, problem, seed, log)?,
                "fs" => run_fs(cfg, problem, seed, log)?,
                "ffbsi" => run_ffbsi(cfg, problem, seed, log)?,
                "kalman" => {
                    let k = kalman.ok_or_else(|| CliError::Config("the Kalman smoother needs a linear-Gaussian model".into()))?;
                    let mut result = MethodResult::new(k.smoothed(), 1.0);
                    result.filtered = Some(k.filtered());
                    result
                }
                other => unreachable!("unknown method {other}"),
            };
            manifest.finish();

            let errors = match &reference {
                Some(r) => {
                    let means = [result.marginals.means()];
                    Some((mse_vs_truth(&means, &r.mean, n)?, abs_error_vs_truth(&means, &r.mean, n)?))
                }
                None => None,
            };
            let variance_error = match reference.as_ref().and_then(|r| r.var.as_ref()) {
                Some(var) => Some(abs_error_vs_truth(&[result.marginals.variances()], var, n)?.overall()),
                None => None,
            };

            let run_dir = dir.join(method).join(format!("seed-{seed}"));
            let mut artifacts = RunArtifacts::new(grid, &result.marginals, &manifest);
            artifacts.trace = result.trace.as_ref();
            artifacts.errors = errors.as_ref().map(|(s, a)| (s, a));
            artifacts.filter_ess = result.filter_ess.as_deref();
            artifacts.backward_ess = result.backward_ess.as_deref();
            if let (Some(ps), false) = (&result.particles, snapshots.is_empty()) {
                artifacts.samples = Some(SampleDump { particles: ps, weights: ps.weights(), indices: &snapshots });
            }
            write_outputs(&artifacts, &run_dir)?;
            if let Some(filtered) = &result.filtered {
                write_marginals_csv(run_dir.join("filtered.csv"), grid, filtered)?;
            }
            if let Some(json) = &result.controller {
                let path = run_dir.join("controller.json");
                fs::write(&path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }

            rows.push(SummaryRow {
                variant: String::new(),
                method: method.to_owned(),
                seed,
                ess: result.ess,
                iterations: result.trace.as_ref().map(|t| t.records.len() - 1),
                mean_squared_error: errors.as_ref().map(|(s, _)| s.overall()),
                mean_absolute_error: errors.as_ref().map(|(_, a)| a.overall()),
                variance_absolute_error: variance_error,
            });
            estimates.push(result.marginals);
        }
        if estimates.len() >= 2 {
            write_cross_run_variance(&dir.join(method).join("cross_run_variance.csv"), grid, &estimates)?;
        }
    }
    Ok(rows)
}

/// The config of a single run, with every seed pinned, as stored in its manifest.
fn manifest_config(cfg: &ExperimentConfig, method: &str, seed: u64) -> Result<serde_json::Value, CliError> {
    let mut single = cfg.clone();
    single.methods.retain(method)?;
    single.run.seed = seed;
    single.run.repeats = 1;
    if let Some(s) = &mut single.observations.simulate {
        s.seed = Some(data_seed(cfg));
    }
    serde_json::to_value(&single).map_err(|e| CliError::Io(e.to_string()))
}

fn run_apis_method<M: DiffusionModel>(
    cfg: &ExperimentConfig,
    problem: &SmoothingProblem<M>,
    seed: u64,
    log: bool,
) -> Result<MethodResult, CliError> {
    let block = cfg.methods.apis.as_ref().expect("apis is configured");
    let apis_cfg = block.to_config(seed);
    let out = run_apis_observed(problem, &apis_cfg, ApisInit::default(), |r| {
        if log {
            eprintln!(
                "[apis seed {seed}] iteration {:>4}: raw ESS {:.4}, annealed ESS {:.4}, lambda {:.4}, {:.0} ms",
                r.iteration, r.raw_ess, r.annealed_ess, r.lambda, r.wall_time_ms
            );
        }
    })?;
    let mut result = MethodResult::new(out.marginals(), out.trace.final_raw_ess().unwrap_or(0.0));
    result.controller = Some(controller_to_json(&out.controller, &out.standardization, problem.grid.dt()) + "\n");
    result.trace = Some(out.trace);
    result.particles = Some(out.particles);
    Ok(result)
}

fn run_fs<M: DiffusionModel>(
    cfg: &ExperimentConfig,
    problem: &SmoothingProblem<M>,
    seed: u64,
    log: bool,
) -> Result<MethodResult, CliError> {
    let block = cfg.methods.fs.as_ref().expect("fs is configured");
    let mut rng = stream_rng(seed, BASELINE_STREAM, 0);
    let filter = bootstrap_filter(problem, block.particles, &mut rng)?;
    let smoother = filter_smoother(&filter);
    if log {
        eprintln!("[fs seed {seed}] unique time-0 ancestors: {:.4}", smoother.unique_fraction);
    }
    let mut result = MethodResult::new(smoother.marginals(), smoother.unique_fraction);
    result.filtered = Some(filter.filtered_marginals());
    result.filter_ess = Some(filter.filter_ess().to_vec());
    result.particles = Some(smoother.particles);
    Ok(result)
}

fn run_ffbsi<M: DiffusionModel>(
    cfg: &ExperimentConfig,
    problem: &SmoothingProblem<M>,
    seed: u64,
    log: bool,
) -> Result<MethodResult, CliError> {
    let block = cfg.methods.ffbsi.as_ref().expect("ffbsi is configured");
    let mut rng = stream_rng(seed, BASELINE_STREAM, 1);
    let filter = bootstrap_filter(problem, block.particles, &mut rng)?;
    let out = ffbsi(&filter, problem, block.backward, &mut rng, block.condition_cap)?;
    let ess = out.backward_ess.iter().sum::<f64>() / out.backward_ess.len() as f64;
    if log {
        eprintln!("[ffbsi seed {seed}] mean backward ESS: {ess:.4}");
    }
    let mut result = MethodResult::new(out.marginals(), ess);
    result.filter_ess = Some(filter.filter_ess().to_vec());
    result.backward_ess = Some(out.backward_ess);
    result.particles = Some(out.particles);
    Ok(result)
}

fn write_data_tables<M: DiffusionModel>(
    dir: &Path,
    problem: &SmoothingProblem<M>,
    truth: Option<&[f64]>,
) -> Result<(), CliError> {
    let grid = &problem.grid;
    let path = dir.join("observations.csv");
    let mut rows = vec![["t".to_owned(), "dim".to_owned(), "value".to_owned()]];
    for obs in problem.observations.entries() {
        for (&i, v) in problem.obs_model.observed().iter().zip(&obs.value) {
            rows.push([grid.time(obs.index).to_string(), i.to_string(), v.to_string()]);
        }
    }
    write_rows(&path, &rows)?;
    if let Some(truth) = truth {
        let n = problem.state_dim();
        let mut rows = vec![["t".to_owned(), "dim".to_owned(), "value".to_owned()]];
        for (j, x) in truth.iter().enumerate() {
            rows.push([grid.time(j / n).to_string(), (j % n).to_string(), x.to_string()]);
        }
        write_rows(&dir.join("truth.csv"), &rows)?;
    }
    Ok(())
}

fn write_cross_run_variance(path: &Path, grid: &TimeGrid, runs: &[Marginals]) -> Result<(), CliError> {
    let n = runs[0].state_dim();
    let means: Vec<&[f64]> = runs.iter().map(|m| m.means()).collect();
    let vars: Vec<&[f64]> = runs.iter().map(|m| m.variances()).collect();
    let of_mean = cross_run_variance(&means, n, None)?;
    let of_var = cross_run_variance(&vars, n, None)?;
    let mut rows = vec![["t".to_owned(), "dim".to_owned(), "mean_variance".to_owned(), "variance_variance".to_owned()]];
    for (j, (a, b)) in of_mean.per_time.iter().zip(&of_var.per_time).enumerate() {
        rows.push([grid.time(j / n).to_string(), (j % n).to_string(), a.to_string(), b.to_string()]);
    }
    write_rows(path, &rows)
}

fn write_rows<const W: usize>(path: &Path, rows: &[[String; W]]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
