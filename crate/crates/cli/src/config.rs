//! The run configuration and its TOML schema.

use std::path::{Path, PathBuf};

use pismooth::apis::{ApisConfig, StopRule};
use pismooth::controller::{DEFAULT_INVERSION_CAP, DEFAULT_RIDGE, DEFAULT_VAR_FLOOR};
use pismooth::model::{InitialStateDistribution, DEFAULT_CONDITION_CAP};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub prior: InitialStateDistribution,
    pub grid: GridBlock,
    pub observations: ObservationBlock,
    pub methods: MethodsBlock,
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    Brownian {
        sigma2: f64,
        #[serde(default)]
        drift: f64,
    },
    Neural {
        sigma2: f64,
        dim: usize,
        /// JSON parameter file; drawn from the data seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<PathBuf>,
    },
}

impl ModelBlock {
    pub fn name(&self) -> &'static str {
        match self {
            ModelBlock::Brownian { .. } => "brownian",
            ModelBlock::Neural { .. } => "neural",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelBlock::Brownian { .. } => 1,
            ModelBlock::Neural { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBlock {
    /// Observed state coordinates, counted from 0.
    pub observed: Vec<usize>,
    pub variance: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    /// CSV with a `t` column followed by one column per observed coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// Integration steps between observations.
    pub every: usize,
    /// Length of the simulated series.
    pub count: usize,
    /// Observations conditioned on, counted from the start; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<usize>,
    /// Data seed; the run seed by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apis: Option<ApisBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<FilterBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffbsi: Option<FfbsiBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KalmanBlock>,
}

impl MethodsBlock {
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.kalman.is_some() {
            out.push("kalman");
        }
        if self.apis.is_some() {
            out.push("apis");
        }
        if self.fs.is_some() {
            out.push("fs");
        }
        if self.ffbsi.is_some() {
            out.push("ffbsi");
        }
        out
    }

    /// Drops every method except `name`.
    pub fn retain(&mut self, name: &str) -> Result<(), CliError> {
        let keep = MethodsBlock {
            apis: if name == "apis" { self.apis.take() } else { None },
            fs: if name == "fs" { self.fs.take() } else { None },
            ffbsi: if name == "ffbsi" { self.ffbsi.take() } else { None },
            kalman: if name == "kalman" { Some(self.kalman.take().unwrap_or_default()) } else { None },
        };
        if keep.names().is_empty() {
            return Err(CliError::Config(format!("method {name} is not configured")));
        }
        *self = keep;
        Ok(())
    }

    pub fn set_particles(&mut self, n: usize) {
        if let Some(a) = &mut self.apis {
            a.particles = n;
        }
        if let Some(f) = &mut self.fs {
            f.particles = n;
        }
        if let Some(b) = &mut self.ffbsi {
            b.particles = n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApisBlock {
    pub particles: usize,
    pub eta: f64,
    pub max_iters: usize,
    pub ess_threshold: f64,
    pub anneal_factor: f64,
    pub anneal_threshold: f64,
    pub ridge: f64,
    pub var_floor: f64,
    pub anneal_cap: u32,
    pub inversion_cap: f64,
    pub window: usize,
    pub stop_rule: StopRule,
}

impl Default for ApisBlock {
    fn default() -> Self {
        let d = ApisConfig::default();
        ApisBlock {
            particles: d.particles,
            eta: d.eta,
            max_iters: d.max_iters,
            ess_threshold: d.ess_threshold,
            anneal_factor: d.anneal_factor,
            anneal_threshold: d.anneal_threshold,
            ridge: DEFAULT_RIDGE,
            var_floor: DEFAULT_VAR_FLOOR,
            anneal_cap: d.anneal_cap,
            inversion_cap: DEFAULT_INVERSION_CAP,
            window: d.window,
            stop_rule: d.stop_rule,
        }
    }
}

impl ApisBlock {
    pub fn to_config(&self, seed: u64) -> ApisConfig {
        ApisConfig {
            particles: self.particles,
            eta: self.eta,
            max_iters: self.max_iters,
            ess_threshold: self.ess_threshold,
            anneal_factor: self.anneal_factor,
            anneal_threshold: self.anneal_threshold,
            seed,
            ridge: self.ridge,
            var_floor: self.var_floor,
            anneal_cap: self.anneal_cap,
            inversion_cap: self.inversion_cap,
            window: self.window,
            stop_rule: self.stop_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBlock {
    pub particles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfbsiBlock {
    pub particles: usize,
    pub backward: usize,
    #[serde(default = "default_condition_cap")]
    pub condition_cap: f64,
}

fn default_condition_cap() -> f64 {
    DEFAULT_CONDITION_CAP
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanBlock {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    /// Times at which weighted particles are dumped to `samples.csv`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock { seed: 1, repeats: 1, out_dir: PathBuf::from("out"), snapshots: Vec::new() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ModelBlock::Neural { params: Some(p), .. } = &mut self.model {
            fix(p);
        }
        if let Some(p) = &mut self.observations.file {
            fix(p);
        }
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let sigma2 = match &self.model {
            ModelBlock::Brownian { sigma2, drift } => {
                if !drift.is_finite() {
                    return bad("model.drift must be finite".into());
                }
                *sigma2
            }
            ModelBlock::Neural { sigma2, dim, .. } => {
                if *dim == 0 {
                    return bad("model.dim must be at least 1".into());
                }
                *sigma2
            }
        };
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return bad(format!("model.sigma2 must be positive, got {sigma2}"));
        }
        let n = self.model.state_dim();
        if self.prior.dim() != n {
            return bad(format!("prior has dimension {}, the model has {n} states", self.prior.dim()));
        }
        if let InitialStateDistribution::Gaussian { mean, var } = &self.prior {
            InitialStateDistribution::gaussian(mean.clone(), var.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if !(self.grid.dt > 0.0 && self.grid.dt.is_finite()) {
            return bad(format!("grid.dt must be positive, got {}", self.grid.dt));
        }

        let o = &self.observations;
        if o.observed.is_empty() || o.observed.len() != o.variance.len() {
            return bad("observations.observed and observations.variance must be non-empty and of equal length".into());
        }
        if let Some(&i) = o.observed.iter().find(|&&i| i >= n) {
            return bad(format!("observed coordinate {i} is out of range for {n} states"));
        }
        let sources = [o.times.is_some() || o.values.is_some(), o.file.is_some(), o.simulate.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return bad("observations need exactly one of times/values, file or simulate".into());
        }
        if o.times.is_some() != o.values.is_some() {
            return bad("observations.times and observations.values go together".into());
        }
        if let Some(s) = &o.simulate {
            if s.every == 0 || s.count == 0 {
                return bad("simulate.every and simulate.count must be positive".into());
            }
            if let Some(k) = s.keep {
                if k == 0 || k > s.count {
                    return bad(format!("simulate.keep must lie in 1..={}, got {k}", s.count));
                }
            }
        }

        let m = &self.methods;
        if m.names().is_empty() {
            return bad("no method configured; add at least one of [methods.apis], [methods.fs], [methods.ffbsi], [methods.kalman]".into());
        }
        if let Some(a) = &m.apis {
            a.to_config(0).validate().map_err(|e| CliError::Config(format!("methods.apis: {e}")))?;
        }
        if m.fs.as_ref().is_some_and(|f| f.particles == 0) {
            return bad("methods.fs.particles must be positive".into());
        }
        if let Some(b) = &m.ffbsi {
            if b.particles == 0 || b.backward == 0 {
                return bad("methods.ffbsi.particles and backward must be positive".into());
            }
        }
        if m.kalman.is_some() && (!matches!(self.model, ModelBlock::Brownian { .. }) || o.observed.len() != 1) {
            return bad("the Kalman smoother needs the brownian model with one observed coordinate".into());
        }
        if self.run.repeats == 0 {
            return bad("run.repeats must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        kind = "brownian"
        sigma2 = 1.0

        [prior]
        kind = "gaussian"
        mean = [0.0]
        var = [4.0]

        [grid]
        dt = 0.01

        [observations]
        observed = [0]
        variance = [1.0]
        times = [0.0, 1.0]
        values = [[0.0], [5.0]]

        [methods.apis]
        particles = 100
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        let apis = cfg.methods.apis.as_ref().unwrap();
        assert_eq!(apis.particles, 100);
        assert_eq!(apis.eta, ApisConfig::default().eta);
        assert_eq!(cfg.run.repeats, 1);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line_number() {
        let text = MINIMAL.replace("particles = 100", "particles = 100\nlearning_rate = 0.1");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("line"), "{err}");

        let text = MINIMAL.replace("sigma2 = 1.0", "sigma2 = 1.0\nsigma = 2.0");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn semantic_errors() {
        let two_sources = MINIMAL.replace("values = [[0.0], [5.0]]", "values = [[0.0], [5.0]]\nfile = \"obs.csv\"");
        let cfg = ExperimentConfig::from_toml(&two_sources).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("exactly one"));

        let bad_eta = MINIMAL.replace("particles = 100", "particles = 100\neta = 1.5");
        let cfg = ExperimentConfig::from_toml(&bad_eta).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("eta"));

        let bad_coord = MINIMAL.replace("observed = [0]", "observed = [1]");
        let cfg = ExperimentConfig::from_toml(&bad_coord).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shipped_configs_validate() {
        for (name, text) in crate::experiments::SHIPPED {
            let cfg = ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn json_snapshot_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let json = serde_json::to_value(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }
}
