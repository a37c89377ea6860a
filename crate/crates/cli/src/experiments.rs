//! The built-in experiments, each a set of variants of a shipped config.
//!
//! Smoke scale, used by `--smoke` and by the test suite:
//!
//! | experiment         | observations | particles  | iterations | repeats |
//! |--------------------|--------------|------------|------------|---------|
//! | lq-unlikely        | as full      | 200 (M 50) | 5          | 2       |
//! | lq-long, J <= 300  | J / 10       | 200        | 5          | 1       |
//! | lq-long, J > 300   | J / 10       | 500        | 3          | 1       |
//! | neural5            | J / 10       | 200 (M 50) | 3          | 2       |

use std::path::Path;

use clap::ValueEnum;

use crate::config::ExperimentConfig;
use crate::runner::{run_config, write_summary, SummaryRow};
use crate::CliError;

pub const SHIPPED: [(&str, &str); 5] = [
    ("lq-unlikely", include_str!("../configs/lq-unlikely.toml")),
    ("lq-long", include_str!("../configs/lq-long.toml")),
    ("lq-long-dense", include_str!("../configs/lq-long-dense.toml")),
    ("neural5-fixed", include_str!("../configs/neural5-fixed.toml")),
    ("neural5-gaussian", include_str!("../configs/neural5-gaussian.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    LqUnlikely,
    LqLong,
    Neural5,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<String>,
    pub smoke: bool,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub particles: Option<usize>,
    pub eta: Option<f64>,
    pub observations: Option<usize>,
}

pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

fn shipped(name: &str) -> ExperimentConfig {
    let text = SHIPPED.iter().find(|(n, _)| *n == name).expect("shipped config exists").1;
    ExperimentConfig::from_toml(text).expect("shipped configs parse")
}

fn scale(cfg: &mut ExperimentConfig, particles: usize, backward: usize, iters: usize, repeats: usize) {
    cfg.methods.set_particles(particles);
    if let Some(b) = &mut cfg.methods.ffbsi {
        b.backward = backward;
    }
    if let Some(a) = &mut cfg.methods.apis {
        a.max_iters = iters;
    }
    cfg.run.repeats = repeats;
}

/// The configs an experiment runs, after smoke scaling and overrides.
pub fn variants(name: ExperimentName, ov: &Overrides) -> Result<Vec<Variant>, CliError> {
    let mut out = Vec::new();
    match name {
        ExperimentName::LqUnlikely => {
            if ov.observations.is_some() {
                return Err(CliError::Config("lq-unlikely has a fixed pair of observations; --J does not apply".into()));
            }
            let mut cfg = shipped("lq-unlikely");
            if ov.smoke {
                scale(&mut cfg, 200, 50, 5, 2);
            }
            out.push(Variant { name: String::new(), config: cfg });
        }
        ExperimentName::LqLong => {
            let js = ov.observations.map_or_else(|| vec![100, 200, 300], |j| vec![j]);
            for j in js {
                if j == 0 || j > 1000 {
                    return Err(CliError::Config(format!("--J must lie in 1..=1000, got {j}")));
                }
                let dense = j > 300;
                let mut cfg = shipped(if dense { "lq-long-dense" } else { "lq-long" });
                let keep = if ov.smoke { (j / 10).max(1) } else { j };
                if let Some(s) = &mut cfg.observations.simulate {
                    s.keep = Some(keep);
                }
                if ov.smoke {
                    scale(&mut cfg, if dense { 500 } else { 200 }, 0, if dense { 3 } else { 5 }, 1);
                }
                out.push(Variant { name: format!("J-{j}"), config: cfg });
            }
        }
        ExperimentName::Neural5 => {
            let fixed_js = ov.observations.map_or_else(|| vec![60, 80, 100], |j| vec![j]);
            for j in fixed_js {
                let mut cfg = shipped("neural5-fixed");
                if let Some(s) = &mut cfg.observations.simulate {
                    let keep = if ov.smoke { (j / 10).max(1) } else { j };
                    s.count = s.count.max(keep);
                    s.keep = Some(keep);
                }
                out.push(Variant { name: format!("fixed-J-{j}"), config: cfg });
            }
            let j = ov.observations.unwrap_or(50);
            let mut cfg = shipped("neural5-gaussian");
            if let Some(s) = &mut cfg.observations.simulate {
                s.count = if ov.smoke { (j / 10).max(1) } else { j };
            }
            out.push(Variant { name: format!("gaussian-J-{j}"), config: cfg });
            if ov.smoke {
                for v in &mut out {
                    scale(&mut v.config, 200, 50, 3, 2);
                }
            }
        }
    }

    for v in &mut out {
        let cfg = &mut v.config;
        if let Some(method) = &ov.method {
            cfg.methods.retain(method)?;
        }
        if let Some(n) = ov.particles {
            cfg.methods.set_particles(n);
        }
        if let Some(eta) = ov.eta {
            match &mut cfg.methods.apis {
                Some(a) => a.eta = eta,
                None => return Err(CliError::Config("--eta applies to the adaptive smoother only".into())),
            }
        }
        if let Some(seed) = ov.seed {
            cfg.run.seed = seed;
        }
        if let Some(r) = ov.repeats {
            cfg.run.repeats = r;
        }
        cfg.validate()?;
    }
    Ok(out)
}

/// Runs every variant into its own subdirectory of `out` and writes a
/// combined `summary.csv`.
pub fn run_experiment(name: ExperimentName, ov: &Overrides, out: &Path, log: bool) -> Result<(), CliError> {
    let out = absolute(out)?;
    let mut all: Vec<SummaryRow> = Vec::new();
    for v in variants(name, ov)? {
        let dir = if v.name.is_empty() { out.clone() } else { out.join(&v.name) };
        let mut cfg = v.config;
        cfg.run.out_dir = dir.clone();
        if log && !v.name.is_empty() {
            eprintln!("== {}", v.name);
        }
        let rows = run_config(&cfg, &dir, log)?;
        if !v.name.is_empty() {
            write_summary(&dir.join("summary.csv"), &rows)?;
        }
        all.extend(rows.into_iter().map(|r| SummaryRow { variant: v.name.clone(), ..r }));
    }
    write_summary(&out.join("summary.csv"), &all)
}

fn absolute(path: &Path) -> Result<std::path::PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
