//! Joining the marginals of several runs into one long table.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pismooth::io::{read_marginals_csv, MarginalRow, RunManifest};

use crate::CliError;

#[derive(Debug, Clone, Copy, serde::Deserialize)]
struct ErrorRow {
    t: f64,
    dim: usize,
    squared_error: f64,
    absolute_error: f64,
}

struct Run {
    label: String,
    marginals: Vec<MarginalRow>,
    errors: Option<Vec<ErrorRow>>,
}

fn load(dir: &Path) -> Result<Run, CliError> {
    let manifest = RunManifest::load(dir.join("manifest.json"))?;
    let marginals = read_marginals_csv(dir.join("marginals.csv"))?;
    let errors_path = dir.join("errors.csv");
    let errors = if errors_path.exists() {
        let err = |e: csv::Error| CliError::Config(format!("{}: {e}", errors_path.display()));
        let mut reader = csv::Reader::from_path(&errors_path).map_err(err)?;
        Some(reader.deserialize().collect::<Result<Vec<ErrorRow>, _>>().map_err(err)?)
    } else {
        None
    };
    Ok(Run { label: manifest.method, marginals, errors })
}

/// Writes `out` with one row per `(t, dim, method)`. Runs of the same
/// method are told apart by their seed.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut runs = Vec::with_capacity(dirs.len());
    let mut seeds = Vec::with_capacity(dirs.len());
    for dir in dirs {
        runs.push(load(dir)?);
        seeds.push(RunManifest::load(dir.join("manifest.json"))?.seed);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for run in &runs {
        *counts.entry(run.label.clone()).or_default() += 1;
    }
    for (run, seed) in runs.iter_mut().zip(&seeds) {
        if counts[&run.label] > 1 {
            run.label = format!("{}-seed-{seed}", run.label);
        }
    }

    let base = &runs[0];
    for (run, dir) in runs.iter().zip(dirs).skip(1) {
        let same = run.marginals.len() == base.marginals.len()
            && run
                .marginals
                .iter()
                .zip(&base.marginals)
                .all(|(a, b)| a.dim == b.dim && (a.t - b.t).abs() <= 1e-9 * (1.0 + b.t.abs()));
        if !same {
            return Err(CliError::Config(format!(
                "{} is on a different grid than {}",
                dir.display(),
                dirs[0].display()
            )));
        }
    }

    let err = |e: csv::Error| CliError::Io(format!("{}: {e}", out.display()));
    let mut w = csv::Writer::from_path(out).map_err(err)?;
    w.write_record(["t", "dim", "method", "mean", "variance", "squared_error", "absolute_error"])
        .map_err(err)?;
    for (j, row) in base.marginals.iter().enumerate() {
        for run in &runs {
            let m = &run.marginals[j];
            let (sq, abs) = match run.errors.as_ref().and_then(|e| e.get(j)) {
                Some(e) if e.dim == m.dim && e.t == m.t => (e.squared_error.to_string(), e.absolute_error.to_string()),
                _ => (String::new(), String::new()),
            };
            w.write_record([
                row.t.to_string(),
                row.dim.to_string(),
                run.label.clone(),
                m.mean.to_string(),
                m.variance.to_string(),
                sq,
                abs,
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}
