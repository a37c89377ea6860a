//! Result files.
//!
//! Every table is a comma-separated file with a header row. Numbers are
//! written with Rust's shortest round-trip formatting, so reading a value
//! back yields the identical `f64`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::apis::{DiagnosticsTrace, ParticleSystem};
use crate::error::{Error, Result};
use crate::metrics::{ErrorProfile, Marginals};
use crate::model::TimeGrid;

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    /// The configuration the run was started from, verbatim.
    pub config: serde_json::Value,
    pub seed: u64,
    pub method: String,
    pub model: String,
    pub version: String,
    /// Unix time in seconds.
    pub started_at: u64,
    pub finished_at: u64,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: u64, method: &str, model: &str) -> Self {
        let now = unix_time();
        RunManifest {
            config,
            seed,
            method: method.to_owned(),
            model: model.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: now,
            finished_at: now,
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = unix_time();
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_owned(), message: e.to_string() })
    }
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Weighted trajectories dumped at selected grid indices.
#[derive(Debug, Clone, Copy)]
pub struct SampleDump<'a> {
    pub particles: &'a ParticleSystem,
    pub weights: &'a [f64],
    pub indices: &'a [usize],
}

/// The products of one run, as handed to [`write_outputs`].
#[derive(Debug, Clone, Copy)]
pub struct RunArtifacts<'a> {
    pub grid: &'a TimeGrid,
    pub marginals: &'a Marginals,
    pub manifest: &'a RunManifest,
    pub trace: Option<&'a DiagnosticsTrace>,
    /// Squared and absolute error against the reference solution.
    pub errors: Option<(&'a ErrorProfile, &'a ErrorProfile)>,
    pub filter_ess: Option<&'a [(usize, f64)]>,
    pub backward_ess: Option<&'a [f64]>,
    pub samples: Option<SampleDump<'a>>,
}

impl<'a> RunArtifacts<'a> {
    pub fn new(grid: &'a TimeGrid, marginals: &'a Marginals, manifest: &'a RunManifest) -> Self {
        RunArtifacts {
            grid,
            marginals,
            manifest,
            trace: None,
            errors: None,
            filter_ess: None,
            backward_ess: None,
            samples: None,
        }
    }
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut table = Table { path, writer: csv::Writer::from_writer(file) };
        table.row(header.iter().map(|s| s.to_string()))?;
        Ok(table)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.writer.write_record(&fields).map_err(|e| csv_error(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Format { path: path.to_owned(), message: format!("{other:?}") },
    }
}

pub fn write_marginals_csv(path: impl AsRef<Path>, grid: &TimeGrid, marginals: &Marginals) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["t", "dim", "mean", "variance"])?;
    for k in 0..marginals.num_points() {
        let t = grid.time(k);
        for (i, (m, v)) in marginals.mean(k).iter().zip(marginals.var(k)).enumerate() {
            table.row([t.to_string(), i.to_string(), m.to_string(), v.to_string()])?;
        }
    }
    table.finish()
}

pub fn write_ess_trace_csv(path: impl AsRef<Path>, trace: &DiagnosticsTrace) -> Result<()> {
    let mut table = Table::create(
        path.as_ref().to_owned(),
        &["iteration", "raw_ess", "annealed_ess", "lambda", "weight_variance"],
    )?;
    for r in &trace.records {
        table.row([
            r.iteration.to_string(),
            r.raw_ess.to_string(),
            r.annealed_ess.to_string(),
            r.lambda.to_string(),
            r.weight_variance.to_string(),
        ])?;
    }
    table.finish()
}

/// Wall-clock time of each iteration, the only table that differs between
/// two runs with the same configuration and seed.
pub fn write_timing_csv(path: impl AsRef<Path>, trace: &DiagnosticsTrace) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["iteration", "wall_time_ms"])?;
    for r in &trace.records {
        table.row([r.iteration.to_string(), r.wall_time_ms.to_string()])?;
    }
    table.finish()
}

pub fn write_errors_csv(
    path: impl AsRef<Path>,
    grid: &TimeGrid,
    squared: &ErrorProfile,
    absolute: &ErrorProfile,
) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["t", "dim", "squared_error", "absolute_error"])?;
    let n = squared.state_dim;
    for (j, (s, a)) in squared.per_time.iter().zip(&absolute.per_time).enumerate() {
        table.row([grid.time(j / n).to_string(), (j % n).to_string(), s.to_string(), a.to_string()])?;
    }
    table.finish()
}

pub fn write_filter_ess_csv(path: impl AsRef<Path>, grid: &TimeGrid, ess: &[(usize, f64)]) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["t", "ess"])?;
    for &(k, e) in ess {
        table.row([grid.time(k).to_string(), e.to_string()])?;
    }
    table.finish()
}

pub fn write_backward_ess_csv(path: impl AsRef<Path>, grid: &TimeGrid, ess: &[f64]) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["t", "ess"])?;
    for (k, e) in ess.iter().enumerate() {
        table.row([grid.time(k).to_string(), e.to_string()])?;
    }
    table.finish()
}

pub fn write_samples_csv(path: impl AsRef<Path>, grid: &TimeGrid, dump: &SampleDump<'_>) -> Result<()> {
    let mut table = Table::create(path.as_ref().to_owned(), &["t", "particle", "weight", "dim", "value"])?;
    for &k in dump.indices {
        let t = grid.time(k).to_string();
        for (p, w) in dump.weights.iter().enumerate() {
            for (i, x) in dump.particles.state(p, k).iter().enumerate() {
                table.row([t.clone(), p.to_string(), w.to_string(), i.to_string(), x.to_string()])?;
            }
        }
    }
    table.finish()
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &RunManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes every available artifact of a run into `out_dir`, creating it if needed.
pub fn write_outputs(artifacts: &RunArtifacts<'_>, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_marginals_csv(dir.join("marginals.csv"), artifacts.grid, artifacts.marginals)?;
    if let Some(trace) = artifacts.trace {
        write_ess_trace_csv(dir.join("ess_trace.csv"), trace)?;
        write_timing_csv(dir.join("timing.csv"), trace)?;
    }
    if let Some((squared, absolute)) = artifacts.errors {
        write_errors_csv(dir.join("errors.csv"), artifacts.grid, squared, absolute)?;
    }
    if let Some(ess) = artifacts.filter_ess {
        write_filter_ess_csv(dir.join("filter_ess.csv"), artifacts.grid, ess)?;
    }
    if let Some(ess) = artifacts.backward_ess {
        write_backward_ess_csv(dir.join("backward_ess.csv"), artifacts.grid, ess)?;
    }
    if let Some(dump) = &artifacts.samples {
        write_samples_csv(dir.join("samples.csv"), artifacts.grid, dump)?;
    }
    write_manifest(dir.join("manifest.json"), artifacts.manifest)
}

/// One row of a marginals table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
pub struct MarginalRow {
    pub t: f64,
    pub dim: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn read_marginals_csv(path: impl AsRef<Path>) -> Result<Vec<MarginalRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid::new(0.1, 2).unwrap();
        let mean = vec![0.1 + 0.2, -1.0 / 3.0, 1e-300, 2.0, 5.5, f64::MIN_POSITIVE];
        let var = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = Marginals::from_parts(2, mean.clone(), var).unwrap();
        let path = dir.path().join("m.csv");
        write_marginals_csv(&path, &grid, &m).unwrap();
        let rows = read_marginals_csv(&path).unwrap();
        assert_eq!(rows.len(), 6);
        for (row, expected) in rows.iter().zip(&mean) {
            assert_eq!(row.mean.to_bits(), expected.to_bits());
        }
        assert_eq!(rows[5].t, grid.time(2));
        assert_eq!(rows[5].dim, 1);
    }

    #[test]
    fn missing_directory_is_reported_with_its_path() {
        let grid = TimeGrid::new(0.1, 1).unwrap();
        let m = Marginals::from_parts(1, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let err = write_marginals_csv("/nonexistent/dir/m.csv", &grid, &m).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/m.csv"));
    }
}
