use super::TimeGrid;
use crate::error::{Error, Result};

/// Independent Gaussian noise on a subset of state coordinates:
/// `y_i ~ N(x_{idx_i}, σ²_i)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianObservationModel {
    observed: Vec<usize>,
    variance: Vec<f64>,
}

impl GaussianObservationModel {
    /// `observed` holds zero-based state indices.
    pub fn new(observed: Vec<usize>, variance: Vec<f64>) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::invalid("at least one coordinate must be observed"));
        }
        if observed.len() != variance.len() {
            return Err(Error::invalid("one observation variance per observed coordinate"));
        }
        let mut sorted = observed.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != observed.len() {
            return Err(Error::invalid("observed coordinates must be distinct"));
        }
        if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("observation variances must be positive"));
        }
        Ok(GaussianObservationModel { observed, variance })
    }

    /// Observes every coordinate of a scalar state.
    pub fn scalar(variance: f64) -> Result<Self> {
        Self::new(vec![0], vec![variance])
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn obs_dim(&self) -> usize {
        self.observed.len()
    }

    pub fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64 {
        self.observed
            .iter()
            .zip(&self.variance)
            .zip(y)
            .map(|((&i, v), yi)| {
                let d = yi - x[i];
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v)
            })
            .sum()
    }
}

/// `log g(y | x)`: the sum of Gaussian log densities over observed coordinates.
pub fn log_obs_likelihood(model: &GaussianObservationModel, y: &[f64], x: &[f64]) -> f64 {
    model.log_likelihood(y, x)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Observation {
    pub index: usize,
    pub value: Vec<f64>,
}

/// Observations aligned to grid points; the last one is at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    entries: Vec<Observation>,
    lookup: Vec<Option<usize>>,
}

impl ObservationSeries {
    pub fn new(grid: &TimeGrid, entries: Vec<Observation>) -> Result<Self> {
        let last = entries
            .last()
            .ok_or_else(|| Error::invalid("observation series is empty"))?;
        if last.index != grid.num_steps() {
            return Err(Error::invalid(format!(
                "last observation must be at the horizon (index {}), got index {}",
                grid.num_steps(),
                last.index
            )));
        }
        let dim = entries[0].value.len();
        let mut lookup = vec![None; grid.num_points()];
        for (j, obs) in entries.iter().enumerate() {
            if j > 0 && obs.index <= entries[j - 1].index {
                return Err(Error::invalid("observation indices must be strictly increasing"));
            }
            if obs.value.len() != dim || dim == 0 {
                return Err(Error::invalid("all observations must have the same non-zero dimension"));
            }
            if obs.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite observation at index {}", obs.index)));
            }
            lookup[obs.index] = Some(j);
        }
        Ok(ObservationSeries { entries, lookup })
    }

    /// Builds a series from times, rejecting any time that is not a grid point.
    pub fn from_times(grid: &TimeGrid, times: &[f64], values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("need one observation value per time"));
        }
        let entries = times
            .iter()
            .zip(values)
            .map(|(&t, value)| {
                grid.index_of(t)
                    .map(|index| Observation { index, value })
                    .ok_or_else(|| Error::invalid(format!("observation time {t} is not on the grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        ObservationSeries::new(grid, entries)
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.entries[0].value.len()
    }

    /// Observation at grid index `k`, if any.
    pub fn at(&self, k: usize) -> Option<&[f64]> {
        self.lookup
            .get(k)
            .copied()
            .flatten()
            .map(|j| self.entries[j].value.as_slice())
    }

    pub fn num_steps(&self) -> usize {
        self.lookup.len() - 1
    }

    /// The first `count` observations, with the grid cut at the last of them.
    pub fn truncated(&self, grid: &TimeGrid, count: usize) -> Result<(TimeGrid, ObservationSeries)> {
        if count == 0 || count > self.entries.len() {
            return Err(Error::invalid(format!(
                "cannot keep {count} of {} observations",
                self.entries.len()
            )));
        }
        let entries = self.entries[..count].to_vec();
        let new_grid = grid.truncated(entries[count - 1].index)?;
        let series = ObservationSeries::new(&new_grid, entries)?;
        Ok((new_grid, series))
    }

    pub(crate) fn check_against(&self, grid: &TimeGrid, model: &GaussianObservationModel) -> Result<()> {
        if self.num_steps() != grid.num_steps() {
            return Err(Error::invalid("observation series and time grid disagree on the horizon"));
        }
        if self.obs_dim() != model.obs_dim() {
            return Err(Error::invalid(format!(
                "observations have dimension {}, observation model expects {}",
                self.obs_dim(),
                model.obs_dim()
            )));
        }
        Ok(())
    }
}
