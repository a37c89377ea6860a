use std::borrow::Cow;

use rand::Rng;

use crate::apis::{ess, ParticleSystem};
use crate::error::{Error, Result};
use crate::metrics::Marginals;
use crate::model::{fill_noise, DiffusionModel, Stepper};
use crate::problem::SmoothingProblem;

/// Indices of `count` offspring drawn by systematic resampling: one uniform
/// offset, then equally spaced points on the cumulative weights.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = total / count as f64;
    let mut point = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = weights[0];
    let mut i = 0;
    for _ in 0..count {
        while point > cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
        point += step;
    }
    out
}

/// The particle cloud of a bootstrap filter at every grid time.
///
/// At step `k` the particles `x_k^p` carry the filter weights `w_k^p`
/// (uniform except at observation times). Particle `p` at `k + 1` descends
/// from particle `ancestor(k, p)` at `k`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    num_particles: usize,
    num_steps: usize,
    state_dim: usize,
    states: Vec<f64>,
    weights: Vec<Vec<f64>>,
    ancestors: Vec<Vec<usize>>,
    filter_ess: Vec<(usize, f64)>,
}

impl FilterOutput {
    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    #[inline]
    pub fn state(&self, k: usize, p: usize) -> &[f64] {
        let start = (k * self.num_particles + p) * self.state_dim;
        &self.states[start..start + self.state_dim]
    }

    /// Normalised filter weights at step `k`.
    pub fn weights(&self, k: usize) -> Cow<'_, [f64]> {
        if self.weights[k].is_empty() {
            Cow::Owned(vec![1.0 / self.num_particles as f64; self.num_particles])
        } else {
            Cow::Borrowed(&self.weights[k])
        }
    }

    #[inline]
    pub fn ancestor(&self, k: usize, p: usize) -> usize {
        match self.ancestors[k].as_slice() {
            [] => p,
            a => a[p],
        }
    }

    /// `(grid index, ESS)` at each observation, before resampling.
    pub fn filter_ess(&self) -> &[(usize, f64)] {
        &self.filter_ess
    }

    /// Weighted moments of the filtering distributions.
    pub fn filtered_marginals(&self) -> Marginals {
        let n = self.state_dim;
        let points = self.num_steps + 1;
        let mut mean = vec![0.0; points * n];
        let mut var = vec![0.0; points * n];
        for k in 0..points {
            let w = self.weights(k);
            let m = &mut mean[k * n..(k + 1) * n];
            for (p, wp) in w.iter().enumerate() {
                for (mi, x) in m.iter_mut().zip(self.state(k, p)) {
                    *mi += wp * x;
                }
            }
            let v = &mut var[k * n..(k + 1) * n];
            for (p, wp) in w.iter().enumerate() {
                for ((vi, x), mi) in v.iter_mut().zip(self.state(k, p)).zip(m.iter()) {
                    *vi += wp * (x - mi) * (x - mi);
                }
            }
        }
        Marginals::from_parts(n, mean, var).expect("consistent shapes")
    }
}

/// Bootstrap particle filter with the Euler–Maruyama dynamics as proposal.
///
/// Particles are weighted by the likelihood at every observation and
/// resampled systematically afterwards, except at the final observation
/// whose weights are kept.
pub fn bootstrap_filter<M: DiffusionModel, R: Rng + ?Sized>(
    problem: &SmoothingProblem<M>,
    num_particles: usize,
    rng: &mut R,
) -> Result<FilterOutput> {
    if num_particles == 0 {
        return Err(Error::invalid("the filter needs at least one particle"));
    }
    let n = problem.state_dim();
    let m = problem.noise_dim();
    let steps = problem.grid.num_steps();
    let dt = problem.grid.dt();
    let big_n = num_particles;

    let mut states = vec![0.0; (steps + 1) * big_n * n];
    let mut weights = vec![Vec::new(); steps + 1];
    let mut ancestors = vec![Vec::new(); steps];
    let mut filter_ess = Vec::new();

    for p in 0..big_n {
        problem.prior.sample_into(rng, &mut states[p * n..(p + 1) * n]);
    }

    let mut stepper = Stepper::new(n, m);
    let zero = vec![0.0; m];
    let mut dw = vec![0.0; m];
    let mut log_w = vec![0.0; big_n];
    for k in 0..=steps {
        let layer = k * big_n * n;
        if let Some(y) = problem.observations.at(k) {
            for (p, lw) in log_w.iter_mut().enumerate() {
                let x = &states[layer + p * n..layer + (p + 1) * n];
                *lw = problem.obs_model.log_likelihood(y, x);
            }
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::DegenerateWeights { step: k });
            }
            let mut w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            filter_ess.push((k, ess(&w)));
            if k < steps {
                ancestors[k] = systematic_resample(&w, big_n, rng);
            }
            weights[k] = w;
        }
        if k == steps {
            break;
        }

        let t = problem.grid.time(k);
        let (head, tail) = states.split_at_mut(layer + big_n * n);
        let current = &head[layer..];
        for p in 0..big_n {
            let parent = match ancestors[k].as_slice() {
                [] => p,
                a => a[p],
            };
            fill_noise(rng, dt, &mut dw);
            stepper
                .step_into(
                    &problem.model,
                    &current[parent * n..(parent + 1) * n],
                    t,
                    &zero,
                    &dw,
                    dt,
                    &mut tail[p * n..(p + 1) * n],
                )
                .map_err(|e| match e {
                    Error::Numerical { what, .. } => Error::Numerical { what, particle: Some(p), step: Some(k) },
                    other => other,
                })?;
        }
    }

    Ok(FilterOutput {
        num_particles: big_n,
        num_steps: steps,
        state_dim: n,
        states,
        weights,
        ancestors,
        filter_ess,
    })
}

/// Smoothing estimate of the bootstrap filter: the ancestral paths of the
/// final particles, weighted by the final filter weights.
#[derive(Debug, Clone)]
pub struct FilterSmootherOutput {
    /// One trajectory per final particle, weighted by the final filter weights.
    pub particles: ParticleSystem,
    /// Distinct time-0 ancestors divided by `N`.
    pub unique_fraction: f64,
}

impl FilterSmootherOutput {
    pub fn marginals(&self) -> Marginals {
        Marginals::from_particles(&self.particles, self.particles.weights())
    }
}

pub fn filter_smoother(filter: &FilterOutput) -> FilterSmootherOutput {
    let big_n = filter.num_particles;
    let steps = filter.num_steps;
    let n = filter.state_dim;
    let mut states = vec![0.0; big_n * (steps + 1) * n];
    let mut seen = vec![false; big_n];
    let mut unique = 0;
    for p in 0..big_n {
        let path = &mut states[p * (steps + 1) * n..(p + 1) * (steps + 1) * n];
        let mut idx = p;
        path[steps * n..].copy_from_slice(filter.state(steps, idx));
        for k in (0..steps).rev() {
            idx = filter.ancestor(k, idx);
            path[k * n..(k + 1) * n].copy_from_slice(filter.state(k, idx));
        }
        if !seen[idx] {
            seen[idx] = true;
            unique += 1;
        }
    }
    let mut particles = ParticleSystem::from_parts(big_n, steps, n, 0, states, Vec::new()).expect("consistent shapes");
    particles.set_weights(filter.weights(steps).into_owned());
    FilterSmootherOutput { particles, unique_fraction: unique as f64 / big_n as f64 }
}
