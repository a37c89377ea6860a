use crate::error::{Error, Result};

/// `N` weighted trajectories on the integration grid together with the noise
/// realisations that generated them.
///
/// Storage is particle-major: the trajectory of particle `p` is one
/// contiguous slice of `(L + 1)·n` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    num_particles: usize,
    num_steps: usize,
    state_dim: usize,
    noise_dim: usize,
    states: Vec<f64>,
    noises: Vec<f64>,
    costs: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleSystem {
    pub(crate) fn zeroed(num_particles: usize, num_steps: usize, state_dim: usize, noise_dim: usize) -> Self {
        ParticleSystem {
            num_particles,
            num_steps,
            state_dim,
            noise_dim,
            states: vec![0.0; num_particles * (num_steps + 1) * state_dim],
            noises: vec![0.0; num_particles * num_steps * noise_dim],
            costs: vec![0.0; num_particles],
            weights: vec![1.0 / num_particles as f64; num_particles],
        }
    }

    /// Assembles a system from raw arrays; costs start at zero and weights uniform.
    pub fn from_parts(
        num_particles: usize,
        num_steps: usize,
        state_dim: usize,
        noise_dim: usize,
        states: Vec<f64>,
        noises: Vec<f64>,
    ) -> Result<Self> {
        if num_particles == 0 {
            return Err(Error::invalid("a particle system needs at least one particle"));
        }
        if states.len() != num_particles * (num_steps + 1) * state_dim
            || noises.len() != num_particles * num_steps * noise_dim
        {
            return Err(Error::invalid("particle arrays do not match the declared shape"));
        }
        let mut ps = ParticleSystem::zeroed(num_particles, num_steps, state_dim, noise_dim);
        ps.states = states;
        ps.noises = noises;
        Ok(ps)
    }

    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    #[inline]
    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let start = (p * (self.num_steps + 1) + k) * self.state_dim;
        &self.states[start..start + self.state_dim]
    }

    /// The increment `dW_k` that moved particle `p` from step `k` to `k + 1`.
    #[inline]
    pub fn noise(&self, p: usize, k: usize) -> &[f64] {
        let start = (p * self.num_steps + k) * self.noise_dim;
        &self.noises[start..start + self.noise_dim]
    }

    pub fn trajectory(&self, p: usize) -> &[f64] {
        let len = (self.num_steps + 1) * self.state_dim;
        &self.states[p * len..(p + 1) * len]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Path costs `S_u` (unannealed).
    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Normalised importance weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.num_particles);
        self.weights = weights;
    }

    pub fn set_costs(&mut self, costs: Vec<f64>) {
        assert_eq!(costs.len(), self.num_particles);
        self.costs = costs;
    }

    /// Drops the noise realisations once they are no longer needed.
    pub fn discard_noises(&mut self) {
        self.noises = Vec::new();
    }

    pub(crate) fn buffers_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.states, &mut self.noises, &mut self.costs)
    }
}

/// Weighted mean and variance of each coordinate of `X_k`.
pub fn weighted_marginals(particles: &ParticleSystem, weights: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = particles.state_dim();
    let mut mean = vec![0.0; n];
    for (p, &w) in weights.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(particles.state(p, k)) {
            *m += w * x;
        }
    }
    let mut var = vec![0.0; n];
    for (p, &w) in weights.iter().enumerate() {
        for ((v, x), m) in var.iter_mut().zip(particles.state(p, k)).zip(&mean) {
            let d = x - m;
            *v += w * d * d;
        }
    }
    (mean, var)
}
