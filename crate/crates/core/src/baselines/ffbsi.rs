use rand::Rng;

use super::FilterOutput;
use crate::apis::ParticleSystem;
use crate::error::{Error, Result};
use crate::metrics::Marginals;
use crate::model::{DiffusionModel, TransitionKernel};
use crate::problem::SmoothingProblem;

/// Trajectories drawn by backward simulation.
#[derive(Debug, Clone)]
pub struct FfbsiOutput {
    /// `M` equally weighted trajectories.
    pub particles: ParticleSystem,
    /// Mean over the draws of the ESS of the normalised backward weights,
    /// for each step `k = 0..L`.
    pub backward_ess: Vec<f64>,
}

impl FfbsiOutput {
    pub fn marginals(&self) -> Marginals {
        Marginals::from_particles(&self.particles, self.particles.weights())
    }
}

fn draw_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cumulative += w;
        if target < cumulative {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Forward-filter backward-simulation smoother.
///
/// Each of the `M` trajectories starts from a draw of the final filter
/// particles and walks back through every integration step, picking the
/// predecessor `j` at step `k` with probability proportional to
/// `w_k^j p(x_{k+1} | x_k^j)`, where `p` is the Euler–Maruyama transition
/// density. Costs `O(M N L)` density evaluations.
pub fn ffbsi<M: DiffusionModel, R: Rng + ?Sized>(
    filter: &FilterOutput,
    problem: &SmoothingProblem<M>,
    num_draws: usize,
    rng: &mut R,
    condition_cap: f64,
) -> Result<FfbsiOutput> {
    if num_draws == 0 {
        return Err(Error::invalid("backward simulation needs at least one draw"));
    }
    let big_n = filter.num_particles();
    let steps = filter.num_steps();
    let n = filter.state_dim();
    if steps != problem.grid.num_steps() || n != problem.state_dim() {
        return Err(Error::invalid("filter output does not match the problem"));
    }
    let dt = problem.grid.dt();
    let len = (steps + 1) * n;
    let mut states = vec![0.0; num_draws * len];
    let mut current = vec![0usize; num_draws];

    let final_weights = filter.weights(steps);
    for (d, idx) in current.iter_mut().enumerate() {
        *idx = draw_index(&final_weights, 1.0, rng);
        states[d * len + steps * n..(d + 1) * len].copy_from_slice(filter.state(steps, *idx));
    }

    let mut backward_ess = vec![0.0; steps];
    let mut log_w = vec![0.0; big_n];
    let mut w = vec![0.0; big_n];
    // Kernel means, inverse Cholesky factors and `log w_k^j + log-normaliser`,
    // laid out contiguously for the O(M N) inner loop.
    let mut means = vec![0.0; big_n * n];
    let mut chol = vec![0.0; big_n * n * n];
    let mut offset = vec![0.0; big_n];
    for k in (0..steps).rev() {
        let t = problem.grid.time(k);
        let weights = filter.weights(k);
        for j in 0..big_n {
            let kernel =
                TransitionKernel::new(&problem.model, filter.state(k, j), t, dt, condition_cap).map_err(|e| match e {
                    Error::SingularDiffusion { condition, .. } => Error::SingularDiffusion { step: Some(k), condition },
                    Error::Numerical { what, .. } => Error::Numerical { what, particle: Some(j), step: Some(k) },
                    other => other,
                })?;
            means[j * n..(j + 1) * n].copy_from_slice(kernel.mean());
            chol[j * n * n..(j + 1) * n * n].copy_from_slice(kernel.chol_inv());
            offset[j] = weights[j].ln() + kernel.log_norm();
        }

        let mut ess_sum = 0.0;
        for (d, idx) in current.iter_mut().enumerate() {
            let next = &states[d * len + (k + 1) * n..d * len + (k + 2) * n];
            let mut max = f64::NEG_INFINITY;
            if n == 1 {
                let x = next[0];
                for j in 0..big_n {
                    let z = chol[j] * (x - means[j]);
                    log_w[j] = offset[j] - 0.5 * z * z;
                    max = max.max(log_w[j]);
                }
            } else {
                for j in 0..big_n {
                    let l = &chol[j * n * n..(j + 1) * n * n];
                    let mean = &means[j * n..(j + 1) * n];
                    let mut quad = 0.0;
                    for i in 0..n {
                        let z: f64 = (0..=i).map(|c| l[i * n + c] * (next[c] - mean[c])).sum();
                        quad += z * z;
                    }
                    log_w[j] = offset[j] - 0.5 * quad;
                    max = max.max(log_w[j]);
                }
            }
            if !max.is_finite() {
                return Err(Error::DegenerateBackwardWeights { step: k });
            }
            let (mut total, mut sq) = (0.0, 0.0);
            for (wj, lw) in w.iter_mut().zip(&log_w) {
                let v = (lw - max).exp();
                *wj = v;
                total += v;
                sq += v * v;
            }
            ess_sum += total * total / (big_n as f64 * sq);
            *idx = draw_index(&w, total, rng);
            states[d * len + k * n..d * len + (k + 1) * n].copy_from_slice(filter.state(k, *idx));
        }
        backward_ess[k] = ess_sum / num_draws as f64;
    }

    let particles = ParticleSystem::from_parts(num_draws, steps, n, 0, states, Vec::new())?;
    Ok(FfbsiOutput { particles, backward_ess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::bootstrap_filter;
    use crate::model::{
        gaussian_transition_logdensity, BrownianMotion, GaussianObservationModel, InitialStateDistribution,
        ObservationSeries, TimeGrid, DEFAULT_CONDITION_CAP,
    };
    use crate::rng::seeded_rng;

    fn problem(steps: usize) -> SmoothingProblem<BrownianMotion> {
        let grid = TimeGrid::new(0.1, steps).unwrap();
        SmoothingProblem::new(
            BrownianMotion::new(1.0),
            grid,
            GaussianObservationModel::scalar(0.5).unwrap(),
            ObservationSeries::from_times(&grid, &[grid.horizon()], vec![vec![0.7]]).unwrap(),
            InitialStateDistribution::gaussian(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_forward_particle_is_repeated() {
        let pb = problem(5);
        let f = bootstrap_filter(&pb, 1, &mut seeded_rng(0)).unwrap();
        let b = ffbsi(&f, &pb, 4, &mut seeded_rng(1), DEFAULT_CONDITION_CAP).unwrap();
        for d in 0..4 {
            for k in 0..=5 {
                assert_eq!(b.particles.state(d, k), f.state(k, 0));
            }
        }
        assert!(b.backward_ess.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn two_particle_backward_weights_match_direct_evaluation() {
        let pb = problem(1);
        let f = bootstrap_filter(&pb, 2, &mut seeded_rng(5)).unwrap();
        let x1 = f.state(1, 0)[0];
        let p0 = gaussian_transition_logdensity(&pb.model, &[x1], f.state(0, 0), 0.0, 0.1).unwrap().exp();
        let p1 = gaussian_transition_logdensity(&pb.model, &[x1], f.state(0, 1), 0.0, 0.1).unwrap().exp();
        let w0 = p0 / (p0 + p1);

        // Every draw that ends in forward particle 0 steps back to particle 0
        // with probability w0.
        let draws = 40_000;
        let b = ffbsi(&f, &pb, draws, &mut seeded_rng(9), DEFAULT_CONDITION_CAP).unwrap();
        let (mut ends, mut hits) = (0.0, 0.0);
        for d in 0..draws {
            if b.particles.state(d, 1)[0] == x1 {
                ends += 1.0;
                if b.particles.state(d, 0) == f.state(0, 0) {
                    hits += 1.0;
                }
            }
        }
        let se = (w0 * (1.0 - w0) / ends).sqrt();
        assert!((hits / ends - w0).abs() < 4.0 * se + 1e-12, "{} vs {w0}", hits / ends);
        let two_ess = |a: f64| 1.0 / (2.0 * (a * a + (1.0 - a) * (1.0 - a)));
        let x1b = f.state(1, 1)[0];
        let q0 = gaussian_transition_logdensity(&pb.model, &[x1b], f.state(0, 0), 0.0, 0.1).unwrap().exp();
        let q1 = gaussian_transition_logdensity(&pb.model, &[x1b], f.state(0, 1), 0.0, 0.1).unwrap().exp();
        let expected = (ends * two_ess(w0) + (draws as f64 - ends) * two_ess(q0 / (q0 + q1))) / draws as f64;
        assert!((b.backward_ess[0] - expected).abs() < 1e-12);
    }
}
