use rayon::prelude::*;

use super::{InitialProposal, ParticleSystem};
use crate::controller::Control;
use crate::error::{Error, Result};
use crate::model::{fill_noise, DiffusionModel, Stepper};
use crate::problem::SmoothingProblem;
use crate::rng::stream_rng;

/// Simulates `num_particles` controlled trajectories and their path costs
///
/// ```text
/// S = S⁰ - Σ_j log g(y_j | X_{t_j}) + Σ_k ½‖u_k‖² dt + u_k · dW_k
/// ```
///
/// with `S⁰ = log q(X_0) - log p₀(X_0)` when the initial state comes from a
/// proposal `q` and `S⁰ = 0` when it comes from the prior. Particle `p` draws
/// from the stream `(seed, iteration, p)`.
///
/// The returned system carries the normalised weights `exp(-S)`.
pub fn rollout<M: DiffusionModel, C: Control + ?Sized>(
    problem: &SmoothingProblem<M>,
    control: &C,
    proposal: Option<&InitialProposal>,
    num_particles: usize,
    seed: u64,
    iteration: u32,
) -> Result<ParticleSystem> {
    if num_particles == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    if proposal.is_some() && !problem.prior.is_gaussian() {
        return Err(Error::invalid("an initial proposal requires a Gaussian prior"));
    }
    let n = problem.state_dim();
    let m = problem.noise_dim();
    let steps = problem.grid.num_steps();
    let dt = problem.grid.dt();
    let mut ps = ParticleSystem::zeroed(num_particles, steps, n, m);
    let (states, noises, costs) = ps.buffers_mut();

    let results: Vec<Result<()>> = states
        .par_chunks_mut((steps + 1) * n)
        .zip(noises.par_chunks_mut(steps * m))
        .zip(costs.par_iter_mut())
        .enumerate()
        .map(|(p, ((traj, dws), cost))| {
            let mut rng = stream_rng(seed, iteration, p as u32);
            let mut stepper = Stepper::new(n, m);
            let mut u = vec![0.0; m];

            let (x0, _) = traj.split_at_mut(n);
            let mut s = match proposal {
                Some(q) => {
                    q.sample_into(&mut rng, x0);
                    let log_prior = problem.prior.log_density(x0).expect("gaussian prior");
                    q.log_density(x0) - log_prior
                }
                None => {
                    problem.prior.sample_into(&mut rng, x0);
                    0.0
                }
            };
            if let Some(ll) = problem.log_likelihood_at(0, x0) {
                s -= ll;
            }

            for k in 0..steps {
                let t = problem.grid.time(k);
                let (head, tail) = traj.split_at_mut((k + 1) * n);
                let x = &head[k * n..];
                let next = &mut tail[..n];
                let dw = &mut dws[k * m..(k + 1) * m];

                control.control(x, k, t, &mut u);
                fill_noise(&mut rng, dt, dw);
                let mut quad = 0.0;
                let mut cross = 0.0;
                for j in 0..m {
                    quad += u[j] * u[j];
                    cross += u[j] * dw[j];
                }
                s += 0.5 * quad * dt + cross;

                stepper
                    .step_into(&problem.model, x, t, &u, dw, dt, next)
                    .map_err(|e| match e {
                        Error::Numerical { what, .. } => Error::Numerical {
                            what,
                            particle: Some(p),
                            step: Some(k),
                        },
                        other => other,
                    })?;
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical { what: "state", particle: Some(p), step: Some(k + 1) });
                }
                if let Some(ll) = problem.log_likelihood_at(k + 1, next) {
                    s -= ll;
                }
            }
            if !s.is_finite() {
                return Err(Error::Numerical { what: "path cost", particle: Some(p), step: None });
            }
            *cost = s;
            Ok(())
        })
        .collect();
    results.into_iter().collect::<Result<()>>()?;

    let weights = super::compute_weights(ps.costs());
    ps.set_weights(weights);
    Ok(ps)
}
