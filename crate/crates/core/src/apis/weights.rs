use crate::error::{Error, Result};

/// Default cap on the number of annealing steps.
pub const DEFAULT_ANNEAL_CAP: u32 = 500;

/// Normalised importance weights `α_p ∝ exp(-S_p)`, computed in the log domain.
pub fn compute_weights(costs: &[f64]) -> Vec<f64> {
    compute_tempered_weights(costs, 1.0)
}

/// Weights for the tempered costs `S / λ`.
pub fn compute_tempered_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    debug_assert!(min.is_finite(), "costs must contain a finite value");
    let mut w: Vec<f64> = costs.iter().map(|s| (-(s - min) / lambda).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Effective sample size as a fraction of `N`: `1 / (N Σ α²)`.
pub fn ess(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / (weights.len() as f64 * sq)
}

/// Empirical variance of the mean-one weights `N α`, i.e. `N Σ α² - 1`.
pub fn weight_variance(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    weights.len() as f64 * sq - 1.0
}

/// Result of tempering a set of path costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Annealing {
    /// Temperature `λ = β^steps`.
    pub lambda: f64,
    pub steps: u32,
    /// Weights of `S / λ`.
    pub weights: Vec<f64>,
    /// ESS of the tempered weights.
    pub ess: f64,
    /// ESS at `λ = 1`.
    pub raw_ess: f64,
}

/// Finds the smallest `λ = β^m` (`m = 0, 1, ...`) with `ESS(S/λ) ≥ γ`.
///
/// The ESS of tempered weights is non-decreasing in `λ`, so a forward scan
/// finds the smallest admissible exponent.
pub fn anneal(costs: &[f64], gamma: f64, beta: f64) -> Result<Annealing> {
    anneal_capped(costs, gamma, beta, DEFAULT_ANNEAL_CAP)
}

pub fn anneal_capped(costs: &[f64], gamma: f64, beta: f64, cap: u32) -> Result<Annealing> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("annealing threshold must lie in [0, 1), got {gamma}")));
    }
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("annealing factor must exceed 1, got {beta}")));
    }
    let weights = compute_weights(costs);
    let raw_ess = ess(&weights);
    let mut current = Annealing { lambda: 1.0, steps: 0, weights, ess: raw_ess, raw_ess };
    while current.ess < gamma {
        let steps = current.steps + 1;
        if steps > cap {
            return Err(Error::AnnealCap { cap, target: gamma });
        }
        let lambda = beta.powi(steps as i32);
        let weights = compute_tempered_weights(costs, lambda);
        let next_ess = ess(&weights);
        debug_assert!(
            next_ess >= current.ess * (1.0 - 1e-9),
            "tempered ESS decreased: {} -> {next_ess}",
            current.ess
        );
        current = Annealing { lambda, steps, weights, ess: next_ess, raw_ess };
    }
    Ok(current)
}
