//! Importance-sampling controllers and their iterative estimation.
//!
//! The shipped parametrisation is the standardised linear feedback law
//!
//! ```text
//! u(x, t) = a(t) z(x, t) + b(t),    z_i(x, t) = (x_i - μ_i(t)) / σ_i(t)
//! ```
//!
//! where `μ(t)`, `σ(t)` are the weighted posterior moments of the current
//! particle system. With that basis the normal equations split into an
//! open-loop part driven by `⟨dW⟩` and a feedback part driven by `⟨dW z'⟩`
//! and the state correlation matrix `C = ⟨z z'⟩`.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::apis::ParticleSystem;
use crate::error::{Error, Result};

/// Ridge added to the correlation matrix before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Floor on standardisation variances.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-12;
/// Largest acceptable condition number of `C + εI`.
pub const DEFAULT_INVERSION_CAP: f64 = 1e12;

/// A control law evaluated along a rollout.
pub trait Control: Sync {
    /// Writes `u(x, t_k)` into `out` (length `m`).
    fn control(&self, x: &[f64], k: usize, t: f64, out: &mut [f64]);
}

/// `u ≡ 0`: the prior dynamics.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroControl;

impl Control for ZeroControl {
    fn control(&self, _x: &[f64], _k: usize, _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Adapter turning a closure `(x, k, t, out)` into a [`Control`].
pub struct FnControl<F>(pub F);

impl<F> Control for FnControl<F>
where
    F: Fn(&[f64], usize, f64, &mut [f64]) + Sync,
{
    fn control(&self, x: &[f64], k: usize, t: f64, out: &mut [f64]) {
        (self.0)(x, k, t, out)
    }
}

/// Per-grid-time mean `μ(t)` and scale `σ(t)` of the standardised basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    state_dim: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl StandardizationStats {
    /// `μ = 0`, `σ = 1` at every grid point.
    pub fn identity(num_points: usize, state_dim: usize) -> Self {
        StandardizationStats {
            state_dim,
            mu: vec![0.0; num_points * state_dim],
            sigma: vec![1.0; num_points * state_dim],
        }
    }

    pub fn from_parts(state_dim: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || mu.len() != sigma.len() || mu.len() % state_dim != 0 {
            return Err(Error::invalid("standardisation arrays have inconsistent shapes"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("standardisation scales must be positive and finite"));
        }
        Ok(StandardizationStats { state_dim, mu, sigma })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_points(&self) -> usize {
        self.mu.len() / self.state_dim
    }

    pub fn mu(&self, k: usize) -> &[f64] {
        &self.mu[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn sigma(&self, k: usize) -> &[f64] {
        &self.sigma[k * self.state_dim..(k + 1) * self.state_dim]
    }

    #[inline]
    pub fn standardize(&self, x: &[f64], k: usize, out: &mut [f64]) {
        let mu = self.mu(k);
        let sigma = self.sigma(k);
        for i in 0..self.state_dim {
            out[i] = (x[i] - mu[i]) / sigma[i];
        }
    }
}

/// Open-loop term `b(t) ∈ ℝ^m` and feedback gain `a(t) ∈ ℝ^{m×n}` for each
/// integration step `k = 0..L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedbackController {
    num_steps: usize,
    noise_dim: usize,
    state_dim: usize,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl LinearFeedbackController {
    pub fn zeros(num_steps: usize, noise_dim: usize, state_dim: usize) -> Self {
        LinearFeedbackController {
            num_steps,
            noise_dim,
            state_dim,
            b: vec![0.0; num_steps * noise_dim],
            a: vec![0.0; num_steps * noise_dim * state_dim],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn b(&self, k: usize) -> &[f64] {
        &self.b[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    pub fn b_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.b[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    /// Row-major `m × n` gain at step `k`.
    pub fn a(&self, k: usize) -> &[f64] {
        let s = self.noise_dim * self.state_dim;
        &self.a[k * s..(k + 1) * s]
    }

    pub fn a_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.noise_dim * self.state_dim;
        &mut self.a[k * s..(k + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).all(|v| v.is_finite())
    }

    /// `u = a(t_k) z(x, t_k) + b(t_k)`.
    pub fn eval_into(&self, stats: &StandardizationStats, x: &[f64], k: usize, out: &mut [f64]) {
        let (m, n) = (self.noise_dim, self.state_dim);
        let a = self.a(k);
        let mu = stats.mu(k);
        let sigma = stats.sigma(k);
        out.copy_from_slice(self.b(k));
        for j in 0..n {
            let z = (x[j] - mu[j]) / sigma[j];
            for i in 0..m {
                out[i] += a[i * n + j] * z;
            }
        }
    }

    /// Re-expresses the controller in a new standardisation without changing
    /// the control law it represents.
    pub fn rebase(&mut self, from: &StandardizationStats, to: &StandardizationStats) {
        let (m, n) = (self.noise_dim, self.state_dim);
        for k in 0..self.num_steps {
            let (mu_o, sig_o) = (from.mu(k), from.sigma(k));
            let (mu_n, sig_n) = (to.mu(k), to.sigma(k));
            let start = k * m * n;
            for i in 0..m {
                let mut shift = 0.0;
                for j in 0..n {
                    let a = &mut self.a[start + i * n + j];
                    shift += *a * (mu_n[j] - mu_o[j]) / sig_o[j];
                    *a *= sig_n[j] / sig_o[j];
                }
                self.b[k * m + i] += shift;
            }
        }
    }
}

/// Pairs a controller with the standardisation it is expressed in.
#[derive(Debug, Clone, Copy)]
pub struct StandardizedControl<'a> {
    pub controller: &'a LinearFeedbackController,
    pub stats: &'a StandardizationStats,
}

impl Control for StandardizedControl<'_> {
    #[inline]
    fn control(&self, x: &[f64], k: usize, _t: f64, out: &mut [f64]) {
        self.controller.eval_into(self.stats, x, k, out)
    }
}

/// `a(t_k) z(x, t_k) + b(t_k)`.
pub fn eval_control(
    ctrl: &LinearFeedbackController,
    stats: &StandardizationStats,
    x: &[f64],
    k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; ctrl.noise_dim()];
    ctrl.eval_into(stats, x, k, &mut out);
    out
}

/// Weighted sufficient statistics at one grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSufficientStats {
    /// `C_ij = ⟨z_i z_j⟩`, row-major `n × n`.
    pub c: Vec<f64>,
    /// `⟨dW⟩`, length `m`.
    pub mean_dw: Vec<f64>,
    /// `⟨dW_i z_j⟩`, row-major `m × n`.
    pub dqz: Vec<f64>,
}

impl ControllerSufficientStats {
    pub fn zeros(noise_dim: usize, state_dim: usize) -> Self {
        ControllerSufficientStats {
            c: vec![0.0; state_dim * state_dim],
            mean_dw: vec![0.0; noise_dim],
            dqz: vec![0.0; noise_dim * state_dim],
        }
    }
}

/// Weighted averages of `z z'`, `dW` and `dW z'` over the particle system at step `k`.
///
/// Summation runs over particles in index order, so the result does not
/// depend on the thread count.
pub fn accumulate_stats(
    particles: &ParticleSystem,
    weights: &[f64],
    stats: &StandardizationStats,
    k: usize,
) -> ControllerSufficientStats {
    let n = particles.state_dim();
    let m = particles.noise_dim();
    let mut out = ControllerSufficientStats::zeros(m, n);
    let mut z = vec![0.0; n];
    for (p, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        stats.standardize(particles.state(p, k), k, &mut z);
        let dw = particles.noise(p, k);
        for i in 0..n {
            let wz = w * z[i];
            for j in 0..n {
                out.c[i * n + j] += wz * z[j];
            }
        }
        for i in 0..m {
            let wd = w * dw[i];
            out.mean_dw[i] += wd;
            for j in 0..n {
                out.dqz[i * n + j] += wd * z[j];
            }
        }
    }
    out
}

/// [`accumulate_stats`] for every step `0..L`, optionally averaging the noise
/// statistics over a forward window of `window` steps (a smoothed, biased
/// estimate; `window = 1` is the plain per-step estimator).
pub fn accumulate_all_stats(
    particles: &ParticleSystem,
    weights: &[f64],
    stats: &StandardizationStats,
    window: usize,
) -> Vec<ControllerSufficientStats> {
    let steps = particles.num_steps();
    let raw: Vec<_> = (0..steps)
        .into_par_iter()
        .map(|k| accumulate_stats(particles, weights, stats, k))
        .collect();
    if window <= 1 {
        return raw;
    }
    (0..steps)
        .map(|k| {
            let end = (k + window).min(steps);
            let count = (end - k) as f64;
            let mut s = raw[k].clone();
            s.mean_dw.fill(0.0);
            s.dqz.fill(0.0);
            for r in &raw[k..end] {
                for (a, b) in s.mean_dw.iter_mut().zip(&r.mean_dw) {
                    *a += b / count;
                }
                for (a, b) in s.dqz.iter_mut().zip(&r.dqz) {
                    *a += b / count;
                }
            }
            s
        })
        .collect()
}

/// `(C + εI)^{-1}`, refusing matrices whose condition number exceeds `cap`.
fn regularized_inverse(c: &[f64], n: usize, ridge: f64, cap: f64, step: usize) -> Result<DMatrix<f64>> {
    let mut mat = DMatrix::from_row_slice(n, n, c);
    for i in 0..n {
        mat[(i, i)] += ridge;
    }
    if n == 1 {
        let v = mat[(0, 0)];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::MatrixInversion { step, condition: f64::INFINITY });
        }
        return Ok(DMatrix::from_element(1, 1, 1.0 / v));
    }
    let eig = SymmetricEigen::new(mat);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > cap {
        return Err(Error::MatrixInversion { step, condition });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// One learning step for every grid step:
/// `b ← b + η ⟨dW⟩/dt` and `a ← a + η (⟨dW z'⟩/dt)(C + εI)^{-1}`.
pub fn update_controller(
    ctrl: &mut LinearFeedbackController,
    stats: &[ControllerSufficientStats],
    eta: f64,
    dt: f64,
    ridge: f64,
) -> Result<()> {
    update_controller_capped(ctrl, stats, eta, dt, ridge, DEFAULT_INVERSION_CAP)
}

pub fn update_controller_capped(
    ctrl: &mut LinearFeedbackController,
    stats: &[ControllerSufficientStats],
    eta: f64,
    dt: f64,
    ridge: f64,
    cap: f64,
) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("learning rate must lie in (0, 1), got {eta}")));
    }
    if stats.len() != ctrl.num_steps() {
        return Err(Error::invalid("need one set of sufficient statistics per integration step"));
    }
    let (m, n) = (ctrl.noise_dim(), ctrl.state_dim());
    let scale = eta / dt;
    for (k, s) in stats.iter().enumerate() {
        for (b, d) in ctrl.b_mut(k).iter_mut().zip(&s.mean_dw) {
            *b += scale * d;
        }
        if s.dqz.iter().all(|v| *v == 0.0) {
            continue;
        }
        let inv = regularized_inverse(&s.c, n, ridge, cap, k)?;
        let a = ctrl.a_mut(k);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += s.dqz[i * n + l] * inv[(l, j)];
                }
                a[i * n + j] += scale * acc;
            }
        }
    }
    Ok(())
}

/// Weighted mean and standard deviation of every state coordinate at every
/// grid time, with variances floored at `var_floor`.
pub fn update_standardization(
    particles: &ParticleSystem,
    weights: &[f64],
    var_floor: f64,
) -> StandardizationStats {
    let n = particles.state_dim();
    let points = particles.num_steps() + 1;
    let moments: Vec<(Vec<f64>, Vec<f64>)> = (0..points)
        .into_par_iter()
        .map(|k| crate::apis::weighted_marginals(particles, weights, k))
        .collect();
    let mut mu = Vec::with_capacity(points * n);
    let mut sigma = Vec::with_capacity(points * n);
    for (mean, var) in moments {
        mu.extend_from_slice(&mean);
        sigma.extend(var.iter().map(|v| v.max(var_floor).sqrt()));
    }
    StandardizationStats { state_dim: n, mu, sigma }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StepRecord {
    k: usize,
    b: Vec<f64>,
    a: Vec<Vec<f64>>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerFile {
    dt: f64,
    state_dim: usize,
    noise_dim: usize,
    steps: Vec<StepRecord>,
}

/// Serialises a controller together with its standardisation, one record per
/// integration step.
pub fn controller_to_json(
    ctrl: &LinearFeedbackController,
    stats: &StandardizationStats,
    dt: f64,
) -> String {
    let (m, n) = (ctrl.noise_dim(), ctrl.state_dim());
    let steps = (0..ctrl.num_steps())
        .map(|k| StepRecord {
            k,
            b: ctrl.b(k).to_vec(),
            a: ctrl.a(k).chunks(n).map(<[f64]>::to_vec).collect(),
            mu: stats.mu(k).to_vec(),
            sigma: stats.sigma(k).to_vec(),
        })
        .collect();
    let file = ControllerFile { dt, state_dim: n, noise_dim: m, steps };
    serde_json::to_string_pretty(&file).expect("controller serialises")
}

/// Inverse of [`controller_to_json`]. The returned standardisation covers
/// grid points `0..L` and repeats the last record at the horizon.
pub fn controller_from_json(text: &str) -> Result<(LinearFeedbackController, StandardizationStats, f64)> {
    let file: ControllerFile =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("controller file: {e}")))?;
    let (m, n) = (file.noise_dim, file.state_dim);
    let steps = file.steps.len();
    if steps == 0 || m == 0 || n == 0 {
        return Err(Error::invalid("controller file has no steps"));
    }
    let mut ctrl = LinearFeedbackController::zeros(steps, m, n);
    let mut mu = Vec::with_capacity((steps + 1) * n);
    let mut sigma = Vec::with_capacity((steps + 1) * n);
    for (k, rec) in file.steps.iter().enumerate() {
        let shape_ok = rec.k == k
            && rec.b.len() == m
            && rec.a.len() == m
            && rec.a.iter().all(|r| r.len() == n)
            && rec.mu.len() == n
            && rec.sigma.len() == n;
        if !shape_ok {
            return Err(Error::invalid(format!("controller record {k} is malformed")));
        }
        ctrl.b_mut(k).copy_from_slice(&rec.b);
        ctrl.a_mut(k).copy_from_slice(&rec.a.concat());
        mu.extend_from_slice(&rec.mu);
        sigma.extend_from_slice(&rec.sigma);
    }
    mu.extend_from_slice(&file.steps[steps - 1].mu);
    sigma.extend_from_slice(&file.steps[steps - 1].sigma);
    let stats = StandardizationStats::from_parts(n, mu, sigma)?;
    if !ctrl.is_finite() {
        return Err(Error::invalid("controller file contains non-finite parameters"));
    }
    Ok((ctrl, stats, file.dt))
}

pub fn save_controller(
    path: impl AsRef<Path>,
    ctrl: &LinearFeedbackController,
    stats: &StandardizationStats,
    dt: f64,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, controller_to_json(ctrl, stats, dt)).map_err(|e| Error::io(path, e))
}

pub fn load_controller(path: impl AsRef<Path>) -> Result<(LinearFeedbackController, StandardizationStats, f64)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    controller_from_json(&text)
}
