use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::DiffusionModel;
use crate::error::{Error, Result};

/// Parameters of the sinusoidally driven rate network, in the JSON layout
/// `{"B": [[..]], "theta": [..], "A": [..], "omega": [..]}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralParams {
    #[serde(rename = "B")]
    pub coupling: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    #[serde(rename = "A")]
    pub amplitude: Vec<f64>,
    pub omega: Vec<f64>,
}

impl NeuralParams {
    /// Draws a random network: `θ_i ~ N(0, 0.75²)`, `A_i ~ N(0, 2²)`,
    /// `ω_i ~ N(π/5, π²)` and an antisymmetric `B` with `B_ij ~ N(0, 2²)` above
    /// the diagonal.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        use std::f64::consts::PI;
        let theta_dist = Normal::new(0.0, 0.75).unwrap();
        let amp_dist = Normal::new(0.0, 2.0).unwrap();
        let omega_dist = Normal::new(PI / 5.0, PI).unwrap();
        let coupling_dist = Normal::new(0.0, 2.0).unwrap();

        let theta = (0..dim).map(|_| theta_dist.sample(rng)).collect();
        let amplitude = (0..dim).map(|_| amp_dist.sample(rng)).collect();
        let omega = (0..dim).map(|_| omega_dist.sample(rng)).collect();
        let mut coupling = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in i + 1..dim {
                let b = coupling_dist.sample(rng);
                coupling[i][j] = b;
                coupling[j][i] = -b;
            }
        }
        NeuralParams { coupling, theta, amplitude, omega }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.theta.len();
        if d == 0 {
            return Err(Error::invalid("network must have at least one unit"));
        }
        if self.amplitude.len() != d || self.omega.len() != d || self.coupling.len() != d {
            return Err(Error::invalid("B, theta, A and omega must agree in dimension"));
        }
        if self.coupling.iter().any(|row| row.len() != d) {
            return Err(Error::invalid("B must be square"));
        }
        let all = self
            .coupling
            .iter()
            .flatten()
            .chain(&self.theta)
            .chain(&self.amplitude)
            .chain(&self.omega);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (self.coupling[i][j], self.coupling[j][i]);
                if (a + b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::invalid(format!(
                        "B is not antisymmetric: B[{i}][{j}] = {a}, B[{j}][{i}] = {b}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: NeuralParams =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("network parameters: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NeuralParams::from_json(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// `dX = [-X + tanh(B X + θ + A sin(ω t))] dt + σ dW` with isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNetwork {
    dim: usize,
    coupling: Vec<f64>,
    theta: Vec<f64>,
    amplitude: Vec<f64>,
    omega: Vec<f64>,
    sigma: f64,
}

impl NeuralNetwork {
    pub fn new(params: &NeuralParams, sigma: f64) -> Result<Self> {
        params.validate()?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("noise scale must be positive"));
        }
        Ok(NeuralNetwork {
            dim: params.dim(),
            coupling: params.coupling.iter().flatten().copied().collect(),
            theta: params.theta.clone(),
            amplitude: params.amplitude.clone(),
            omega: params.omega.clone(),
            sigma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl DiffusionModel for NeuralNetwork {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.coupling[i * d..(i + 1) * d];
            let input: f64 = row.iter().zip(x).map(|(b, xj)| b * xj).sum();
            let drive = self.amplitude[i] * (self.omega[i] * t).sin();
            out[i] = -x[i] + (input + self.theta[i] + drive).tanh();
        }
    }

    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = self.sigma;
        }
    }

    fn name(&self) -> &str {
        "neural5"
    }
}
