use super::DiffusionModel;

/// Scalar Brownian motion `dX = c dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BrownianMotion {
    pub sigma: f64,
    pub drift: f64,
}

impl BrownianMotion {
    pub fn new(sigma: f64) -> Self {
        BrownianMotion { sigma, drift: 0.0 }
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }
}

impl DiffusionModel for BrownianMotion {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = self.drift;
    }

    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = self.sigma;
    }

    fn name(&self) -> &str {
        "brownian"
    }
}
