#[allow(unused_imports)]
use num_traits::Float;
use super::{additive_diffusion, SdeModel};

/// Lorenz system with additive noise of intensity `sqrt(2D)` in every component.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lorenz3D {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub d: f64,
}

impl Lorenz3D {
    pub fn new(sigma: f64, rho: f64, beta: f64, d: f64) -> Self {
        Self { sigma, rho, beta, d }
    }

    /// The chaotic regime `sigma = 10, rho = 28, beta = 8/3` with `D = 5`.
    pub fn chaotic() -> Self {
        Self::new(10.0, 28.0, 8.0 / 3.0, 5.0)
    }
}

impl SdeModel for Lorenz3D {
    fn dim(&self) -> usize {
        3
    }
    fn noise_dim(&self) -> usize {
        3
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.rho - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        additive_diffusion(3, (2.0 * self.d).sqrt(), out);
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[..9].copy_from_slice(&[
            -self.sigma,
            self.sigma,
            0.0,
            self.rho - x[2],
            -1.0,
            -x[0],
            x[1],
            x[0],
            -self.beta,
        ]);
    }
    fn diffusion_product(&self, _x: &[f64], out: &mut [f64]) {
        additive_diffusion(3, 2.0 * self.d, out);
    }
    fn diffusion_product_grad(&self, _x: &[f64], out: &mut [f64]) {
        out[..27].fill(0.0);
    }
    fn diffusion_product_hess(&self, _x: &[f64], out: &mut [f64]) {
        out[..9].fill(0.0);
    }
    #[inline]
    fn apply_diffusion(&self, _x: &[f64], noise: &[f64], out: &mut [f64]) {
        let a = (2.0 * self.d).sqrt();
        for i in 0..3 {
            out[i] = a * noise[i];
        }
    }
    fn drift_divergence(&self, _x: &[f64]) -> f64 {
        -(self.sigma + 1.0 + self.beta)
    }
}
