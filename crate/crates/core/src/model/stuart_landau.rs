#[allow(unused_imports)]
use num_traits::Float;
use super::{additive_diffusion, SdeModel};

/// Noisy planar Stuart-Landau oscillator
/// `dX = [-4X(X^2+Y^2-1) + w Y] dt + sqrt(2D) dW1`,
/// `dY = [-4Y(X^2+Y^2-1) - w X] dt + sqrt(2D) dW2`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StuartLandau2D {
    pub omega: f64,
    pub d: f64,
}

impl StuartLandau2D {
    pub fn new(omega: f64, d: f64) -> Self {
        Self { omega, d }
    }

    /// Unnormalized stationary density `exp(-(r^2-1)^2 / D)`.
    pub fn stationary_unnormalized(&self, x: f64, y: f64) -> f64 {
        let s = x * x + y * y - 1.0;
        (-s * s / self.d).exp()
    }

    /// Normalizing constant of the stationary density over the plane:
    /// `pi * int_{-1}^inf exp(-s^2/D) ds = pi * sqrt(pi D)/2 * (1 + erf(1/sqrt(D)))`.
    pub fn stationary_norm(&self) -> f64 {
        let pi = core::f64::consts::PI;
        pi * (pi * self.d).sqrt() / 2.0 * (1.0 + libm::erf(1.0 / self.d.sqrt()))
    }

    pub fn stationary_density(&self, x: f64, y: f64) -> f64 {
        self.stationary_unnormalized(x, y) / self.stationary_norm()
    }
}

impl SdeModel for StuartLandau2D {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let s = x[0] * x[0] + x[1] * x[1] - 1.0;
        out[0] = -4.0 * x[0] * s + self.omega * x[1];
        out[1] = -4.0 * x[1] * s - self.omega * x[0];
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        additive_diffusion(2, (2.0 * self.d).sqrt(), out);
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let s = x[0] * x[0] + x[1] * x[1] - 1.0;
        out[0] = -4.0 * s - 8.0 * x[0] * x[0];
        out[1] = -8.0 * x[0] * x[1] + self.omega;
        out[2] = -8.0 * x[0] * x[1] - self.omega;
        out[3] = -4.0 * s - 8.0 * x[1] * x[1];
    }
    fn diffusion_product(&self, _x: &[f64], out: &mut [f64]) {
        out[..4].copy_from_slice(&[2.0 * self.d, 0.0, 0.0, 2.0 * self.d]);
    }
    fn diffusion_product_grad(&self, _x: &[f64], out: &mut [f64]) {
        out[..8].fill(0.0);
    }
    fn diffusion_product_hess(&self, _x: &[f64], out: &mut [f64]) {
        out[..4].fill(0.0);
    }
    #[inline]
    fn apply_diffusion(&self, _x: &[f64], noise: &[f64], out: &mut [f64]) {
        let a = (2.0 * self.d).sqrt();
        out[0] = a * noise[0];
        out[1] = a * noise[1];
    }
    fn drift_divergence(&self, x: &[f64]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        -8.0 * (r2 - 1.0) - 8.0 * r2
    }
}
