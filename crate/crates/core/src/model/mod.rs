//! SDE models `dX = f(X) dt + g(X) dW` (Itô) with the analytic partial
//! derivatives the forward and backward operators need.
//!
//! Matrix-valued outputs are row-major: `g` is `n x m` with entry
//! `(i, a)` at `i * m + a`; the Jacobian stores `df_i/dx_j` at `i * n + j`;
//! the gradient of `G = g g^T` stores `dG_ij/dx_k` at `(i * n + j) * n + k`;
//! the Hessian field stores `d^2 G_ij / dx_i dx_j` at `i * n + j`.

mod lorenz;
mod morris_lecar;
mod ornstein_uhlenbeck;
mod stuart_landau;

pub use lorenz::Lorenz3D;
pub use morris_lecar::{MorrisLecar4D, MorrisLecarParams};
pub use ornstein_uhlenbeck::OrnsteinUhlenbeck;
pub use stuart_landau::StuartLandau2D;

use crate::prelude::*;

pub trait SdeModel {
    /// State dimension `n`.
    fn dim(&self) -> usize;
    /// Wiener dimension `m`.
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_product_grad(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_product_hess(&self, x: &[f64], out: &mut [f64]);

    /// `G = g g^T`.
    fn diffusion_product(&self, x: &[f64], out: &mut [f64]) {
        let (n, m) = (self.dim(), self.noise_dim());
        let mut g = vec![0.0; n * m];
        self.diffusion(x, &mut g);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..m).map(|a| g[i * m + a] * g[j * m + a]).sum();
            }
        }
    }

    /// `out = g(x) * noise`. Models with diagonal noise override this.
    fn apply_diffusion(&self, x: &[f64], noise: &[f64], out: &mut [f64]) {
        let (n, m) = (self.dim(), self.noise_dim());
        let mut g = vec![0.0; n * m];
        self.diffusion(x, &mut g);
        for i in 0..n {
            out[i] = (0..m).map(|a| g[i * m + a] * noise[a]).sum();
        }
    }

    /// `drift` and `apply_diffusion` in one call, for models that share work
    /// between the two.
    fn drift_and_noise(&self, x: &[f64], noise: &[f64], f: &mut [f64], gw: &mut [f64]) {
        self.drift(x, f);
        self.apply_diffusion(x, noise, gw);
    }

    /// Divergence of the drift, `sum_i df_i/dx_i`.
    fn drift_divergence(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        self.drift_jacobian(x, &mut jac);
        (0..n).map(|i| jac[i * n + i]).sum()
    }
}

/// A catalog model selected by name in experiment configurations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "name", rename_all = "snake_case"))]
pub enum Model {
    StuartLandau(StuartLandau2D),
    Lorenz(Lorenz3D),
    MorrisLecar(MorrisLecar4D),
    OrnsteinUhlenbeck(OrnsteinUhlenbeck),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::StuartLandau($m) => $e,
            Model::Lorenz($m) => $e,
            Model::MorrisLecar($m) => $e,
            Model::OrnsteinUhlenbeck($m) => $e,
        }
    };
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::StuartLandau(_) => "stuart_landau",
            Model::Lorenz(_) => "lorenz",
            Model::MorrisLecar(_) => "morris_lecar",
            Model::OrnsteinUhlenbeck(_) => "ornstein_uhlenbeck",
        }
    }

    /// Checks parameter consistency (matrix shapes, positivity).
    pub fn validate(&self) -> crate::Result<()> {
        match self {
            Model::OrnsteinUhlenbeck(m) => m.validate(),
            _ => Ok(()),
        }
    }
}

impl SdeModel for Model {
    #[inline]
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }
    #[inline]
    fn noise_dim(&self) -> usize {
        dispatch!(self, m => m.noise_dim())
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.drift(x, out))
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.diffusion(x, out))
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.drift_jacobian(x, out))
    }
    fn diffusion_product_grad(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.diffusion_product_grad(x, out))
    }
    fn diffusion_product_hess(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.diffusion_product_hess(x, out))
    }
    fn diffusion_product(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.diffusion_product(x, out))
    }
    #[inline]
    fn apply_diffusion(&self, x: &[f64], noise: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.apply_diffusion(x, noise, out))
    }
    #[inline]
    fn drift_and_noise(&self, x: &[f64], noise: &[f64], f: &mut [f64], gw: &mut [f64]) {
        dispatch!(self, m => m.drift_and_noise(x, noise, f, gw))
    }
    fn drift_divergence(&self, x: &[f64]) -> f64 {
        dispatch!(self, m => m.drift_divergence(x))
    }
}

/// Constant diagonal noise helpers shared by additive-noise models.
pub(crate) fn additive_diffusion(n: usize, amp: f64, out: &mut [f64]) {
    out[..n * n].fill(0.0);
    for i in 0..n {
        out[i * n + i] = amp;
    }
}

#[cfg(test)]
pub(crate) mod fd_check {
    //! Central finite-difference oracles for the analytic derivative fields.
    use super::SdeModel;
    use alloc::vec;
    use alloc::vec::Vec;

    fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    pub fn jacobian_error<M: SdeModel>(m: &M, x: &[f64]) -> f64 {
        let n = m.dim();
        let mut jac = vec![0.0; n * n];
        m.drift_jacobian(x, &mut jac);
        let scale = jac.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut worst = 0.0f64;
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
            m.drift(&xp, &mut fp);
            m.drift(&xm, &mut fm);
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                worst = worst.max(rel_err(jac[i * n + j], fd, 1e-3 * scale));
            }
        }
        worst
    }

    fn product(m: &impl SdeModel, x: &[f64]) -> Vec<f64> {
        let n = m.dim();
        let mut g = vec![0.0; n * n];
        m.diffusion_product(x, &mut g);
        g
    }

    /// Returns (gradient error, hessian error).
    pub fn diffusion_errors<M: SdeModel>(m: &M, x: &[f64]) -> (f64, f64) {
        let n = m.dim();
        let mut grad = vec![0.0; n * n * n];
        let mut hess = vec![0.0; n * n];
        m.diffusion_product_grad(x, &mut grad);
        m.diffusion_product_hess(x, &mut hess);
        let g0 = product(m, x);
        let scale = g0.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
        let mut eg = 0.0f64;
        let mut eh = 0.0f64;
        for k in 0..n {
            let h = 1e-5 * x[k].abs().max(1.0);
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[k] += h;
            xm[k] -= h;
            let (gp, gm) = (product(m, &xp), product(m, &xm));
            for ij in 0..n * n {
                let fd = (gp[ij] - gm[ij]) / (2.0 * h);
                eg = eg.max(rel_err(grad[ij * n + k], fd, 1e-3 * scale));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let hi = 1e-4 * x[i].abs().max(1.0);
                let hj = 1e-4 * x[j].abs().max(1.0);
                let at = |di: f64, dj: f64| {
                    let mut y = x.to_vec();
                    y[i] += di;
                    y[j] += dj;
                    product(m, &y)[i * n + j]
                };
                let fd = (at(hi, hj) - at(hi, -hj) - at(-hi, hj) + at(-hi, -hj)) / (4.0 * hi * hj);
                eh = eh.max(rel_err(hess[i * n + j], fd, 1e-2 * scale));
            }
        }
        (eg, eh)
    }
}
