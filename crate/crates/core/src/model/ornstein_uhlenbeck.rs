use super::SdeModel;
use crate::prelude::*;
use crate::Error;

/// Linear SDE `dX = A X dt + S dW` with constant `S` (`n x m`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrnsteinUhlenbeck {
    /// Drift matrix rows.
    pub a: Vec<Vec<f64>>,
    /// Noise matrix rows.
    pub sigma: Vec<Vec<f64>>,
}

impl OrnsteinUhlenbeck {
    pub fn new(a: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> crate::Result<Self> {
        let m = Self { a, sigma };
        m.validate()?;
        Ok(m)
    }

    /// Rotating spiral sink: drift `[[mu, omega], [-omega, mu]]`, noise `s I`.
    pub fn spiral(mu: f64, omega: f64, s: f64) -> Self {
        Self {
            a: vec![vec![mu, omega], vec![-omega, mu]],
            sigma: vec![vec![s, 0.0], vec![0.0, s]],
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::Config("OU drift matrix is empty".into()));
        }
        if let Some(r) = self.a.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: r.len(),
                context: "OU drift matrix row",
            });
        }
        if self.sigma.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.sigma.len(),
                context: "OU noise matrix rows",
            });
        }
        let m = self.sigma[0].len();
        if m == 0 || self.sigma.iter().any(|r| r.len() != m) {
            return Err(Error::Config("OU noise matrix rows must share a nonzero length".into()));
        }
        Ok(())
    }
}

impl SdeModel for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn noise_dim(&self) -> usize {
        self.sigma[0].len()
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.a) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        let m = self.noise_dim();
        for (i, row) in self.sigma.iter().enumerate() {
            out[i * m..(i + 1) * m].copy_from_slice(row);
        }
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, row) in self.a.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(row);
        }
    }
    fn diffusion_product_grad(&self, _x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out[..n * n * n].fill(0.0);
    }
    fn diffusion_product_hess(&self, _x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out[..n * n].fill(0.0);
    }
    #[inline]
    fn apply_diffusion(&self, _x: &[f64], noise: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.sigma) {
            *o = row.iter().zip(noise).map(|(a, b)| a * b).sum();
        }
    }
}
