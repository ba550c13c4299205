//! Pointwise evaluation of the forward (Fokker-Planck) operator and the
//! backward operator (Koopman generator) from a function's value, gradient
//! and Hessian at a point.

use crate::model::SdeModel;
use crate::prelude::*;
use crate::{Error, Result};

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_shapes(n: usize, grad: &[f64], hess: &[f64], x: &[f64]) -> Result<()> {
    for (len, expected, context) in [
        (x.len(), n, "point"),
        (grad.len(), n, "gradient"),
        (hess.len(), n * n, "hessian"),
    ] {
        if len != expected {
            return Err(Error::Dimension {
                expected,
                got: len,
                context,
            });
        }
    }
    Ok(())
}

/// Coefficients of a linear second-order operator at a point:
/// `L[u](x) = c0 u + sum_i c1_i du/dx_i + sum_ij c2_ij d^2u/dx_i dx_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCoefficients {
    pub c0: f64,
    pub c1: Vec<f64>,
    /// Row-major `n x n`.
    pub c2: Vec<f64>,
}

impl OperatorCoefficients {
    pub fn apply(&self, value: f64, grad: &[f64], hess: &[f64]) -> f64 {
        self.c0 * value
            + self.c1.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>()
            + self.c2.iter().zip(hess).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Expands `-sum_i d_i(f_i u) + 1/2 sum_ij d_ij(G_ij u)` by the product rule.
pub fn forward_coefficients<M: SdeModel + ?Sized>(model: &M, x: &[f64]) -> OperatorCoefficients {
    let n = model.dim();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * n];
    let mut dg = vec![0.0; n * n * n];
    let mut d2g = vec![0.0; n * n];
    model.drift(x, &mut f);
    model.diffusion_product(x, &mut g);
    model.diffusion_product_grad(x, &mut dg);
    model.diffusion_product_hess(x, &mut d2g);
    let div = model.drift_divergence(x);

    let c0 = -div + 0.5 * d2g.iter().sum::<f64>();
    // 1/2 sum_ij [d_i G_ij d_j u + d_j G_ij d_i u]
    let mut c1: Vec<f64> = f.iter().map(|v| -v).collect();
    for i in 0..n {
        for j in 0..n {
            let base = (i * n + j) * n;
            c1[j] += 0.5 * dg[base + i];
            c1[i] += 0.5 * dg[base + j];
        }
    }
    let c2 = g.iter().map(|v| 0.5 * v).collect();
    OperatorCoefficients { c0, c1, c2 }
}

/// `sum_i f_i d_i u + 1/2 sum_ij G_ij d_ij u`.
pub fn backward_coefficients<M: SdeModel + ?Sized>(model: &M, x: &[f64]) -> OperatorCoefficients {
    let n = model.dim();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * n];
    model.drift(x, &mut f);
    model.diffusion_product(x, &mut g);
    OperatorCoefficients {
        c0: 0.0,
        c1: f,
        c2: g.iter().map(|v| 0.5 * v).collect(),
    }
}

/// Applies the forward operator to a density with the given value, gradient
/// and row-major Hessian at `x`.
pub fn apply_forward_operator<M: SdeModel + ?Sized>(
    model: &M,
    rho: f64,
    grad: &[f64],
    hess: &[f64],
    x: &[f64],
) -> Result<f64> {
    check_shapes(model.dim(), grad, hess, x)?;
    check_finite(&[rho], "density value")?;
    check_finite(grad, "density gradient")?;
    check_finite(hess, "density hessian")?;
    check_finite(x, "evaluation point")?;
    Ok(forward_coefficients(model, x).apply(rho, grad, hess))
}

/// Applies the backward operator to an observable.
pub fn apply_backward_operator<M: SdeModel + ?Sized>(
    model: &M,
    grad: &[f64],
    hess: &[f64],
    x: &[f64],
) -> Result<f64> {
    check_shapes(model.dim(), grad, hess, x)?;
    check_finite(grad, "observable gradient")?;
    check_finite(hess, "observable hessian")?;
    check_finite(x, "evaluation point")?;
    Ok(backward_coefficients(model, x).apply(0.0, grad, hess))
}
