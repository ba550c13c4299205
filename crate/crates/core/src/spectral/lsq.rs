use super::{EigenEstimate, SliceWindow};
use crate::density::DensityMatrix;
use crate::linalg::{Matrix, Qr};
use crate::prelude::*;
use crate::{Complex64, Error, Result};
use core::f64::consts::PI;

/// Stationary term subtracted from each trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline<'a> {
    /// `P0` at each training point (forward).
    PerPoint(&'a [f64]),
    /// `P0` mass of the reference box, shared by all points (backward).
    Shared(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LsqOptions {
    /// Single-mode form with rows premultiplied by `exp(-mu_1 t_j)`, so the
    /// design matrix holds only `cos`/`-sin` columns.
    pub row_weighted: bool,
}

/// Largest row weight `exp(-mu_1 t_j)` accepted by the row-weighted form.
pub const WEIGHT_CAP: f64 = 1e12;

/// Solves, independently for every training point `i`, the least-squares system
/// `rho_i(t_j) - P0 = sum_k exp(mu_k t_j) [cos(w_k t_j) U_k^R - sin(w_k t_j) U_k^I]`
/// over the window, with one QR factorization of the shared design matrix.
/// Purely real modes contribute a single column.
pub fn solve_eigenfunction_lsq(
    d: &DensityMatrix,
    baseline: Baseline<'_>,
    eigenvalues: &[Complex64],
    window: SliceWindow,
    opts: &LsqOptions,
) -> Result<EigenEstimate> {
    window.check(d.n_t)?;
    let m = eigenvalues.len();
    if m == 0 {
        return Err(Error::Config("at least one eigenvalue is required".into()));
    }
    if let Baseline::PerPoint(p0) = baseline {
        if p0.len() != d.n_x {
            return Err(Error::Dimension {
                expected: d.n_x,
                got: p0.len(),
                context: "stationary density per point",
            });
        }
    }
    let times = &d.times[window.start..window.end];
    let (t_s, t_f) = (times[0], times[times.len() - 1]);
    if window.len() < 2 * m {
        return Err(Error::DegenerateWindow {
            t_start: t_s,
            t_end: t_f,
            reason: "window shorter than two slices per mode",
        });
    }
    let lead = eigenvalues[0];
    if lead.im != 0.0 && lead.im.abs() * (t_f - t_s) < PI {
        return Err(Error::DegenerateWindow {
            t_start: t_s,
            t_end: t_f,
            reason: "window spans less than half an oscillation period",
        });
    }
    if opts.row_weighted && m != 1 {
        return Err(Error::Config("the row-weighted form takes exactly one mode".into()));
    }

    let weights: Vec<f64> = if opts.row_weighted {
        let w: Vec<f64> = times.iter().map(|&t| (-lead.re * t).exp()).collect();
        if w.iter().any(|&v| !(v <= WEIGHT_CAP)) {
            return Err(Error::DegenerateWindow {
                t_start: t_s,
                t_end: t_f,
                reason: "row weight exp(-mu_1 t) exceeds 1e12",
            });
        }
        w
    } else {
        vec![1.0; times.len()]
    };

    let cols: usize = eigenvalues.iter().map(|l| if l.im == 0.0 { 1 } else { 2 }).sum();
    let mut a = Matrix::zeros(times.len(), cols);
    for (j, (&t, &w)) in times.iter().zip(&weights).enumerate() {
        let mut c = 0;
        for l in eigenvalues {
            let e = (l.re * t).exp() * w;
            let (s, co) = (l.im * t).sin_cos();
            a[(j, c)] = e * co;
            c += 1;
            if l.im != 0.0 {
                a[(j, c)] = -e * s;
                c += 1;
            }
        }
    }
    let qr = Qr::new(&a);
    if qr.rank(1e-10) < cols {
        return Err(Error::RankDeficient {
            t_start: t_s,
            t_end: t_f,
        });
    }

    let mut values = Vec::with_capacity(d.n_x * m);
    let mut residuals = Vec::with_capacity(d.n_x);
    let mut rhs = vec![0.0; times.len()];
    for i in 0..d.n_x {
        let p0 = match baseline {
            Baseline::PerPoint(p) => p[i],
            Baseline::Shared(v) => v,
        };
        for (j, r) in rhs.iter_mut().enumerate() {
            *r = (d.get(window.start + j, i) - p0) * weights[j];
        }
        let (u, res) = qr.solve(&rhs);
        let mut c = 0;
        for l in eigenvalues {
            if l.im == 0.0 {
                values.push(Complex64::new(u[c], 0.0));
                c += 1;
            } else {
                values.push(Complex64::new(u[c], u[c + 1]));
                c += 2;
            }
        }
        residuals.push(res);
    }
    Ok(EigenEstimate {
        kind: d.kind,
        eigenvalues: eigenvalues.to_vec(),
        values,
        window: (t_s, t_f),
        residuals,
    })
}

/// Rescales a forward estimate so that `sum_i P(x_i) conj(Q(x_i)) delta = 1`.
/// `q` holds `Q`, the complex conjugate of the backward eigenfunction `Q*`
/// that the backward least squares produces, so callers conjugate that first. Returns the rescaled `P` and
/// the pairing constant `c`.
pub fn rescale_biorthonormal(
    p: &[Complex64],
    q: &[Complex64],
    delta: f64,
) -> Result<(Vec<Complex64>, Complex64)> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
            context: "biorthonormal pairing",
        });
    }
    let c: Complex64 = p.iter().zip(q).map(|(a, b)| a * b.conj()).sum::<Complex64>() * delta;
    if !(c.norm() >= 1e-12) {
        return Err(Error::NearOrthogonal(c.norm()));
    }
    Ok((p.iter().map(|v| v / c).collect(), c))
}
