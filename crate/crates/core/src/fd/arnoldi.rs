//! Shift-invert implicitly restarted Arnoldi for the eigenvalues of an FD
//! operator nearest a real shift.

use super::band::BandLu;
use super::FdOperator;
use crate::linalg::{dot, norm2, Matrix, Qr};
use crate::prelude::*;
use crate::rng::spawn_stream;
use crate::{Complex64, Error, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArnoldiOptions {
    /// Real shift; eigenvalues nearest it converge first.
    pub shift: f64,
    /// Krylov dimension, or 0 to size it from the request.
    pub krylov: usize,
    pub max_restarts: usize,
    /// Relative Ritz residual tolerance on the shift-inverted operator.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            shift: -0.05,
            krylov: 0,
            max_restarts: 300,
            tol: 1e-9,
            seed: 11,
        }
    }
}

/// Eigenpairs of an FD operator. Vectors are scaled to unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct FdEigen {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: Vec<Vec<Complex64>>,
}

/// Leading nonzero eigenvalues, ordered by real part from the top. Each
/// complex-conjugate pair is reported once, by its member with positive
/// imaginary part. The stationary eigenvalue is dropped.
pub fn leading_eigs(op: &FdOperator, count: usize) -> Result<FdEigen> {
    leading_eigs_with(op, count, &ArnoldiOptions::default())
}

pub fn leading_eigs_with(op: &FdOperator, count: usize, opts: &ArnoldiOptions) -> Result<FdEigen> {
    if count == 0 || count > 10 {
        return Err(Error::Config(format!("eigenvalue count {count} must be in 1..=10")));
    }
    let lu = op.factor_shifted(-opts.shift, 1.0)?;
    let nev = 2 * count + 4;
    let all = shift_invert_eigs(&lu, opts.shift, nev, opts)?;
    let mut idx: Vec<usize> = (0..all.eigenvalues.len()).collect();
    // the stationary mode: the smallest real eigenvalue in modulus
    if let Some(&z) = idx
        .iter()
        .filter(|&&i| all.eigenvalues[i].im.abs() <= 1e-8 * all.eigenvalues[i].norm().max(1e-12))
        .min_by(|&&a, &&b| all.eigenvalues[a].norm().total_cmp(&all.eigenvalues[b].norm()))
    {
        if all.eigenvalues[z].norm() < 1e-3 {
            idx.retain(|&i| i != z);
        }
    }
    idx.retain(|&i| all.eigenvalues[i].im >= -1e-12 * all.eigenvalues[i].norm());
    idx.sort_by(|&a, &b| {
        let (x, y) = (all.eigenvalues[a], all.eigenvalues[b]);
        y.re.total_cmp(&x.re).then(x.im.abs().total_cmp(&y.im.abs()))
    });
    idx.truncate(count);
    Ok(FdEigen {
        eigenvalues: idx.iter().map(|&i| all.eigenvalues[i]).collect(),
        vectors: idx.iter().map(|&i| all.vectors[i].clone()).collect(),
    })
}

/// Null vector of the operator by inverse iteration, normalized to unit mass
/// (forward) or unit maximum (backward).
pub fn stationary_vector(op: &FdOperator) -> Result<Vec<f64>> {
    let lu = op.factor_shifted(1e-8, 1.0)?;
    let n = op.len();
    let mut x = vec![1.0; n];
    for _ in 0..4 {
        lu.solve(&mut x);
        let s = norm2(&x);
        x.iter_mut().for_each(|v| *v /= s);
    }
    let scale = match op.kind {
        crate::Kind::Forward => x.iter().sum::<f64>() * op.grid.cell_volume(),
        crate::Kind::Backward => x.iter().copied().fold(0.0, |a: f64, v| if v.abs() > a.abs() { v } else { a }),
    };
    x.iter_mut().for_each(|v| *v /= scale);
    Ok(x)
}

struct Krylov {
    /// Orthonormal basis vectors `v_0 .. v_j`.
    v: Vec<Vec<f64>>,
    /// Hessenberg matrix, `(m + 1) x m` row-major.
    h: Vec<f64>,
    m: usize,
}

impl Krylov {
    fn hget(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.m + j]
    }

    fn hset(&mut self, i: usize, j: usize, v: f64) {
        self.h[i * self.m + j] = v;
    }

    /// Extends the factorization from `k` to `m` columns.
    fn extend(&mut self, lu: &BandLu, k: usize, rng: &mut crate::rng::Stream) {
        for j in k..self.m {
            let mut w = self.v[j].clone();
            lu.solve(&mut w);
            let wn = norm2(&w);
            for _ in 0..2 {
                for i in 0..=j {
                    let c = dot(&self.v[i], &w);
                    self.hset(i, j, self.hget(i, j) + c);
                    for (a, b) in w.iter_mut().zip(&self.v[i]) {
                        *a -= c * b;
                    }
                }
            }
            let mut beta = norm2(&w);
            if beta <= 1e-13 * wn {
                // invariant subspace: continue from a fresh orthogonal direction
                w.iter_mut().for_each(|x| *x = rng.normal());
                for _ in 0..2 {
                    for i in 0..=j {
                        let c = dot(&self.v[i], &w);
                        for (a, b) in w.iter_mut().zip(&self.v[i]) {
                            *a -= c * b;
                        }
                    }
                }
                let s = norm2(&w);
                w.iter_mut().for_each(|x| *x /= s);
                beta = 0.0;
                self.hset(j + 1, j, 0.0);
                self.v.truncate(j + 1);
                self.v.push(w);
                continue;
            }
            self.hset(j + 1, j, beta);
            w.iter_mut().for_each(|x| *x /= beta);
            self.v.truncate(j + 1);
            self.v.push(w);
        }
    }

    fn square(&self) -> Matrix {
        let m = self.m;
        Matrix::from_row_major(m, m, self.h[..m * m].to_vec())
    }
}

fn explicit_q(a: &Matrix) -> Matrix {
    let m = a.rows();
    let qr = Qr::new(a);
    let mut q = Matrix::zeros(m, m);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        qr.apply_qt(&mut e);
        // Q^T e_i is row i of Q
        q.row_mut(i).copy_from_slice(&e);
    }
    q
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let x = a[(i, k)];
            if x == 0.0 {
                continue;
            }
            for j in 0..b.cols() {
                c[(i, j)] += x * b[(k, j)];
            }
        }
    }
    c
}

/// Eigenvector of a small real matrix for eigenvalue `theta`, by complex
/// inverse iteration. Unit Euclidean norm.
fn ritz_vector(h: &Matrix, theta: Complex64) -> Vec<Complex64> {
    let m = h.rows();
    let perturbed = theta + Complex64::new(1e-13, 1e-13) * theta.norm().max(1e-300);
    let a = DMatrix::from_fn(m, m, |i, j| Complex64::new(h[(i, j)], 0.0) - if i == j { perturbed } else { Complex64::new(0.0, 0.0) });
    let lu = a.lu();
    let mut y = nalgebra::DVector::from_fn(m, |i, _| Complex64::new(1.0 + 0.01 * i as f64, 0.0));
    for _ in 0..3 {
        if let Some(z) = lu.solve(&y) {
            y = z;
        }
        let s = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if s == 0.0 || !s.is_finite() {
            break;
        }
        y /= Complex64::new(s, 0.0);
    }
    y.iter().copied().collect()
}

/// The `nev` eigenvalues of `(A - shift I)^{-1}` largest in modulus, mapped
/// back to eigenpairs of `A`.
fn shift_invert_eigs(lu: &BandLu, shift: f64, nev: usize, opts: &ArnoldiOptions) -> Result<FdEigen> {
    let n = lu.dim();
    if nev >= n {
        return Err(Error::Config("more eigenvalues requested than grid cells".into()));
    }
    let m = if opts.krylov > 0 { opts.krylov } else { (2 * nev + 10).max(30) }.min(n);
    if m <= nev + 1 {
        return Err(Error::Config("Krylov dimension too small".into()));
    }
    let mut rng = spawn_stream(opts.seed, 0);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let s = norm2(&v0);
    v0.iter_mut().for_each(|x| *x /= s);
    let mut kr = Krylov {
        v: vec![v0],
        h: vec![0.0; (m + 1) * m],
        m,
    };
    let mut k = 0;
    for _restart in 0..opts.max_restarts {
        kr.extend(lu, k, &mut rng);
        let hm = kr.square();
        let dm = DMatrix::from_row_slice(m, m, hm.as_slice());
        let mut theta: Vec<Complex64> = dm.complex_eigenvalues().iter().copied().collect();
        theta.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
        let beta = kr.hget(m, m - 1);
        let mut vecs = Vec::with_capacity(nev);
        let mut converged = true;
        for t in &theta[..nev] {
            let y = ritz_vector(&hm, *t);
            let r = beta.abs() * y[m - 1].norm();
            if !(r <= opts.tol * t.norm()) {
                converged = false;
                break;
            }
            vecs.push(y);
        }
        if converged {
            let mut eigenvalues = Vec::with_capacity(nev);
            let mut vectors = Vec::with_capacity(nev);
            for (t, y) in theta[..nev].iter().zip(&vecs) {
                eigenvalues.push(Complex64::new(shift, 0.0) + t.inv());
                let mut x = vec![Complex64::new(0.0, 0.0); n];
                for (j, c) in y.iter().enumerate() {
                    for (a, b) in x.iter_mut().zip(&kr.v[j]) {
                        *a += c * b;
                    }
                }
                let s = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                x.iter_mut().for_each(|c| *c /= s);
                vectors.push(x);
            }
            return Ok(FdEigen { eigenvalues, vectors });
        }
        // keep a few more than requested, without splitting a conjugate pair
        let mut keep = nev + (m - nev) / 2;
        let near = |a: Complex64, b: Complex64| (a - b.conj()).norm() <= 1e-8 * a.norm().max(1e-300);
        if theta[keep - 1].im != 0.0 && near(theta[keep - 1], theta[keep]) {
            keep += 1;
        }
        if keep >= m {
            keep = m - 1;
        }
        let mut h = hm;
        let mut q = Matrix::identity(m);
        let mut i = keep;
        while i < m {
            let t = theta[i];
            let shifted = if t.im.abs() > 1e-14 * t.norm() && i + 1 < m && near(t, theta[i + 1]) {
                i += 2;
                // (H - t)(H - conj t) = H^2 - 2 Re(t) H + |t|^2
                let mut p = matmul(&h, &h);
                for r in 0..m {
                    for c in 0..m {
                        p[(r, c)] -= 2.0 * t.re * h[(r, c)];
                    }
                    p[(r, r)] += t.norm_sqr();
                }
                p
            } else {
                i += 1;
                let mut p = h.clone();
                for r in 0..m {
                    p[(r, r)] -= t.re;
                }
                p
            };
            let qi = explicit_q(&shifted);
            h = matmul(&matmul(&qi.transpose(), &h), &qi);
            q = matmul(&q, &qi);
        }
        // compress the factorization to `keep` columns
        let f_scale_new = h[(keep, keep - 1)];
        let f_scale_old = beta * q[(m - 1, keep - 1)];
        let mut f: Vec<f64> = kr.v[m].iter().map(|x| x * f_scale_old).collect();
        let mut basis = vec![vec![0.0; n]; keep + 1];
        for (j, b) in basis.iter_mut().enumerate() {
            for l in 0..m {
                let c = q[(l, j)];
                if c == 0.0 {
                    continue;
                }
                for (a, x) in b.iter_mut().zip(&kr.v[l]) {
                    *a += c * x;
                }
            }
        }
        for (a, b) in f.iter_mut().zip(&basis[keep]) {
            *a += f_scale_new * b;
        }
        basis.truncate(keep);
        let fn_ = norm2(&f);
        kr.h.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..keep {
            for c in r.saturating_sub(1)..keep {
                kr.hset(r, c, h[(r, c)]);
            }
        }
        if fn_ > 0.0 {
            f.iter_mut().for_each(|x| *x /= fn_);
            kr.hset(keep, keep - 1, fn_);
        } else {
            f = (0..n).map(|_| rng.normal()).collect();
            for b in &basis {
                let c = dot(b, &f);
                for (a, x) in f.iter_mut().zip(b) {
                    *a -= c * x;
                }
            }
            let s = norm2(&f);
            f.iter_mut().for_each(|x| *x /= s);
        }
        basis.push(f);
        kr.v = basis;
        k = keep;
    }
    Err(Error::NoConvergence(opts.max_restarts))
}
