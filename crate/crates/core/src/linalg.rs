//! Small dense linear algebra: row-major matrices and Householder QR least squares.

use crate::prelude::*;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Householder QR factorization of a tall matrix, kept in compact form.
#[derive(Debug, Clone)]
pub struct Qr {
    /// Column-major working copy: R in the upper triangle, reflectors below.
    qr: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Householder scalars.
    tau: Vec<f64>,
    /// Largest |R_kk| relative drop; used for rank decisions.
    diag: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows, a.cols);
        assert!(m >= n, "QR needs rows >= cols");
        let mut qr = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                qr[j * m + i] = a[(i, j)];
            }
        }
        let mut tau = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for k in 0..n {
            let col = &mut qr[k * m..(k + 1) * m];
            let alpha = norm2(&col[k..]);
            if alpha == 0.0 {
                diag[k] = 0.0;
                continue;
            }
            let beta = if col[k] > 0.0 { -alpha } else { alpha };
            let v0 = col[k] - beta;
            for x in &mut col[k + 1..] {
                *x /= v0;
            }
            tau[k] = (beta - col[k]) / beta;
            col[k] = beta;
            diag[k] = beta;
            // apply H_k = I - tau v v^T to the remaining columns (v_k = 1)
            for j in k + 1..n {
                let (left, right) = qr.split_at_mut(j * m);
                let v = &left[k * m..(k + 1) * m];
                let c = &mut right[..m];
                let mut s = c[k];
                for i in k + 1..m {
                    s += v[i] * c[i];
                }
                s *= tau[k];
                c[k] -= s;
                for i in k + 1..m {
                    c[i] -= s * v[i];
                }
            }
        }
        Self {
            qr,
            rows: m,
            cols: n,
            tau,
            diag,
        }
    }

    /// Numerical rank with relative tolerance on the diagonal of R.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let scale = self.diag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if scale == 0.0 {
            return 0;
        }
        self.diag
            .iter()
            .filter(|d| d.abs() > rel_tol * scale)
            .count()
    }

    /// Apply Q^T to `b` in place.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let m = self.rows;
        for k in 0..self.cols {
            if self.tau[k] == 0.0 {
                continue;
            }
            let v = &self.qr[k * m..(k + 1) * m];
            let mut s = b[k];
            for i in k + 1..m {
                s += v[i] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * v[i];
            }
        }
    }

    /// Least-squares solution and residual norm `||A x - b||`.
    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(b.len(), self.rows);
        let mut y = b.to_vec();
        self.apply_qt(&mut y);
        let n = self.cols;
        let m = self.rows;
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..n {
                s -= self.qr[j * m + k] * x[j];
            }
            x[k] = s / self.qr[k * m + k];
        }
        let resid = norm2(&y[n..]);
        (x, resid)
    }
}

/// Solve a small dense square system by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> crate::Result<Vec<f64>> {
    let n = a.rows;
    assert_eq!(n, a.cols);
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs()))
            .unwrap_or(k);
        if m[(p, k)] == 0.0 {
            return Err(crate::Error::Singular(k));
        }
        if p != k {
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Ok(x)
}
