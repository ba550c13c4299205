//! Banded LU factorization with partial pivoting.

use crate::prelude::*;
use crate::{Error, Result};

/// `P A = L U` for a matrix with `kl` sub- and `ku` super-diagonals.
/// Row `i` of `U` is stored over columns `i .. i + ku + kl` (pivoting widens
/// the upper band by `kl`).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// Row `i` covers columns `i - kl ..= i + ku + kl`.
    band: Vec<f64>,
    /// Multipliers of step `k` for rows `k + 1 ..= k + kl`.
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Factors the matrix whose entries are produced by `entries(row)` as
    /// `(col, value)` pairs, all within the stated bandwidths.
    pub fn factor<I>(n: usize, kl: usize, ku: usize, mut entries: impl FnMut(usize) -> I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in entries(i) {
                if j + kl < i || j > i + ku {
                    return Err(Error::Config(format!("entry ({i}, {j}) outside the band")));
                }
                band[i * width + j + kl - i] += v;
            }
        }
        let mut lower = vec![0.0; n * kl];
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[k * width + kl].abs();
            for i in k + 1..=last {
                let v = band[i * width + k + kl - i].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(k));
            }
            pivots[k] = p;
            let hi = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=hi {
                    band.swap(k * width + j + kl - k, p * width + j + kl - p);
                }
            }
            let piv = band[k * width + kl];
            for i in k + 1..=last {
                let m = band[i * width + k + kl - i] / piv;
                lower[k * kl + (i - k - 1)] = m;
                band[i * width + k + kl - i] = 0.0;
                if m == 0.0 {
                    continue;
                }
                let (top, bottom) = band.split_at_mut(i * width);
                let src = &top[k * width + kl + 1..k * width + kl + 1 + (hi - k)];
                let dst = &mut bottom[k + 1 + kl - i..k + 1 + kl - i + (hi - k)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= m * s;
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            band,
            lower,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.lower[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku + kl).min(n - 1);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= row[j + kl - i] * b[j];
            }
            b[i] = s / row[kl];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve_dense, Matrix};
    use crate::rng::spawn_stream;

    #[test]
    fn matches_dense_solve() {
        let (n, kl, ku) = (30, 3, 2);
        let mut r = spawn_stream(8, 0);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // small diagonal forces pivoting
                a[(i, j)] = if i == j { 0.01 * r.normal() } else { r.normal() };
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let lu = BandLu::factor(n, kl, ku, |i| {
            let row: Vec<(usize, f64)> = (0..n).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])).collect();
            row
        })
        .unwrap();
        let mut x = b.clone();
        lu.solve(&mut x);
        let y = solve_dense(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-9 * q.abs().max(1.0), "{p} {q}");
        }
    }

    #[test]
    fn singular_is_reported() {
        let e = BandLu::factor(3, 1, 1, |i| if i == 1 { vec![] } else { vec![(i, 1.0)] });
        assert!(matches!(e, Err(Error::Singular(1))));
    }
}
