//! Finite-difference discretization of the forward and backward operators on
//! a cell-centered grid, for one- and two-dimensional models.

use crate::collocation::BoxGrid;
use crate::model::SdeModel;
use crate::prelude::*;
use crate::{Error, Kind, Result};

mod arnoldi;
mod band;
mod evolve;

pub use arnoldi::{leading_eigs, leading_eigs_with, stationary_vector, ArnoldiOptions, FdEigen};
pub use band::BandLu;
pub use evolve::{evolve_and_fit, EvolveConfig, EvolveResult};

pub const MIN_POINTS: usize = 16;

/// Cell-centered grid with `n` cells per dimension; dimension 0 varies fastest.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FdGrid {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub n: usize,
}

impl FdGrid {
    pub fn new(low: Vec<f64>, high: Vec<f64>, n: usize) -> Result<Self> {
        let g = Self { low, high, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_POINTS {
            return Err(Error::GridTooCoarse(self.n));
        }
        let d = self.low.len();
        if !(1..=2).contains(&d) {
            return Err(Error::Config(format!("finite differences support 1 or 2 dimensions, got {d}")));
        }
        if self.high.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.high.len(),
                context: "grid upper bounds",
            });
        }
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config("grid bounds must be finite and increasing".into()));
        }
        Ok(())
    }

    pub fn from_box_grid(g: &BoxGrid) -> Result<Self> {
        Self::new(g.low.clone(), g.high.clone(), g.n_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, k: usize) -> f64 {
        (self.high[k] - self.low[k]) / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.h(k)).product()
    }

    pub fn multi_index(&self, p: usize) -> [usize; 2] {
        [p % self.n, p / self.n]
    }

    pub fn center(&self, p: usize) -> Vec<f64> {
        let idx = self.multi_index(p);
        (0..self.dim())
            .map(|k| self.low[k] + (idx[k] as f64 + 0.5) * self.h(k))
            .collect()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|p| self.center(p)).collect()
    }

    fn stride(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            self.n
        }
    }

    /// Neighbor offset by `step` along dimension `k`, if inside the grid.
    fn shift(&self, p: usize, k: usize, step: isize) -> Option<usize> {
        let i = self.multi_index(p)[k] as isize + step;
        (0..self.n as isize).contains(&i).then(|| (p as isize + step * self.stride(k) as isize) as usize)
    }

    /// Neighbor with mirror ghosts: stepping out of the grid stays in place.
    fn shift_clamped(&self, p: usize, k: usize, step: isize) -> usize {
        self.shift(p, k, step).unwrap_or(p)
    }

    /// Lower and upper bandwidth of the operator matrix.
    pub fn bandwidth(&self) -> usize {
        if self.dim() == 1 {
            1
        } else {
            self.n + 1
        }
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Discretized operator acting on cell values.
#[derive(Debug, Clone)]
pub struct FdOperator {
    pub grid: FdGrid,
    pub kind: Kind,
    pub matrix: Csr,
}

impl FdOperator {
    pub fn len(&self) -> usize {
        self.matrix.n
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n == 0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matrix.mul_vec(x, &mut y);
        y
    }

    /// Factors `alpha I + beta A`.
    pub fn factor_shifted(&self, alpha: f64, beta: f64) -> Result<BandLu> {
        let bw = self.grid.bandwidth();
        BandLu::factor(self.len(), bw, bw, |i| {
            self.matrix
                .row(i)
                .map(move |(j, v)| (j, beta * v + if i == j { alpha } else { 0.0 }))
                .chain(core::iter::once((i, 0.0)))
        })
    }
}

/// Central differences on a cell-centered grid. The forward operator is
/// written in divergence form with zero values outside the grid; the backward
/// operator reflects values across the boundary, so constants are annihilated.
pub fn assemble<M: SdeModel + ?Sized>(model: &M, grid: &FdGrid, kind: Kind) -> Result<FdOperator> {
    grid.validate()?;
    let d = grid.dim();
    if model.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: model.dim(),
            context: "model dimension vs finite-difference grid",
        });
    }
    let n = grid.len();
    let mut f = vec![vec![0.0; d]; n];
    let mut g = vec![vec![0.0; d * d]; n];
    for p in 0..n {
        let x = grid.center(p);
        model.drift(&x, &mut f[p]);
        model.diffusion_product(&x, &mut g[p]);
        if f[p].iter().chain(&g[p]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator coefficients on the grid"));
        }
    }
    let h: Vec<f64> = (0..d).map(|k| grid.h(k)).collect();
    let mut rows = Vec::with_capacity(n);
    for p in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
        for k in 0..d {
            let (h1, h2) = (1.0 / (2.0 * h[k]), 1.0 / (h[k] * h[k]));
            let gkk = |q: usize| g[q][k * d + k];
            match kind {
                Kind::Forward => {
                    row.push((p, -gkk(p) * h2));
                    for s in [-1isize, 1] {
                        if let Some(q) = grid.shift(p, k, s) {
                            row.push((q, -(s as f64) * f[q][k] * h1 + 0.5 * gkk(q) * h2));
                        }
                    }
                }
                Kind::Backward => {
                    row.push((p, -gkk(p) * h2));
                    for s in [-1isize, 1] {
                        let q = grid.shift_clamped(p, k, s);
                        row.push((q, (s as f64) * f[p][k] * h1 + 0.5 * gkk(p) * h2));
                    }
                }
            }
        }
        if d == 2 {
            let c = 1.0 / (4.0 * h[0] * h[1]);
            for s0 in [-1isize, 1] {
                for s1 in [-1isize, 1] {
                    let sign = (s0 * s1) as f64;
                    match kind {
                        Kind::Forward => {
                            if let Some(q) = grid.shift(p, 0, s0).and_then(|q| grid.shift(q, 1, s1)) {
                                row.push((q, sign * g[q][1] * c));
                            }
                        }
                        Kind::Backward => {
                            let q = grid.shift_clamped(grid.shift_clamped(p, 0, s0), 1, s1);
                            row.push((q, sign * g[p][1] * c));
                        }
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(FdOperator {
        grid: grid.clone(),
        kind,
        matrix: Csr::from_rows(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, OrnsteinUhlenbeck, StuartLandau2D};

    fn sl() -> Model {
        Model::StuartLandau(StuartLandau2D { omega: 2.0, d: 0.1 })
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert_eq!(FdGrid::new(vec![-1.0; 2], vec![1.0; 2], 15), Err(Error::GridTooCoarse(15)));
    }

    #[test]
    fn backward_annihilates_constants() {
        let grid = FdGrid::new(vec![-2.0; 2], vec![2.0; 2], 40).unwrap();
        let op = assemble(&sl(), &grid, Kind::Backward).unwrap();
        let y = op.apply(&vec![1.0; grid.len()]);
        assert!(y.iter().all(|v| v.abs() < 1e-12), "{:e}", y.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }

    #[test]
    fn forward_conserves_mass_in_interior() {
        let grid = FdGrid::new(vec![-2.0; 2], vec![2.0; 2], 32).unwrap();
        let op = assemble(&sl(), &grid, Kind::Forward).unwrap();
        let n = grid.len();
        let mut sums = vec![0.0; n];
        for i in 0..n {
            for (j, v) in op.matrix.row(i) {
                sums[j] += v;
            }
        }
        let scale = op.matrix.max_abs_row_sum();
        for (p, s) in sums.iter().enumerate() {
            let [i, j] = grid.multi_index(p);
            if (2..30).contains(&i) && (2..30).contains(&j) {
                assert!(s.abs() < 1e-12 * scale, "{s}");
            }
        }
    }

    fn residual_norm(n: usize) -> f64 {
        let m = StuartLandau2D { omega: 2.0, d: 0.1 };
        let grid = FdGrid::new(vec![-2.0; 2], vec![2.0; 2], n).unwrap();
        let op = assemble(&m, &grid, Kind::Forward).unwrap();
        let p0: Vec<f64> = grid.centers().iter().map(|c| m.stationary_density(c[0], c[1])).collect();
        let r = op.apply(&p0);
        (r.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt()
    }

    #[test]
    fn stationary_density_residual_is_second_order() {
        let ratio = residual_norm(64) / residual_norm(128);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn forward_and_backward_are_adjoint_in_the_interior() {
        let grid = FdGrid::new(vec![-2.0; 2], vec![2.0; 2], 24).unwrap();
        let fwd = assemble(&sl(), &grid, Kind::Forward).unwrap();
        let bwd = assemble(&sl(), &grid, Kind::Backward).unwrap();
        let scale = fwd.matrix.max_abs_row_sum();
        for p in 0..grid.len() {
            let [i, j] = grid.multi_index(p);
            if !((2..22).contains(&i) && (2..22).contains(&j)) {
                continue;
            }
            for q in 0..grid.len() {
                let e = (fwd.matrix.get(p, q) - bwd.matrix.get(q, p)).abs();
                assert!(e < 1e-10 * scale, "({p}, {q}) {e}");
            }
        }
    }

    #[test]
    fn one_dimensional_ou_assembles() {
        let ou = Model::OrnsteinUhlenbeck(OrnsteinUhlenbeck::new(vec![vec![-1.0]], vec![vec![1.0]]).unwrap());
        let grid = FdGrid::new(vec![-6.0], vec![6.0], 64).unwrap();
        let op = assemble(&ou, &grid, Kind::Backward).unwrap();
        // backward operator on u = x is -x away from the boundary
        let u: Vec<f64> = grid.centers().iter().map(|c| c[0]).collect();
        let y = op.apply(&u);
        for p in 1..63 {
            assert!((y[p] + u[p]).abs() < 1e-12);
        }
    }
}
