//! Split real/imaginary loss over an operator residual batch and a data batch.

use super::mlp::{Mlp, OutputAdjoint};
use crate::model::SdeModel;
use crate::operator::{backward_coefficients, forward_coefficients, OperatorCoefficients};
use crate::prelude::*;
use crate::{Complex64, Error, Kind, Result};

/// Points per work chunk. Chunk sums are reduced in index order so results do
/// not depend on how chunks are scheduled.
pub const CHUNK: usize = 64;

/// Runs independent chunk jobs and returns their results in index order.
pub trait Executor {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs chunks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// The four mean-squared loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub residual_re: f64,
    pub residual_im: f64,
    pub data_re: f64,
    pub data_im: f64,
}

impl LossTerms {
    pub fn residual(&self) -> f64 {
        self.residual_re + self.residual_im
    }

    pub fn data(&self) -> f64 {
        self.data_re + self.data_im
    }

    pub fn total(&self) -> f64 {
        self.residual() + self.data()
    }

    fn add(&mut self, o: &LossTerms) {
        self.residual_re += o.residual_re;
        self.residual_im += o.residual_im;
        self.data_re += o.data_re;
        self.data_im += o.data_im;
    }

    fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Which loss groups enter a gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terms {
    Both,
    Residual,
    Data,
}

impl Terms {
    fn residual(self) -> bool {
        self != Terms::Data
    }

    fn data(self) -> bool {
        self != Terms::Residual
    }
}

/// Training data with operator coefficients precomputed in the network's
/// standardized coordinates.
#[derive(Debug, Clone)]
pub struct LossProblem {
    pub kind: Kind,
    pub eigenvalue: Complex64,
    /// Standardized training points.
    x: Vec<Vec<f64>>,
    targets: Vec<Complex64>,
    /// Standardized reference points.
    y: Vec<Vec<f64>>,
    coeffs: Vec<OperatorCoefficients>,
}

impl LossProblem {
    pub fn new<M: SdeModel + ?Sized>(
        model: &M,
        kind: Kind,
        eigenvalue: Complex64,
        net: &Mlp,
        x: &[Vec<f64>],
        targets: &[Complex64],
        y: &[Vec<f64>],
    ) -> Result<Self> {
        net.validate()?;
        let n = net.input_dim();
        if model.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: model.dim(),
                context: "model dimension vs network input",
            });
        }
        if targets.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: targets.len(),
                context: "training targets",
            });
        }
        if !eigenvalue.re.is_finite() || !eigenvalue.im.is_finite() {
            return Err(Error::NonFinite("eigenvalue"));
        }
        if targets.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
            return Err(Error::NonFinite("training targets"));
        }
        for p in x.iter().chain(y) {
            if p.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: p.len(),
                    context: "collocation point",
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("collocation point"));
            }
        }
        let s = net.input_scale();
        let coeffs = y
            .iter()
            .map(|p| {
                let mut c = match kind {
                    Kind::Forward => forward_coefficients(model, p),
                    Kind::Backward => backward_coefficients(model, p),
                };
                for k in 0..n {
                    c.c1[k] /= s[k];
                    for l in 0..n {
                        c.c2[k * n + l] /= s[k] * s[l];
                    }
                }
                c
            })
            .collect();
        Ok(Self {
            kind,
            eigenvalue,
            x: x.iter().map(|p| net.standardize(p)).collect(),
            targets: targets.to_vec(),
            y: y.iter().map(|p| net.standardize(p)).collect(),
            coeffs,
        })
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_y(&self) -> usize {
        self.y.len()
    }

    /// Residual pair `(L N_R - mu N_R + w N_I, L N_I - mu N_I - w N_R)` at
    /// reference point `j`.
    pub fn residual_at(&self, net: &Mlp, j: usize) -> [f64; 2] {
        let tape = net.forward(&self.y[j], true);
        self.residual_from(net.input_dim(), &tape.out, &tape.gout, &tape.hout, j)
    }

    fn residual_from(&self, n: usize, v: &[f64; 2], g: &[f64], h: &[f64], j: usize) -> [f64; 2] {
        let c = &self.coeffs[j];
        let nn = n * n;
        let (mu, w) = (self.eigenvalue.re, self.eigenvalue.im);
        let l_re = c.apply(v[0], &g[..n], &h[..nn]);
        let l_im = c.apply(v[1], &g[n..2 * n], &h[nn..2 * nn]);
        [l_re - mu * v[0] + w * v[1], l_im - mu * v[1] - w * v[0]]
    }

    /// Root-mean-square residual modulus over all reference points.
    pub fn mean_residual(&self, net: &Mlp) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        let s: f64 = (0..self.y.len())
            .map(|j| {
                let r = self.residual_at(net, j);
                r[0] * r[0] + r[1] * r[1]
            })
            .sum();
        (s / self.y.len() as f64).sqrt()
    }

    /// Loss terms over the given batches, optionally with the parameter
    /// gradient of the selected terms.
    pub fn evaluate<E: Executor>(
        &self,
        exec: &E,
        net: &Mlp,
        x_batch: &[usize],
        y_batch: &[usize],
        terms: Terms,
        with_grad: bool,
    ) -> (LossTerms, Vec<f64>) {
        let np = net.params.len();
        let n = net.input_dim();
        let nn = n * n;
        let (mu, w) = (self.eigenvalue.re, self.eigenvalue.im);
        let wy = if y_batch.is_empty() { 0.0 } else { 1.0 / y_batch.len() as f64 };
        let wx = if x_batch.is_empty() { 0.0 } else { 1.0 / x_batch.len() as f64 };
        let y_chunks = y_batch.len().div_ceil(CHUNK);
        let x_chunks = x_batch.len().div_ceil(CHUNK);
        let parts = exec.map_chunks(y_chunks + x_chunks, |c| {
            let mut t = LossTerms::default();
            let mut grad = if with_grad { vec![0.0; np] } else { Vec::new() };
            if c < y_chunks {
                let lo = c * CHUNK;
                for &j in &y_batch[lo..(lo + CHUNK).min(y_batch.len())] {
                    let tape = net.forward(&self.y[j], true);
                    let r = self.residual_from(n, &tape.out, &tape.gout, &tape.hout, j);
                    t.residual_re += wy * r[0] * r[0];
                    t.residual_im += wy * r[1] * r[1];
                    if with_grad && terms.residual() {
                        let cf = &self.coeffs[j];
                        let (a, b) = (2.0 * wy * r[0], 2.0 * wy * r[1]);
                        let mut adj = OutputAdjoint {
                            value: [a * (cf.c0 - mu) - b * w, a * w + b * (cf.c0 - mu)],
                            grad: vec![0.0; 2 * n],
                            hess: vec![0.0; 2 * nn],
                        };
                        for k in 0..n {
                            adj.grad[k] = a * cf.c1[k];
                            adj.grad[n + k] = b * cf.c1[k];
                        }
                        for m in 0..nn {
                            adj.hess[m] = a * cf.c2[m];
                            adj.hess[nn + m] = b * cf.c2[m];
                        }
                        net.backward(&tape, &adj, &mut grad);
                    }
                }
            } else {
                let lo = (c - y_chunks) * CHUNK;
                for &i in &x_batch[lo..(lo + CHUNK).min(x_batch.len())] {
                    let tape = net.forward(&self.x[i], false);
                    let d = [tape.out[0] - self.targets[i].re, tape.out[1] - self.targets[i].im];
                    t.data_re += wx * d[0] * d[0];
                    t.data_im += wx * d[1] * d[1];
                    if with_grad && terms.data() {
                        let adj = OutputAdjoint {
                            value: [2.0 * wx * d[0], 2.0 * wx * d[1]],
                            grad: Vec::new(),
                            hess: Vec::new(),
                        };
                        net.backward(&tape, &adj, &mut grad);
                    }
                }
            }
            (t, grad)
        });
        let mut total = LossTerms::default();
        let mut grad = vec![0.0; if with_grad { np } else { 0 }];
        for (t, g) in &parts {
            total.add(t);
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        (total, grad)
    }

    /// Full loss and gradient over the given batches; fails on a non-finite loss.
    pub fn loss<E: Executor>(
        &self,
        exec: &E,
        net: &Mlp,
        x_batch: &[usize],
        y_batch: &[usize],
        batch_index: usize,
    ) -> Result<(LossTerms, Vec<f64>)> {
        let (t, g) = self.evaluate(exec, net, x_batch, y_batch, Terms::Both, true);
        if !t.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(batch_index));
        }
        Ok((t, g))
    }

    /// Loss terms over every point of both sets.
    pub fn full_loss<E: Executor>(&self, exec: &E, net: &Mlp) -> LossTerms {
        let xs: Vec<usize> = (0..self.n_x()).collect();
        let ys: Vec<usize> = (0..self.n_y()).collect();
        self.evaluate(exec, net, &xs, &ys, Terms::Both, false).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, OrnsteinUhlenbeck, StuartLandau2D};
    use crate::rng::spawn_stream;

    fn sl() -> Model {
        Model::StuartLandau(StuartLandau2D { omega: 2.0, d: 0.1 })
    }

    fn points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = spawn_stream(seed, 0);
        (0..count).map(|_| (0..n).map(|_| r.uniform_in(-1.8, 1.8)).collect()).collect()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn constant_network_backward() {
        let c = 0.8;
        let lambda = Complex64::new(-0.1, 2.0);
        let mut net = Mlp::zeros(vec![2, 6, 6, 2], vec![-2.0; 2], vec![2.0; 2]).unwrap();
        let len = net.params.len();
        net.params[len - 2] = c;
        let x = points(2, 5, 1);
        let targets: Vec<Complex64> = (0..5).map(|i| Complex64::new(0.1 * i as f64, -0.3)).collect();
        let y = points(2, 7, 2);
        let p = LossProblem::new(&sl(), Kind::Backward, lambda, &net, &x, &targets, &y).unwrap();
        let (t, _) = p.evaluate(&Serial, &net, &all(5), &all(7), Terms::Both, false);
        assert!((t.residual_re - 0.01 * c * c).abs() < 1e-15);
        assert!((t.residual_im - 4.0 * c * c).abs() < 1e-13);
        let dre: f64 = targets.iter().map(|u| (c - u.re).powi(2)).sum::<f64>() / 5.0;
        let dim: f64 = targets.iter().map(|u| u.im.powi(2)).sum::<f64>() / 5.0;
        assert!((t.data_re - dre).abs() < 1e-15 && (t.data_im - dim).abs() < 1e-15);
    }

    /// Network representing `Re/Im` of `w^T x` through small-weight tanh units.
    fn linear_net(wr: &[f64], wi: &[f64], eps: f64) -> Mlp {
        let n = wr.len();
        // hidden unit k carries x_k; the box is [-1, 1]^n so z = x
        let mut net = Mlp::zeros(vec![n, n, 2], vec![-1.0; n], vec![1.0; n]).unwrap();
        for k in 0..n {
            net.params[k * n + k] = eps;
        }
        let off = n * n + n;
        for k in 0..n {
            net.params[off + k] = wr[k] / eps;
            net.params[off + n + k] = wi[k] / eps;
        }
        net
    }

    fn ou_case() -> (Model, Complex64, Mlp) {
        ou_case_eps(1e-4)
    }

    fn ou_case_eps(eps: f64) -> (Model, Complex64, Mlp) {
        // A = [[-1, 2], [-2, -1]]: left eigenvector w = (1, i), A^T w = (-1 - 2i) w
        let ou = OrnsteinUhlenbeck::spiral(-1.0, 2.0, 0.5);
        (
            Model::OrnsteinUhlenbeck(ou),
            Complex64::new(-1.0, -2.0),
            linear_net(&[1.0, 0.0], &[0.0, 1.0], eps),
        )
    }

    #[test]
    fn ou_linear_eigenfunction_has_small_residual() {
        let (m, lambda, net) = ou_case();
        let y = points(2, 50, 3).into_iter().map(|p| p.iter().map(|v| v / 2.0).collect()).collect::<Vec<_>>();
        let p = LossProblem::new(&m, Kind::Backward, lambda, &net, &[], &[], &y).unwrap();
        for j in 0..y.len() {
            let r = p.residual_at(&net, j);
            assert!(r[0].abs() < 1e-6 && r[1].abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn ou_eigenfunction_is_stationary_point() {
        // parameter sensitivity of the tanh curvature scales like eps
        let (m, lambda, net) = ou_case_eps(1e-6);
        let x: Vec<Vec<f64>> = points(2, 20, 4).into_iter().map(|p| p.iter().map(|v| v / 2.0).collect()).collect();
        let targets: Vec<Complex64> = x
            .iter()
            .map(|p| {
                let v = net.eval(p);
                Complex64::new(v[0], v[1])
            })
            .collect();
        let y: Vec<Vec<f64>> = points(2, 30, 5).into_iter().map(|p| p.iter().map(|v| v / 2.0).collect()).collect();
        let p = LossProblem::new(&m, Kind::Backward, lambda, &net, &x, &targets, &y).unwrap();
        let (_, g) = p.loss(&Serial, &net, &all(20), &all(30), 0).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-5, "{norm}");
    }

    fn gradient_fd(kind: Kind) {
        let net = Mlp::init(vec![2, 8, 8, 2], vec![-2.0; 2], vec![2.0; 2], 9).unwrap();
        let x = points(2, 12, 6);
        let targets: Vec<Complex64> = (0..12).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos())).collect();
        let y = points(2, 16, 7);
        let p = LossProblem::new(&sl(), kind, Complex64::new(-0.1, 2.0), &net, &x, &targets, &y).unwrap();
        let (xb, yb) = (all(12), all(16));
        let (_, g) = p.loss(&Serial, &net, &xb, &yb, 0).unwrap();
        let gscale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..net.params.len() {
            let mut np = net.clone();
            np.params[i] += h;
            let fp = p.evaluate(&Serial, &np, &xb, &yb, Terms::Both, false).0.total();
            np.params[i] -= 2.0 * h;
            let fm = p.evaluate(&Serial, &np, &xb, &yb, Terms::Both, false).0.total();
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / gscale);
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn parameter_gradient_matches_finite_differences_backward() {
        gradient_fd(Kind::Backward);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences_forward() {
        gradient_fd(Kind::Forward);
    }

    #[test]
    fn swapping_outputs_by_minus_i_leaves_loss_unchanged() {
        let net = Mlp::init(vec![2, 8, 8, 2], vec![-2.0; 2], vec![2.0; 2], 11).unwrap();
        let mut swapped = net.clone();
        // new outputs (N_I, -N_R): rows of the last weight matrix and biases
        let h = 8;
        let off = Mlp::param_count(&[2, 8, 8]);
        for k in 0..h {
            let (r, i) = (net.params[off + k], net.params[off + h + k]);
            swapped.params[off + k] = i;
            swapped.params[off + h + k] = -r;
        }
        let b = off + 2 * h;
        swapped.params[b] = net.params[b + 1];
        swapped.params[b + 1] = -net.params[b];
        let x = points(2, 9, 12);
        let targets: Vec<Complex64> = (0..9).map(|i| Complex64::new(0.2 * i as f64, 1.0 - 0.1 * i as f64)).collect();
        let rotated: Vec<Complex64> = targets.iter().map(|u| -Complex64::i() * u).collect();
        let y = points(2, 11, 13);
        let lambda = Complex64::new(-0.1, 2.0);
        let p1 = LossProblem::new(&sl(), Kind::Backward, lambda, &net, &x, &targets, &y).unwrap();
        let p2 = LossProblem::new(&sl(), Kind::Backward, lambda, &swapped, &x, &rotated, &y).unwrap();
        let a = p1.evaluate(&Serial, &net, &all(9), &all(11), Terms::Both, false).0.total();
        let b = p2.evaluate(&Serial, &swapped, &all(9), &all(11), Terms::Both, false).0.total();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let net = Mlp::init(vec![2, 4, 2], vec![-2.0; 2], vec![2.0; 2], 1).unwrap();
        let x = points(2, 3, 1);
        let mut targets = vec![Complex64::new(0.0, 0.0); 3];
        let p = LossProblem::new(&sl(), Kind::Backward, Complex64::new(-0.1, 2.0), &net, &x, &targets, &[]);
        assert!(p.is_ok());
        let mut p = p.unwrap();
        targets[1] = Complex64::new(1e300, 0.0);
        p.targets = targets;
        let mut big = net.clone();
        let len = big.params.len();
        big.params[len - 2] = 1e200;
        assert_eq!(p.loss(&Serial, &big, &[0, 1, 2], &[], 17).unwrap_err(), Error::NonFiniteLoss(17));
    }
}
