//! Adam training loop over independent training-set and reference-set batches.

use super::loss::{Executor, LossProblem, LossTerms, Terms};
use super::mlp::Mlp;
use crate::model::SdeModel;
use crate::prelude::*;
use crate::rng::{derive_seed, purpose, spawn_stream};
use crate::{Complex64, Error, Kind};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_x: usize,
    pub batch_y: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub kind: Kind,
    #[cfg_attr(feature = "serde", serde(with = "complex_pair"))]
    pub eigenvalue: Complex64,
    /// Step on the residual and data groups in turn instead of their sum.
    pub alternate: bool,
    /// Skip the operator residual entirely (plain regression on the targets).
    pub data_only: bool,
    /// Also record the loss over every point at the end of each epoch.
    pub track_full_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_x: 256,
            batch_y: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            kind: Kind::Backward,
            eigenvalue: Complex64::new(0.0, 0.0),
            alternate: false,
            data_only: false,
            track_full_loss: false,
        }
    }
}

#[cfg(feature = "serde")]
mod complex_pair {
    use crate::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [c.re, c.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

impl TrainConfig {
    pub fn validate(&self, n_x: usize, n_y: usize) -> crate::Result<()> {
        if self.batch_x == 0 || self.batch_x > n_x {
            return Err(Error::Config(format!(
                "training batch size {} must be in 1..={n_x}",
                self.batch_x
            )));
        }
        if !self.data_only && (self.batch_y == 0 || self.batch_y > n_y) {
            return Err(Error::Config(format!(
                "reference batch size {} must be in 1..={n_y}",
                self.batch_y
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam moments must lie in [0, 1) with eps > 0".into()));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, n_x: usize) -> usize {
        n_x.div_ceil(self.batch_x)
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Loss record for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub epoch: usize,
    /// Iterations completed so far.
    pub iteration: usize,
    /// Mean of the batch loss terms over the epoch.
    pub batch: LossTerms,
    /// Loss terms over all points, when tracked.
    pub full: Option<LossTerms>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Mlp,
    pub history: Vec<HistoryEntry>,
}

/// Training stopped early; the history up to the failure is kept.
#[derive(Debug, Clone)]
pub struct TrainError {
    pub error: Error,
    pub history: Vec<HistoryEntry>,
}

impl From<Error> for TrainError {
    fn from(error: Error) -> Self {
        Self {
            error,
            history: Vec::new(),
        }
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} (after {} logged epochs)", self.error, self.history.len())
    }
}

/// Trains `net` against targets on `x` and the operator residual on `y`.
#[allow(clippy::too_many_arguments)]
pub fn train<M: SdeModel + Sync + ?Sized, E: Executor>(
    exec: &E,
    model: &M,
    net: Mlp,
    cfg: &TrainConfig,
    x: &[Vec<f64>],
    targets: &[Complex64],
    y: &[Vec<f64>],
) -> Result<Trained, TrainError> {
    let problem = LossProblem::new(model, cfg.kind, cfg.eigenvalue, &net, x, targets, y)?;
    train_problem(exec, &problem, net, cfg)
}

/// As [`train`], reusing precomputed operator coefficients.
pub fn train_problem<E: Executor>(
    exec: &E,
    problem: &LossProblem,
    mut net: Mlp,
    cfg: &TrainConfig,
) -> Result<Trained, TrainError> {
    cfg.validate(problem.n_x(), problem.n_y())?;
    net.validate()?;
    let mut rng = spawn_stream(derive_seed(cfg.seed, purpose::PINN_BATCH), 0);
    let mut adam = Adam::new(net.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut xs: Vec<usize> = (0..problem.n_x()).collect();
    let mut ys: Vec<usize> = (0..problem.n_y()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut initial: Option<f64> = None;
    let mut iteration = 0;
    let per_epoch = cfg.iterations_per_epoch(problem.n_x());
    for epoch in 0..cfg.epochs {
        xs.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        for chunk in xs.chunks(cfg.batch_x) {
            let y_batch: &[usize] = if cfg.data_only {
                &[]
            } else {
                ys.partial_shuffle(&mut rng, cfg.batch_y).0
            };
            let terms = if cfg.data_only {
                Terms::Data
            } else if cfg.alternate {
                if iteration % 2 == 0 {
                    Terms::Residual
                } else {
                    Terms::Data
                }
            } else {
                Terms::Both
            };
            let (t, g) = problem.evaluate(exec, &net, chunk, y_batch, terms, true);
            let total = if cfg.data_only { t.data() } else { t.total() };
            if !total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError {
                    error: Error::NonFiniteLoss(iteration),
                    history,
                });
            }
            let init = *initial.get_or_insert(total);
            if init > 0.0 && total > 1e6 * init {
                return Err(TrainError {
                    error: Error::TrainingDiverged {
                        iteration,
                        loss: total,
                        initial: init,
                    },
                    history,
                });
            }
            let w = 1.0 / per_epoch as f64;
            acc.residual_re += w * t.residual_re;
            acc.residual_im += w * t.residual_im;
            acc.data_re += w * t.data_re;
            acc.data_im += w * t.data_im;
            adam.step(&mut net.params, &g);
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(TrainError {
                    error: Error::NonFinite("network parameters"),
                    history,
                });
            }
            iteration += 1;
        }
        history.push(HistoryEntry {
            epoch,
            iteration,
            batch: acc,
            full: cfg.track_full_loss.then(|| problem.full_loss(exec, &net)),
        });
    }
    Ok(Trained { net, history })
}

/// Complex field `N_R + i N_I` at each query point.
pub fn evaluate_grid(net: &Mlp, points: &[Vec<f64>]) -> Vec<Complex64> {
    points
        .iter()
        .map(|p| {
            let v = net.eval(p);
            Complex64::new(v[0], v[1])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, StuartLandau2D};
    use crate::pinn::Serial;
    use crate::rng::spawn_stream;

    fn setup() -> (Model, Vec<Vec<f64>>, Vec<Complex64>, Vec<Vec<f64>>) {
        let model = Model::StuartLandau(StuartLandau2D { omega: 2.0, d: 0.1 });
        let mut r = spawn_stream(77, 0);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![r.uniform_in(-1.5, 1.5), r.uniform_in(-1.5, 1.5)]).collect();
        // x - i y approximates the SL backward eigenfunction near the cycle
        let t: Vec<Complex64> = x.iter().map(|p| Complex64::new(p[0], -p[1])).collect();
        let y: Vec<Vec<f64>> = (0..64).map(|_| vec![r.uniform_in(-2.0, 2.0), r.uniform_in(-2.0, 2.0)]).collect();
        (model, x, t, y)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_x: 16,
            batch_y: 32,
            learning_rate: 5e-3,
            eigenvalue: Complex64::new(-0.1, 2.0),
            seed: 3,
            ..Default::default()
        }
    }

    fn net() -> Mlp {
        Mlp::init(vec![2, 8, 8, 2], vec![-2.0; 2], vec![2.0; 2], 5).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (m, x, t, y) = setup();
        let n0 = net();
        let c = TrainConfig {
            learning_rate: 0.0,
            ..cfg()
        };
        let out = train(&Serial, &m, n0.clone(), &c, &x, &t, &y).unwrap();
        assert_eq!(out.net.params, n0.params);
        assert_eq!(out.history.len(), 5);
        assert_eq!(out.history[4].iteration, 15);
    }

    #[test]
    fn identical_seeds_give_identical_history() {
        let (m, x, t, y) = setup();
        let a = train(&Serial, &m, net(), &cfg(), &x, &t, &y).unwrap();
        let b = train(&Serial, &m, net(), &cfg(), &x, &t, &y).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net.params, b.net.params);
        let c = train(&Serial, &m, net(), &TrainConfig { seed: 4, ..cfg() }, &x, &t, &y).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn training_lowers_loss() {
        let (m, x, t, y) = setup();
        let c = TrainConfig {
            epochs: 40,
            track_full_loss: true,
            ..cfg()
        };
        let out = train(&Serial, &m, net(), &c, &x, &t, &y).unwrap();
        let first = out.history[0].full.unwrap().total();
        let last = out.history.last().unwrap().full.unwrap().total();
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn alternating_mode_runs() {
        let (m, x, t, y) = setup();
        let c = TrainConfig { alternate: true, ..cfg() };
        assert!(train(&Serial, &m, net(), &c, &x, &t, &y).is_ok());
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let (m, x, t, y) = setup();
        let c = TrainConfig { batch_x: 41, ..cfg() };
        let e = train(&Serial, &m, net(), &c, &x, &t, &y).unwrap_err();
        assert!(matches!(e.error, Error::Config(_)));
    }

    #[test]
    fn divergence_aborts_with_history() {
        let (m, x, t, y) = setup();
        let c = TrainConfig {
            learning_rate: 1e3,
            epochs: 50,
            ..cfg()
        };
        let e = train(&Serial, &m, net(), &c, &x, &t, &y).unwrap_err();
        assert!(
            matches!(e.error, Error::TrainingDiverged { .. } | Error::NonFiniteLoss(_)),
            "{e}"
        );
    }

    #[test]
    fn zero_network_field_is_zero() {
        let n = Mlp::zeros(vec![2, 4, 2], vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let f = evaluate_grid(&n, &[vec![0.3, 0.1], vec![5.0, -7.0]]);
        assert!(f.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }
}
