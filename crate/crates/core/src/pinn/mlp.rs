//! Two-output tanh network with exact input derivatives up to second order
//! and reverse accumulation through the derivative recursion.

use crate::prelude::*;
use crate::rng::{derive_seed, purpose, spawn_stream};
use crate::{Error, Result};

/// Fully connected network `n -> hidden... -> 2` with tanh hidden units and a
/// linear output layer. Inputs are first mapped affinely from the box
/// `[low, high]` onto `[-1, 1]^n`.
///
/// Parameters are stored layer by layer: the `out x in` weight matrix
/// (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Values, input gradients and input Hessians (row-major) of both outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: [f64; 2],
    pub grad: [Vec<f64>; 2],
    pub hess: [Vec<f64>; 2],
}

/// Forward record of one evaluation. Layer `l` input activations and their
/// derivatives with respect to the standardized input, plus tanh derivatives
/// and pre-activation derivatives of each hidden layer.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tape {
    second_order: bool,
    a: Vec<Vec<f64>>,
    ga: Vec<Vec<f64>>,
    ha: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    d3: Vec<Vec<f64>>,
    gz: Vec<Vec<f64>>,
    hz: Vec<Vec<f64>>,
    /// Network output and its standardized-input derivatives.
    pub out: [f64; 2],
    pub gout: Vec<f64>,
    pub hout: Vec<f64>,
}

/// Adjoints of the outputs with respect to some scalar, in standardized
/// coordinates: `value[o]`, `grad[o * n + k]`, `hess[(o * n + k) * n + l]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OutputAdjoint {
    pub value: [f64; 2],
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Mlp {
    /// Parameter count for the given widths.
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Network with every parameter zero.
    pub fn zeros(widths: Vec<usize>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let m = Self {
            params: vec![0.0; Self::param_count(&widths)],
            widths,
            low,
            high,
        };
        m.validate()?;
        Ok(m)
    }

    /// Fan-in scaled uniform initialization, `U(-sqrt(3/fan_in), sqrt(3/fan_in))`
    /// weights and zero biases.
    pub fn init(widths: Vec<usize>, low: Vec<f64>, high: Vec<f64>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(widths, low, high)?;
        let mut rng = spawn_stream(derive_seed(seed, purpose::PINN_INIT), 0);
        let mut off = 0;
        for w in m.widths.clone().windows(2) {
            let bound = (3.0 / w[0] as f64).sqrt();
            for p in &mut m.params[off..off + w[0] * w[1]] {
                *p = rng.uniform_in(-bound, bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("network needs at least an input and an output layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.widths[self.widths.len() - 1] != 2 {
            return Err(Error::Config("network output width must be 2".into()));
        }
        let n = self.widths[0];
        if self.low.len() != n || self.high.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.low.len(),
                context: "network input bounds",
            });
        }
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("network input bounds must be increasing".into()));
        }
        if self.params.len() != Self::param_count(&self.widths) {
            return Err(Error::Dimension {
                expected: Self::param_count(&self.widths),
                got: self.params.len(),
                context: "network parameters",
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Half-widths of the standardization box, `dx_k / dz_k`.
    pub fn input_scale(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| (2.0 * v - l - h) / (h - l))
            .collect()
    }

    /// Offset of layer `l`'s weights in `params`.
    fn offset(&self, l: usize) -> usize {
        Self::param_count(&self.widths[..=l])
    }

    pub(crate) fn forward(&self, z: &[f64], second_order: bool) -> Tape {
        let n = self.input_dim();
        let nn = n * n;
        let layers = self.layers();
        let mut tape = Tape {
            second_order,
            ..Default::default()
        };
        let mut a = z.to_vec();
        let (mut ga, mut ha) = if second_order {
            let mut g = vec![0.0; n * n];
            for k in 0..n {
                g[k * n + k] = 1.0;
            }
            (g, vec![0.0; n * nn])
        } else {
            (Vec::new(), Vec::new())
        };
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.offset(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = b.to_vec();
            let mut gz = vec![0.0; if second_order { fan_out * n } else { 0 }];
            let mut hz = vec![0.0; if second_order { fan_out * nn } else { 0 }];
            for u in 0..fan_out {
                let row = &w[u * fan_in..(u + 1) * fan_in];
                z[u] += row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
                if second_order {
                    for (j, &wj) in row.iter().enumerate() {
                        if wj == 0.0 {
                            continue;
                        }
                        for k in 0..n {
                            gz[u * n + k] += wj * ga[j * n + k];
                        }
                        for m in 0..nn {
                            hz[u * nn + m] += wj * ha[j * nn + m];
                        }
                    }
                }
            }
            tape.a.push(core::mem::take(&mut a));
            tape.ga.push(core::mem::take(&mut ga));
            tape.ha.push(core::mem::take(&mut ha));
            if l + 1 == layers {
                tape.out = [z[0], z[1]];
                tape.gout = gz;
                tape.hout = hz;
                break;
            }
            let mut d1 = vec![0.0; fan_out];
            let mut d2 = vec![0.0; fan_out];
            let mut d3 = vec![0.0; fan_out];
            a = vec![0.0; fan_out];
            for u in 0..fan_out {
                let t = z[u].tanh();
                a[u] = t;
                d1[u] = 1.0 - t * t;
                d2[u] = -2.0 * t * d1[u];
                d3[u] = -2.0 * d1[u] * d1[u] + 4.0 * t * t * d1[u];
            }
            if second_order {
                ga = vec![0.0; fan_out * n];
                ha = vec![0.0; fan_out * nn];
                for u in 0..fan_out {
                    for k in 0..n {
                        ga[u * n + k] = d1[u] * gz[u * n + k];
                    }
                    for k in 0..n {
                        for m in 0..n {
                            ha[u * nn + k * n + m] =
                                d1[u] * hz[u * nn + k * n + m] + d2[u] * gz[u * n + k] * gz[u * n + m];
                        }
                    }
                }
            }
            tape.d1.push(d1);
            tape.d2.push(d2);
            tape.d3.push(d3);
            tape.gz.push(gz);
            tape.hz.push(hz);
        }
        tape
    }

    /// Accumulates `d(scalar)/d(params)` into `grad` given the output adjoints.
    pub(crate) fn backward(&self, tape: &Tape, adj: &OutputAdjoint, grad: &mut [f64]) {
        let n = self.input_dim();
        let nn = n * n;
        let so = tape.second_order;
        let mut zbar = adj.value.to_vec();
        let mut gzbar = if so { adj.grad.clone() } else { Vec::new() };
        let mut hzbar = if so { adj.hess.clone() } else { Vec::new() };
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.offset(l);
            let (a, ga, ha) = (&tape.a[l], &tape.ga[l], &tape.ha[l]);
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for u in 0..fan_out {
                    gb[u] += zbar[u];
                    let row = &mut gw[u * fan_in..(u + 1) * fan_in];
                    for j in 0..fan_in {
                        let mut s = zbar[u] * a[j];
                        if so {
                            for k in 0..n {
                                s += gzbar[u * n + k] * ga[j * n + k];
                            }
                            for m in 0..nn {
                                s += hzbar[u * nn + m] * ha[j * nn + m];
                            }
                        }
                        row[j] += s;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut abar = vec![0.0; fan_in];
            let mut gabar = vec![0.0; if so { fan_in * n } else { 0 }];
            let mut habar = vec![0.0; if so { fan_in * nn } else { 0 }];
            for u in 0..fan_out {
                let row = &w[u * fan_in..(u + 1) * fan_in];
                for (j, &wj) in row.iter().enumerate() {
                    abar[j] += wj * zbar[u];
                    if so {
                        for k in 0..n {
                            gabar[j * n + k] += wj * gzbar[u * n + k];
                        }
                        for m in 0..nn {
                            habar[j * nn + m] += wj * hzbar[u * nn + m];
                        }
                    }
                }
            }
            // through the tanh of hidden layer l - 1
            let h = l - 1;
            let (d1, d2, d3) = (&tape.d1[h], &tape.d2[h], &tape.d3[h]);
            zbar = vec![0.0; fan_in];
            if so {
                gzbar = vec![0.0; fan_in * n];
                hzbar = vec![0.0; fan_in * nn];
            }
            let (gz, hz) = (&tape.gz[h], &tape.hz[h]);
            for j in 0..fan_in {
                let mut s = d1[j] * abar[j];
                if so {
                    let g = &gz[j * n..(j + 1) * n];
                    for k in 0..n {
                        s += d2[j] * gabar[j * n + k] * g[k];
                    }
                    for k in 0..n {
                        for m in 0..n {
                            let hb = habar[j * nn + k * n + m];
                            s += d2[j] * hb * hz[j * nn + k * n + m] + d3[j] * hb * g[k] * g[m];
                        }
                    }
                    for k in 0..n {
                        let mut acc = d1[j] * gabar[j * n + k];
                        for m in 0..n {
                            acc += d2[j] * (habar[j * nn + k * n + m] + habar[j * nn + m * n + k]) * g[m];
                        }
                        gzbar[j * n + k] = acc;
                    }
                    for m in 0..nn {
                        hzbar[j * nn + m] = d1[j] * habar[j * nn + m];
                    }
                }
                zbar[j] = s;
            }
        }
    }

    /// Both outputs at `x`.
    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        self.forward(&self.standardize(x), false).out
    }

    /// Outputs with exact gradients and Hessians in the original coordinates.
    pub fn eval_with_derivatives(&self, x: &[f64]) -> Derivatives {
        let n = self.input_dim();
        let s = self.input_scale();
        let tape = self.forward(&self.standardize(x), true);
        let mut grad = [vec![0.0; n], vec![0.0; n]];
        let mut hess = [vec![0.0; n * n], vec![0.0; n * n]];
        for o in 0..2 {
            for k in 0..n {
                grad[o][k] = tape.gout[o * n + k] / s[k];
                for m in 0..n {
                    hess[o][k * n + m] = tape.hout[o * n * n + k * n + m] / (s[k] * s[m]);
                }
            }
        }
        Derivatives {
            value: tape.out,
            grad,
            hess,
        }
    }
}
