//! Synthetic harness for the error decomposition of the per-point least
//! squares: `Y = X beta0 + Y_m + Y_h` with Monte Carlo noise `Y_m` and a
//! faster-decaying high mode `Y_h`.

use crate::linalg::{norm2, Matrix, Qr};
use crate::prelude::*;
use crate::rng::spawn_stream;
use crate::Complex64;
use core::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaGenerator {
    /// Known eigenvalues in the regression.
    pub eigenvalues: Vec<Complex64>,
    /// True coefficients, `(Re, Im)` per mode.
    pub beta0: Vec<f64>,
    /// Unmodelled high mode `mu_hat + i omega_hat`.
    pub high_mode: Complex64,
    /// Amplitude `C1` of the high mode.
    pub high_amplitude: f64,
    /// Standard deviation of the i.i.d. Monte Carlo noise.
    pub noise: f64,
    /// `T_f - T_s`.
    pub window_length: f64,
    /// Noise replicates averaged per scan point.
    pub replicates: usize,
    /// Equally spaced high-mode phases averaged per scan point; the average
    /// removes the dependence on where the window cuts the high-mode cycle.
    pub phases: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub t_s: f64,
    pub n: usize,
    /// Root-mean-square of `||beta - beta0||` over replicates and phases.
    pub error: f64,
}

impl LemmaGenerator {
    fn design(&self, times: &[f64]) -> Matrix {
        let m = self.eigenvalues.len();
        let mut a = Matrix::zeros(times.len(), 2 * m);
        for (j, &t) in times.iter().enumerate() {
            for (k, l) in self.eigenvalues.iter().enumerate() {
                let e = (l.re * t).exp();
                let (s, c) = (l.im * t).sin_cos();
                a[(j, 2 * k)] = e * c;
                a[(j, 2 * k + 1)] = -e * s;
            }
        }
        a
    }

    fn error_at(&self, t_s: f64, n: usize, stream: u64) -> f64 {
        let times: Vec<f64> = (0..n)
            .map(|j| t_s + self.window_length * j as f64 / (n - 1) as f64)
            .collect();
        let a = self.design(&times);
        let qr = Qr::new(&a);
        let clean = a.mul_vec(&self.beta0);
        let mut rng = spawn_stream(self.seed, stream);
        let phases = self.phases.max(1);
        let reps = if self.noise > 0.0 { self.replicates.max(1) } else { 1 };
        let mut sum_sq = 0.0;
        let mut y = vec![0.0; n];
        for r in 0..reps {
            for p in 0..phases {
                let phi = 2.0 * PI * p as f64 / phases as f64;
                for (j, &t) in times.iter().enumerate() {
                    let high = self.high_amplitude * (self.high_mode.re * t).exp() * (self.high_mode.im * t + phi).cos();
                    y[j] = clean[j] + high;
                    if self.noise > 0.0 {
                        y[j] += self.noise * rng.normal();
                    }
                }
                let (beta, _) = qr.solve(&y);
                let diff: Vec<f64> = beta.iter().zip(&self.beta0).map(|(b, b0)| b - b0).collect();
                sum_sq += norm2(&diff).powi(2);
                let _ = r;
            }
        }
        (sum_sq / (reps * phases) as f64).sqrt()
    }
}

/// `||beta - beta0||` over every `(T_s, N)` combination, `T_s`-major.
pub fn lemma_error_scan(generator: &LemmaGenerator, t_starts: &[f64], ns: &[usize]) -> Vec<ScanPoint> {
    let mut out = Vec::with_capacity(t_starts.len() * ns.len());
    for (a, &t_s) in t_starts.iter().enumerate() {
        for (b, &n) in ns.iter().enumerate() {
            let stream = (a * ns.len() + b) as u64;
            out.push(ScanPoint {
                t_s,
                n,
                error: generator.error_at(t_s, n, stream),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generator(noise: f64, high: f64) -> LemmaGenerator {
        LemmaGenerator {
            eigenvalues: vec![Complex64::new(-0.1, 2.0)],
            beta0: vec![0.7, -0.4],
            high_mode: Complex64::new(-0.4, 4.0),
            high_amplitude: high,
            noise,
            window_length: 20.0,
            replicates: 200,
            phases: 8,
            seed: 3,
        }
    }

    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn exact_data_is_recovered() {
        let scan = lemma_error_scan(&generator(0.0, 0.0), &[1.0, 2.0, 4.0], &[100, 1000]);
        assert!(scan.iter().all(|p| p.error < 1e-10), "{scan:?}");
    }

    #[test]
    fn monte_carlo_term_scales_as_inverse_sqrt_n() {
        let ns = [100, 1000, 10_000];
        let scan = lemma_error_scan(&generator(0.01, 0.0), &[2.0], &ns);
        let s = slope(&ns.map(|n| n as f64), &scan.iter().map(|p| p.error).collect::<Vec<_>>());
        assert!((s + 0.5).abs() < 0.15, "slope {s}");
    }

    #[test]
    fn high_mode_term_decays_with_start_time() {
        let ts = [1.0, 2.0, 4.0];
        let scan = lemma_error_scan(&generator(0.0, 1.0), &ts, &[500]);
        for w in scan.windows(2) {
            let ratio = w[1].error / w[0].error;
            let want = (-0.3 * (w[1].t_s - w[0].t_s)).exp();
            assert!((ratio / want - 1.0).abs() < 0.3, "ratio {ratio} vs {want}");
        }
    }
}
