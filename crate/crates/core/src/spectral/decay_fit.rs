//! Eigenvalue estimation from decaying-oscillation traces,
//! `f(t; b) = b1 exp(b5 t) sin(2 pi t / b2 + 2 pi / b3) + b4`.

use super::nelder_mead::{minimize, NelderMeadOptions};
use super::SliceWindow;
use crate::linalg::{Matrix, Qr};
use crate::prelude::*;
use crate::rng::{derive_seed, purpose, spawn_stream};
use crate::{Complex64, Error, Result};
use core::f64::consts::PI;

/// Fitted parameters; `b1`, `b2`, `b4` and `-b5` are positive.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecayFitParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
}

impl DecayFitParams {
    pub fn eval(&self, t: f64) -> f64 {
        self.b1 * (self.b5 * t).exp() * (2.0 * PI * t / self.b2 + 2.0 * PI / self.b3).sin() + self.b4
    }

    /// `b5 + (2 pi / b2) i`.
    pub fn eigenvalue(&self) -> Complex64 {
        Complex64::new(self.b5, 2.0 * PI / self.b2)
    }

    /// Internal coordinates: logs of the positive parameters and the phase
    /// angle `2 pi / b3` kept on the circle.
    fn to_internal(self) -> [f64; 5] {
        [
            self.b1.ln(),
            self.b2.ln(),
            2.0 * PI / self.b3,
            self.b4.ln(),
            (-self.b5).ln(),
        ]
    }

    fn from_internal(p: &[f64]) -> Self {
        // phase in (0, 2 pi] so that b3 = 2 pi / phase is finite and >= 1
        let mut phase = num_traits::Euclid::rem_euclid(&p[2], &(2.0 * PI));
        if phase == 0.0 {
            phase = 2.0 * PI;
        }
        Self {
            b1: p[0].exp(),
            b2: p[1].exp(),
            b3: 2.0 * PI / phase,
            b4: p[3].exp(),
            b5: -p[4].exp(),
        }
    }
}

/// Why a trace fit was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FitFailure {
    /// The trace carries no oscillation distinguishable from a constant.
    Flat,
    /// The simplex never contracted below tolerance.
    NoConvergence,
    /// The trace mean is not positive, so the positive offset cannot fit.
    NonPositiveOffset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecayFit {
    pub params: DecayFitParams,
    /// Sum of squared residuals over the window.
    pub residual: f64,
    pub failure: Option<FitFailure>,
}

impl DecayFit {
    pub fn eigenvalue(&self) -> Complex64 {
        self.params.eigenvalue()
    }

    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFitOptions {
    /// Number of simplex starts: the data-driven guess plus jittered copies.
    pub starts: usize,
    pub nelder_mead: NelderMeadOptions,
    /// Seed for the start jitter.
    pub seed: u64,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            nelder_mead: NelderMeadOptions {
                max_iter: 20_000,
                x_tol: 1e-11,
                f_tol: 0.0,
                step: 0.1,
            },
            seed: 0x5eed,
        }
    }
}

/// Minimum number of slices in a fitting window.
pub const MIN_WINDOW: usize = 20;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Angular frequency of the strongest periodogram peak of `y` (mean removed),
/// refined by golden-section search between the neighbouring DFT bins.
fn dominant_frequency(t: &[f64], y: &[f64]) -> f64 {
    let m = mean(y);
    let span = t[t.len() - 1] - t[0];
    let power = |w: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (ti, yi) in t.iter().zip(y) {
            let (sn, cs) = (w * ti).sin_cos();
            c += (yi - m) * cs;
            s += (yi - m) * sn;
        }
        c * c + s * s
    };
    let dw = 2.0 * PI / span;
    let kmax = (t.len() / 2).max(2);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=kmax {
        let p = power(k as f64 * dw);
        if p > best.1 {
            best = (k, p);
        }
    }
    let (mut a, mut b) = ((best.0 as f64 - 1.0).max(0.25) * dw, (best.0 as f64 + 1.0) * dw);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (power(c), power(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = power(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = power(d);
        }
    }
    0.5 * (a + b)
}

/// Log-linear slope of the per-half-period maximum deviation from `offset`.
fn envelope_rate(t: &[f64], y: &[f64], offset: f64, omega: f64) -> f64 {
    let half = PI / omega;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut seg_start = t[0];
    let mut cur: Option<(f64, f64)> = None;
    for (&ti, &yi) in t.iter().zip(y) {
        if ti - seg_start >= half {
            pts.extend(cur.take());
            seg_start = ti;
        }
        let a = (yi - offset).abs();
        if cur.is_none_or(|(_, best)| a > best) {
            cur = Some((ti, a));
        }
    }
    pts.extend(cur);
    let pts: Vec<(f64, f64)> = pts.into_iter().filter(|p| p.1 > 0.0).map(|(t, a)| (t, a.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ma = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ma)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    sxy / sxx
}

/// Data-driven starting point: periodogram period, envelope decay, tail-mean
/// offset, half the first peak-to-trough span as amplitude, and the phase
/// from a linear fit with those fixed.
fn initial_guess(t: &[f64], y: &[f64]) -> DecayFitParams {
    let omega = dominant_frequency(t, y);
    let tail = &y[y.len() - (y.len() / 4).max(1)..];
    let b4 = mean(tail);
    let mut b5 = envelope_rate(t, y, b4, omega);
    if !(b5 < 0.0 && b5.is_finite()) {
        b5 = -1e-3 * omega;
    }
    let period = 2.0 * PI / omega;
    let first: Vec<f64> = t
        .iter()
        .zip(y)
        .filter(|(ti, _)| **ti - t[0] <= period)
        .map(|(_, yi)| *yi)
        .collect();
    let (lo, hi) = first
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let amp_at_start = 0.5 * (hi - lo);
    let b1 = (amp_at_start * (-b5 * t[0]).exp()).max(f64::MIN_POSITIVE);

    // y - b4 = e^{b5 t} (s sin(wt) + c cos(wt)) = b1 e^{b5 t} sin(wt + phi)
    let a = Matrix::from_row_major(
        t.len(),
        2,
        t.iter()
            .flat_map(|&ti| {
                let e = (b5 * ti).exp();
                let (s, c) = (omega * ti).sin_cos();
                [e * s, e * c]
            })
            .collect(),
    );
    let rhs: Vec<f64> = y.iter().map(|v| v - b4).collect();
    let (sc, _) = Qr::new(&a).solve(&rhs);
    let phase = sc[1].atan2(sc[0]);
    let phase = if phase.is_finite() { phase } else { 0.0 };
    DecayFitParams::from_internal(&[b1.ln(), period.ln(), phase, b4.max(f64::MIN_POSITIVE).ln(), (-b5).ln()])
}

/// Least-squares fit of `f(t; b)` to `trace` over `window` by Nelder-Mead in
/// the internal coordinates, from several starts. `times` are absolute.
pub fn fit_eigenvalue(
    trace: &[f64],
    times: &[f64],
    window: SliceWindow,
    opts: &DecayFitOptions,
) -> Result<DecayFit> {
    if trace.len() != times.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: trace.len(),
            context: "trace length",
        });
    }
    window.check(times.len())?;
    if window.len() < MIN_WINDOW {
        return Err(Error::DegenerateWindow {
            t_start: times[window.start],
            t_end: times[window.end - 1],
            reason: "fewer than 20 slices",
        });
    }
    let t = &times[window.start..window.end];
    let y = &trace[window.start..window.end];
    if y.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace"));
    }
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let flat = DecayFit {
        params: DecayFitParams {
            b1: 0.0,
            b2: f64::INFINITY,
            b3: 1.0,
            b4: mean(y),
            b5: 0.0,
        },
        residual: y.iter().map(|v| (v - mean(y)).powi(2)).sum(),
        failure: Some(FitFailure::Flat),
    };
    if hi - lo <= 1e-9 * scale || scale == 0.0 {
        return Ok(flat);
    }
    if mean(y) <= 0.0 {
        return Ok(DecayFit {
            failure: Some(FitFailure::NonPositiveOffset),
            ..flat
        });
    }

    let objective = |p: &[f64]| {
        let b = DecayFitParams::from_internal(p);
        t.iter().zip(y).map(|(&ti, &yi)| (yi - b.eval(ti)).powi(2)).sum::<f64>()
    };
    let base = initial_guess(t, y).to_internal();
    let mut rng = spawn_stream(derive_seed(opts.seed, purpose::FIT_JITTER), 0);
    let mut best: Option<super::nelder_mead::Minimum> = None;
    let mut any_converged = false;
    for s in 0..opts.starts.max(1) {
        let mut x0 = base;
        if s > 0 {
            x0[0] += 0.5 * (rng.uniform() - 0.5);
            x0[1] += 0.1 * (rng.uniform() - 0.5);
            x0[2] += 2.0 * PI * rng.uniform();
            x0[4] += rng.uniform() - 0.5;
        }
        let mut m = minimize(objective, &x0, &opts.nelder_mead);
        // restart from the optimum until the objective stalls
        for _ in 0..4 {
            let again = minimize(objective, &m.x, &NelderMeadOptions { step: 0.01, ..opts.nelder_mead });
            let improved = again.f < m.f * (1.0 - 1e-12);
            let conv = again.converged;
            if again.f <= m.f {
                m = again;
            }
            m.converged = conv;
            if !improved {
                break;
            }
        }
        any_converged |= m.converged;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let params = DecayFitParams::from_internal(&best.x);
    let failure = if !any_converged {
        Some(FitFailure::NoConvergence)
    } else if params.b1 * (params.b5 * t[0]).exp() <= 1e-9 * scale {
        Some(FitFailure::Flat)
    } else {
        None
    };
    Ok(DecayFit {
        params,
        residual: best.f,
        failure,
    })
}

/// How per-trace fits are combined into one eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Averaging {
    /// Average `b5` and the period `b2`, then `omega = 2 pi / mean(b2)`.
    #[default]
    Period,
    /// Average `b5` and the angular frequency `2 pi / b2`.
    Frequency,
}

/// Mean eigenvalue over the successful fits.
pub fn aggregate_eigenvalue(fits: &[DecayFit], averaging: Averaging) -> Result<Complex64> {
    let ok: Vec<&DecayFitParams> = fits.iter().filter(|f| f.ok()).map(|f| &f.params).collect();
    if ok.is_empty() {
        return Err(Error::AllFitsFailed(fits.len()));
    }
    let n = ok.len() as f64;
    let mu = ok.iter().map(|p| p.b5).sum::<f64>() / n;
    let omega = match averaging {
        Averaging::Period => 2.0 * PI / (ok.iter().map(|p| p.b2).sum::<f64>() / n),
        Averaging::Frequency => ok.iter().map(|p| 2.0 * PI / p.b2).sum::<f64>() / n,
    };
    Ok(Complex64::new(mu, omega))
}

/// `lambda_n = mu_1 n^2 + i omega_1 n` for `n = 1..=m`.
pub fn parabolic_spectrum(lambda1: Complex64, m: usize) -> Vec<Complex64> {
    (1..=m)
        .map(|n| {
            let n = n as f64;
            Complex64::new(lambda1.re * n * n, lambda1.im * n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(b: &DecayFitParams, n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (1..=n).map(|k| k as f64 * dt).collect();
        let y = t.iter().map(|&ti| b.eval(ti)).collect();
        (t, y)
    }

    const TRUE: DecayFitParams = DecayFitParams {
        b1: 0.5,
        b2: PI,
        b3: 8.0,
        b4: 0.3,
        b5: -0.1,
    };

    #[test]
    fn recovers_noiseless_parameters() {
        let (t, y) = synth(&TRUE, 500, 0.05);
        let fit = fit_eigenvalue(&y, &t, SliceWindow::all(500), &DecayFitOptions::default()).unwrap();
        assert!(fit.ok(), "{fit:?}");
        let lam = fit.eigenvalue();
        assert!((lam.re + 0.1).abs() < 1e-6, "{lam}");
        assert!((lam.im - 2.0).abs() < 1e-6, "{lam}");
        assert!((fit.params.b3 - 8.0).abs() < 1e-5);
        assert!(fit.params.b1 > 0.0 && fit.params.b2 > 0.0 && fit.params.b4 > 0.0 && fit.params.b5 < 0.0);
    }

    #[test]
    fn scale_invariance() {
        let (t, y) = synth(&TRUE, 400, 0.05);
        let opts = DecayFitOptions::default();
        let a = fit_eigenvalue(&y, &t, SliceWindow::all(400), &opts).unwrap().params;
        let y3: Vec<f64> = y.iter().map(|v| 3.7 * v).collect();
        let b = fit_eigenvalue(&y3, &t, SliceWindow::all(400), &opts).unwrap().params;
        assert!((a.b2 - b.b2).abs() < 1e-8 && (a.b3 - b.b3).abs() < 1e-8 && (a.b5 - b.b5).abs() < 1e-8);
        assert!((b.b1 / a.b1 - 3.7).abs() < 1e-7 && (b.b4 / a.b4 - 3.7).abs() < 1e-7);
    }

    #[test]
    fn window_inside_longer_trace() {
        let (t, y) = synth(&TRUE, 1000, 0.05);
        let fit = fit_eigenvalue(&y, &t, SliceWindow::new(200, 800), &DecayFitOptions::default()).unwrap();
        assert!((fit.eigenvalue() - Complex64::new(-0.1, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn constant_trace_is_flagged() {
        let t: Vec<f64> = (1..=100).map(|k| k as f64 * 0.1).collect();
        let fit = fit_eigenvalue(&[0.4; 100], &t, SliceWindow::all(100), &DecayFitOptions::default()).unwrap();
        assert_eq!(fit.failure, Some(FitFailure::Flat));
    }

    #[test]
    fn short_window_rejected() {
        let t: Vec<f64> = (1..=100).map(|k| k as f64 * 0.1).collect();
        let y = vec![1.0; 100];
        assert!(fit_eigenvalue(&y, &t, SliceWindow::new(10, 25), &DecayFitOptions::default()).is_err());
    }

    #[test]
    fn noisy_trace_is_close() {
        let (t, mut y) = synth(&TRUE, 800, 0.05);
        let mut rng = spawn_stream(1, 1);
        for v in &mut y {
            *v += 0.01 * rng.normal();
        }
        let fit = fit_eigenvalue(&y, &t, SliceWindow::all(800), &DecayFitOptions::default()).unwrap();
        let lam = fit.eigenvalue();
        assert!((lam.re + 0.1).abs() < 0.01 && (lam.im - 2.0).abs() < 0.01, "{lam}");
    }

    fn fit_with(b5: f64, omega: f64, failure: Option<FitFailure>) -> DecayFit {
        DecayFit {
            params: DecayFitParams {
                b1: 1.0,
                b2: 2.0 * PI / omega,
                b3: 1.0,
                b4: 1.0,
                b5,
            },
            residual: 0.0,
            failure,
        }
    }

    #[test]
    fn aggregation_rules() {
        let two = [fit_with(-0.09, 1.9, None), fit_with(-0.11, 2.1, None)];
        let f = aggregate_eigenvalue(&two, Averaging::Frequency).unwrap();
        assert!((f - Complex64::new(-0.1, 2.0)).norm() < 1e-12);
        // averaging periods gives the harmonic mean of the frequencies
        let p = aggregate_eigenvalue(&two, Averaging::Period).unwrap();
        assert!((p.re + 0.1).abs() < 1e-12);
        assert!((p.im - 2.0 / (1.0 / 1.9 + 1.0 / 2.1)).abs() < 1e-12);

        let one = [fit_with(-0.2, 3.0, None)];
        let l = aggregate_eigenvalue(&one, Averaging::Period).unwrap();
        assert!((l - Complex64::new(-0.2, 3.0)).norm() < 1e-12);

        let mixed = [
            fit_with(-0.09, 1.9, None),
            fit_with(-5.0, 9.0, Some(FitFailure::NoConvergence)),
            fit_with(-0.11, 2.1, None),
        ];
        assert_eq!(
            aggregate_eigenvalue(&mixed, Averaging::Frequency).unwrap(),
            aggregate_eigenvalue(&two, Averaging::Frequency).unwrap()
        );
        let failed = [fit_with(-0.1, 2.0, Some(FitFailure::Flat))];
        assert!(matches!(aggregate_eigenvalue(&failed, Averaging::Period), Err(Error::AllFitsFailed(1))));
    }

    #[test]
    fn parabola() {
        let s = parabolic_spectrum(Complex64::new(-0.1, 2.0), 2);
        assert_eq!(s.len(), 2);
        assert!((s[1] - Complex64::new(-0.4, 4.0)).norm() < 1e-15);
        assert_eq!(parabolic_spectrum(Complex64::new(-0.1, 2.0), 1), vec![Complex64::new(-0.1, 2.0)]);
        let ml = parabolic_spectrum(Complex64::new(-0.0879, 1.9518), 2)[1];
        assert!((ml.re + 0.3516).abs() < 1e-12 && (ml.im - 3.9036).abs() < 1e-12);
        // the heuristic is only approximate against the quoted finite-difference value
        let fd = Complex64::new(-0.2521, 3.9602);
        assert!(((ml.re - fd.re) / fd.re).abs() < 0.4);
        assert!(((ml.im - fd.im) / fd.im).abs() < 0.02);
    }
}
