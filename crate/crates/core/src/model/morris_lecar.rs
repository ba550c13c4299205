#[allow(unused_imports)]
use num_traits::Float;
use super::SdeModel;

/// Parameters of two gap-junction-coupled Morris-Lecar neurons with
/// voltage and channel noise. State order is `(V1, N1, V2, N2)`.
///
/// Gating: `m_inf(V) = (1 + tanh((V - v1)/v2))/2`,
/// `alpha(V) = phi/2 cosh((V - v3)/(2 v4)) (1 + tanh((V - v3)/v4))`,
/// `beta(V) = phi/2 cosh((V - v3)/(2 v4)) (1 - tanh((V - v3)/v4))`.
/// `iota` rescales time for both the drift and the channel kinetics.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MorrisLecarParams {
    pub c: f64,
    pub i_app: f64,
    pub g_l: f64,
    pub v_l: f64,
    pub g_k: f64,
    pub v_k: f64,
    pub g_ca: f64,
    pub v_ca: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub phi: f64,
    pub kappa: f64,
    pub iota: f64,
    pub d_v1: f64,
    pub d_v2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl MorrisLecarParams {
    /// Textbook Hopf-regime constants (Rinzel-Ermentrout) with `I = 100`,
    /// uncoupled, with the noise levels of the 4D experiment.
    pub fn standard() -> Self {
        Self {
            c: 20.0,
            i_app: 100.0,
            g_l: 2.0,
            v_l: -60.0,
            g_k: 8.0,
            v_k: -84.0,
            g_ca: 4.4,
            v_ca: 120.0,
            v1: -1.2,
            v2: 18.0,
            v3: 2.0,
            v4: 30.0,
            phi: 0.04,
            kappa: 0.0,
            iota: 20.0,
            d_v1: 15.0,
            d_v2: 50.0,
            eps1: 0.3,
            eps2: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct MorrisLecar4D(pub MorrisLecarParams);

struct Gating {
    m_inf: f64,
    dm_inf: f64,
    alpha: f64,
    dalpha: f64,
    beta: f64,
    dbeta: f64,
}

impl MorrisLecar4D {
    pub fn new(params: MorrisLecarParams) -> Self {
        Self(params)
    }

    fn gating(&self, v: f64) -> Gating {
        let p = &self.0;
        // tanh a = 1 - 2 / (exp(2a) + 1) stays finite when exp overflows
        let tm = 1.0 - 2.0 / ((2.0 * (v - p.v1) / p.v2).exp() + 1.0);
        let u = (v - p.v3) / p.v4;
        let e = (0.5 * u).exp();
        let e2 = e * e;
        let th = 1.0 - 2.0 / (e2 * e2 + 1.0);
        let ch = 0.5 * (e + 1.0 / e);
        let sh = 0.5 * (e - 1.0 / e);
        let sech2 = 1.0 - th * th;
        Gating {
            m_inf: 0.5 * (1.0 + tm),
            dm_inf: 0.5 * (1.0 - tm * tm) / p.v2,
            alpha: 0.5 * p.phi * ch * (1.0 + th),
            dalpha: 0.5 * p.phi * (sh / (2.0 * p.v4) * (1.0 + th) + ch * sech2 / p.v4),
            beta: 0.5 * p.phi * ch * (1.0 - th),
            dbeta: 0.5 * p.phi * (sh / (2.0 * p.v4) * (1.0 - th) - ch * sech2 / p.v4),
        }
    }

    fn ionic(&self, v: f64, n: f64, m_inf: f64) -> f64 {
        let p = &self.0;
        p.i_app - p.g_l * (v - p.v_l) - p.g_k * n * (v - p.v_k) - p.g_ca * m_inf * (v - p.v_ca)
    }

    /// Channel-noise radicand, clamped at zero outside the physical range.
    fn radicand(g: &Gating, n: f64) -> f64 {
        (g.alpha * (1.0 - n) + g.beta * n).max(0.0)
    }

    fn neurons(&self) -> [(usize, usize, f64, f64); 2] {
        let p = &self.0;
        [(0, 2, p.d_v1, p.eps1), (2, 0, p.d_v2, p.eps2)]
    }
}

impl SdeModel for MorrisLecar4D {
    fn dim(&self) -> usize {
        4
    }
    fn noise_dim(&self) -> usize {
        4
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let p = &self.0;
        for (vi, other, _, _) in self.neurons() {
            let (v, n) = (x[vi], x[vi + 1]);
            let g = self.gating(v);
            out[vi] = p.iota / p.c * (self.ionic(v, n, g.m_inf) + p.kappa * (x[other] - v));
            out[vi + 1] = p.iota * (g.alpha * (1.0 - n) - g.beta * n);
        }
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[..16].fill(0.0);
        for (vi, _, dv, eps) in self.neurons() {
            let g = self.gating(x[vi]);
            out[vi * 4 + vi] = (2.0 * dv).sqrt();
            out[(vi + 1) * 4 + vi + 1] = eps * Self::radicand(&g, x[vi + 1]).sqrt();
        }
    }

    fn apply_diffusion(&self, x: &[f64], noise: &[f64], out: &mut [f64]) {
        for (vi, _, dv, eps) in self.neurons() {
            let g = self.gating(x[vi]);
            out[vi] = (2.0 * dv).sqrt() * noise[vi];
            out[vi + 1] = eps * Self::radicand(&g, x[vi + 1]).sqrt() * noise[vi + 1];
        }
    }

    fn drift_and_noise(&self, x: &[f64], noise: &[f64], f: &mut [f64], gw: &mut [f64]) {
        let p = &self.0;
        for (vi, other, dv, eps) in self.neurons() {
            let (v, n) = (x[vi], x[vi + 1]);
            let g = self.gating(v);
            f[vi] = p.iota / p.c * (self.ionic(v, n, g.m_inf) + p.kappa * (x[other] - v));
            f[vi + 1] = p.iota * (g.alpha * (1.0 - n) - g.beta * n);
            gw[vi] = (2.0 * dv).sqrt() * noise[vi];
            gw[vi + 1] = eps * Self::radicand(&g, n).sqrt() * noise[vi + 1];
        }
    }

    fn diffusion_product(&self, x: &[f64], out: &mut [f64]) {
        out[..16].fill(0.0);
        for (vi, _, dv, eps) in self.neurons() {
            let g = self.gating(x[vi]);
            out[vi * 4 + vi] = 2.0 * dv;
            out[(vi + 1) * 4 + vi + 1] = eps * eps * Self::radicand(&g, x[vi + 1]);
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let p = &self.0;
        out[..16].fill(0.0);
        let s = p.iota / p.c;
        for (vi, other, _, _) in self.neurons() {
            let (v, n) = (x[vi], x[vi + 1]);
            let g = self.gating(v);
            let ni = vi + 1;
            out[vi * 4 + vi] = s
                * (-p.g_l - p.g_k * n - p.g_ca * (g.dm_inf * (v - p.v_ca) + g.m_inf) - p.kappa);
            out[vi * 4 + ni] = -s * p.g_k * (v - p.v_k);
            out[vi * 4 + other] = s * p.kappa;
            out[ni * 4 + vi] = p.iota * (g.dalpha * (1.0 - n) - g.dbeta * n);
            out[ni * 4 + ni] = -p.iota * (g.alpha + g.beta);
        }
    }

    fn diffusion_product_grad(&self, x: &[f64], out: &mut [f64]) {
        out[..64].fill(0.0);
        for (vi, _, _, eps) in self.neurons() {
            let g = self.gating(x[vi]);
            let n = x[vi + 1];
            if g.alpha * (1.0 - n) + g.beta * n <= 0.0 {
                continue;
            }
            let ni = vi + 1;
            let base = (ni * 4 + ni) * 4;
            out[base + vi] = eps * eps * (g.dalpha * (1.0 - n) + g.dbeta * n);
            out[base + ni] = eps * eps * (g.beta - g.alpha);
        }
    }

    fn diffusion_product_hess(&self, _x: &[f64], out: &mut [f64]) {
        // G is diagonal and G_NN is affine in N, so d^2 G_ii / dx_i^2 vanishes.
        out[..16].fill(0.0);
    }
}
