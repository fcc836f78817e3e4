//! Vector-Jacobian products of the ball kernels.
//!
//! Each function recomputes the forward quantities it needs from the inputs,
//! takes the upstream gradient `g` of the kernel output, *accumulates* into
//! the input-gradient buffers and returns the gradient w.r.t. the curvature.
//! Branch decisions (series limit, projection, arctanh clamp) are made exactly
//! as in the forward kernels; clamped quantities get a zero subgradient.

use super::{atanh_ratio, dot, norm, tanh_ratio, Ball, Curvature};
use crate::error::Result;

/// Below this value of `√c·‖v‖` the derivative ratios use their Taylor series.
const SERIES_SWITCH: f64 = 1e-2;

impl Ball {
    /// Backward through [`Ball::project_in_place`]. Overwrites `g` with the
    /// gradient w.r.t. the unprojected input and returns the curvature part.
    fn project_vjp(&self, raw: &[f64], c: Curvature, g: &mut [f64]) -> f64 {
        let sc = c.sqrt();
        let n = norm(raw);
        let max = 1.0 - self.eps;
        if !(sc * n >= max && n > 0.0) {
            return 0.0;
        }
        // out = max·r̂/√c
        let s = max / (sc * n);
        let r_dot_g = dot(raw, g) / n;
        let out_dot_g = s * dot(raw, g);
        for (gi, ri) in g.iter_mut().zip(raw) {
            *gi = s * (*gi - r_dot_g * ri / n);
        }
        -out_dot_g / (2.0 * c.value())
    }

    pub(crate) fn exp0_vjp(&self, v: &[f64], c: Curvature, g: &[f64], g_v: &mut [f64]) -> f64 {
        let n = norm(v);
        let f = self.exp0_factor(n, c);
        let raw: Vec<f64> = v.iter().map(|x| f * x).collect();
        let mut g_raw = g.to_vec();
        let mut g_c = self.project_vjp(&raw, c, &mut g_raw);
        if n < self.small_norm {
            for (a, b) in g_v.iter_mut().zip(&g_raw) {
                *a += b;
            }
            return g_c;
        }
        let sc = c.sqrt();
        let z = sc * n;
        // k1 = f'(z)·√c/n, k2 = f'(z)·n/(2√c)
        let (k1, k2) = if z < SERIES_SWITCH {
            let z2 = z * z;
            let q = -2.0 / 3.0 + z2 * (8.0 / 15.0 + z2 * (-34.0 / 105.0 + z2 * 496.0 / 2835.0));
            (c.value() * q, n * n * q / 2.0)
        } else {
            let t = z.tanh();
            let fp = (z * (1.0 - t * t) - t) / (z * z);
            (fp * sc / n, fp * n / (2.0 * sc))
        };
        debug_assert_eq!(f, tanh_ratio(z));
        let gv = dot(&g_raw, v);
        for ((a, gr), x) in g_v.iter_mut().zip(&g_raw).zip(v) {
            *a += f * gr + gv * k1 * x;
        }
        g_c += gv * k2;
        g_c
    }

    pub(crate) fn mobius_add_vjp(
        &self,
        x: &[f64],
        y: &[f64],
        c: Curvature,
        g: &[f64],
        g_x: &mut [f64],
        g_y: &mut [f64],
    ) -> Result<f64> {
        let mut raw = vec![0.0; x.len()];
        self.mobius_add_raw(x, y, c, &mut raw)?;
        let mut g_raw = g.to_vec();
        let g_c_proj = self.project_vjp(&raw, c, &mut g_raw);

        let cv = c.value();
        let xy = dot(x, y);
        let xx = dot(x, x);
        let yy = dot(y, y);
        let a = 1.0 + 2.0 * cv * xy + cv * yy;
        let b = 1.0 - cv * xx;
        let den = 1.0 + 2.0 * cv * xy + cv * cv * xx * yy;

        let g_a = dot(&g_raw, x) / den;
        let g_b = dot(&g_raw, y) / den;
        let g_den = -dot(&g_raw, &raw) / den;

        for i in 0..x.len() {
            let gn = g_raw[i] / den;
            g_x[i] += a * gn
                + g_a * 2.0 * cv * y[i]
                - g_b * 2.0 * cv * x[i]
                + g_den * (2.0 * cv * y[i] + 2.0 * cv * cv * yy * x[i]);
            g_y[i] += b * gn
                + g_a * 2.0 * cv * (x[i] + y[i])
                + g_den * (2.0 * cv * x[i] + 2.0 * cv * cv * xx * y[i]);
        }
        Ok(g_c_proj + g_a * (2.0 * xy + yy) - g_b * xx + g_den * (2.0 * xy + 2.0 * cv * xx * yy))
    }

    /// Backward through the squared distance `d_c(x, y)²` given `g_d = ∂L/∂d²`.
    pub(crate) fn sq_distance_vjp(
        &self,
        x: &[f64],
        y: &[f64],
        c: Curvature,
        g_d: f64,
        g_x: &mut [f64],
        g_y: &mut [f64],
    ) -> Result<f64> {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut w = vec![0.0; x.len()];
        self.mobius_add_into(&neg, y, c, &mut w)?;
        let m = norm(&w);
        let cv = c.value();
        let z = c.sqrt() * m;
        let max = 1.0 - self.eps;

        let mut g_w = vec![0.0; x.len()];
        let g_c_direct = if z > max {
            let at = max.atanh();
            g_d * (-4.0 * at * at / (cv * cv))
        } else {
            // d² = 4m²h(z)², h(z) = atanh(z)/z
            let h = atanh_ratio(z);
            let one_minus = 1.0 - z * z;
            let k = g_d * 8.0 * h / one_minus;
            for (gw, wi) in g_w.iter_mut().zip(&w) {
                *gw = k * wi;
            }
            if z < SERIES_SWITCH {
                let z2 = z * z;
                let p = 2.0 / 3.0 + z2 * (4.0 / 5.0 + z2 * (6.0 / 7.0 + z2 * 8.0 / 9.0));
                g_d * 4.0 * m * m * m * m * h * p
            } else {
                g_d * 4.0 * m * m * h * (1.0 / one_minus - h) / cv
            }
        };

        let mut g_neg = vec![0.0; x.len()];
        let g_c = self.mobius_add_vjp(&neg, y, c, &g_w, &mut g_neg, g_y)?;
        for (a, b) in g_x.iter_mut().zip(&g_neg) {
            *a -= b;
        }
        Ok(g_c + g_c_direct)
    }
}

pub(crate) fn block_scale_vjp(v: &[f64], k: &[f64], g: &[f64], g_v: &mut [f64], g_k: &mut [f64]) {
    for (((p, s), gi), (gv, gk)) in v
        .chunks_exact(2)
        .zip(k)
        .zip(g.chunks_exact(2))
        .zip(g_v.chunks_exact_mut(2).zip(g_k.iter_mut()))
    {
        gv[0] += s * gi[0];
        gv[1] += s * gi[1];
        *gk += gi[0] * p[0] + gi[1] * p[1];
    }
}

pub(crate) fn block_rotate_vjp(
    v: &[f64],
    theta: &[f64],
    g: &[f64],
    g_v: &mut [f64],
    g_theta: &mut [f64],
) {
    for (((p, t), gi), (gv, gt)) in v
        .chunks_exact(2)
        .zip(theta)
        .zip(g.chunks_exact(2))
        .zip(g_v.chunks_exact_mut(2).zip(g_theta.iter_mut()))
    {
        let (s, c) = t.sin_cos();
        gv[0] += c * gi[0] + s * gi[1];
        gv[1] += -s * gi[0] + c * gi[1];
        *gt += gi[0] * (-s * p[0] - c * p[1]) + gi[1] * (c * p[0] - s * p[1]);
    }
}
