//! Poincaré-ball kernels anchored at the origin.
//!
//! Everything here works on raw `f64` slices plus a [`Curvature`]. The ball of
//! curvature `-c` is `{x : c·‖x‖² < 1}`. Relation transforms (block scaling and
//! Givens rotations) are applied from their `d/2` generating scalars and never
//! materialised as matrices.

pub(crate) mod backward;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Default margin kept between points and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;
/// Below this norm the origin maps use their series limit (identity).
pub const SMALL_NORM: f64 = 1e-12;
/// Möbius denominators smaller than this are reported as a numeric error.
pub const MIN_DENOMINATOR: f64 = 1e-15;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of boundary clamps (arctanh argument or ball projection) performed
/// by this process so far.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

fn record_clamp() {
    CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
}

/// Positive curvature magnitude `c`; the space has sectional curvature `-c`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Curvature(f64);

impl Curvature {
    pub const ONE: Curvature = Curvature(1.0);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::domain(format!(
                "curvature must be finite and positive, got {c}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Radius of the ball, `1/√c`.
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt()
    }
}

/// Stability margins shared by all ball kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub eps: f64,
    pub small_norm: f64,
    pub min_denominator: f64,
}

impl Default for Ball {
    fn default() -> Self {
        Ball {
            eps: BALL_EPS,
            small_norm: SMALL_NORM,
            min_denominator: MIN_DENOMINATOR,
        }
    }
}

/// A point strictly inside the ball of its curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite("ball point", &coords)?;
        if curvature.value() * dot(&coords, &coords) >= 1.0 {
            return Err(Error::domain("point lies outside the Poincaré ball"));
        }
        Ok(BallPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        BallPoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Hyperbolic distance to the origin (the hierarchy level of the point).
    pub fn level(&self) -> f64 {
        let sc = self.curvature.sqrt();
        2.0 / sc * clamped_atanh(sc * norm(&self.coords), BALL_EPS)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} has non-finite components")))
    }
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )))
    }
}

/// `atanh(min(z, 1 - eps))`, counting a clamp event when the bound bites.
fn clamped_atanh(z: f64, eps: f64) -> f64 {
    let max = 1.0 - eps;
    if z > max {
        record_clamp();
        max.atanh()
    } else {
        z.atanh()
    }
}

/// `tanh(z)/z`, exact at zero.
#[inline]
pub(crate) fn tanh_ratio(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.tanh() / z
    }
}

/// `atanh(z)/z`, exact at zero.
#[inline]
pub(crate) fn atanh_ratio(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.atanh() / z
    }
}

impl Ball {
    #[inline]
    fn max_scaled_norm(&self) -> f64 {
        1.0 - self.eps
    }

    /// Rescales `x` in place onto the shell of radius `(1-eps)/√c` if it lies
    /// on or beyond it. Returns whether a rescale happened.
    pub fn project_in_place(&self, x: &mut [f64], c: Curvature) -> bool {
        let sc = c.sqrt();
        let n = norm(x);
        if sc * n >= self.max_scaled_norm() && n > 0.0 {
            record_clamp();
            let s = self.max_scaled_norm() / (sc * n);
            x.iter_mut().for_each(|v| *v *= s);
            true
        } else {
            false
        }
    }

    pub fn project(&self, x: &[f64], c: Curvature) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out, c);
        out
    }

    /// Multiplier applied to `v` by the unprojected exponential map.
    #[inline]
    pub(crate) fn exp0_factor(&self, n: f64, c: Curvature) -> f64 {
        if n < self.small_norm {
            1.0
        } else {
            tanh_ratio(c.sqrt() * n)
        }
    }

    pub(crate) fn exp0_into(&self, v: &[f64], c: Curvature, out: &mut [f64]) {
        let f = self.exp0_factor(norm(v), c);
        for (o, x) in out.iter_mut().zip(v) {
            *o = f * x;
        }
        self.project_in_place(out, c);
    }

    /// Exponential map at the origin, `tanh(√c‖v‖)/(√c‖v‖)·v`.
    pub fn exp0(&self, v: &[f64], c: Curvature) -> Result<Vec<f64>> {
        check_finite("tangent vector", v)?;
        let mut out = vec![0.0; v.len()];
        self.exp0_into(v, c, &mut out);
        Ok(out)
    }

    /// Logarithmic map at the origin, `atanh(√c‖x‖)/(√c‖x‖)·x`, with the
    /// arctanh argument clamped to `1 - eps`.
    pub fn log0(&self, x: &[f64], c: Curvature) -> Result<Vec<f64>> {
        check_finite("ball point", x)?;
        let n = norm(x);
        if n < self.small_norm {
            return Ok(x.to_vec());
        }
        let z = c.sqrt() * n;
        let f = clamped_atanh(z, self.eps) / z;
        Ok(x.iter().map(|v| f * v).collect())
    }

    /// Raw Möbius sum without the final projection.
    pub(crate) fn mobius_add_raw(
        &self,
        x: &[f64],
        y: &[f64],
        c: Curvature,
        out: &mut [f64],
    ) -> Result<()> {
        let c = c.value();
        let xy = dot(x, y);
        let xx = dot(x, x);
        let yy = dot(y, y);
        // numerator (1 + 2c<x,y> + c|y|²)x + (1 - c|x|²)y rewritten as
        // b(x + y) + c|x + y|²x so that x ⊕ (-x) vanishes exactly
        let a_minus_b = c * (xx + 2.0 * xy + yy);
        let b = 1.0 - c * xx;
        let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
        if den.abs() < self.min_denominator || !den.is_finite() {
            return Err(Error::numeric(
                "mobius_add",
                format!("denominator {den:e} (near-antipodal points at the boundary)"),
            ));
        }
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = (b * (xi + yi) + a_minus_b * xi) / den;
        }
        Ok(())
    }

    pub(crate) fn mobius_add_into(
        &self,
        x: &[f64],
        y: &[f64],
        c: Curvature,
        out: &mut [f64],
    ) -> Result<()> {
        self.mobius_add_raw(x, y, c, out)?;
        self.project_in_place(out, c);
        Ok(())
    }

    /// Möbius addition `x ⊕ y` on the ball of curvature `c`.
    pub fn mobius_add(&self, x: &[f64], y: &[f64], c: Curvature) -> Result<Vec<f64>> {
        check_same_len(x, y)?;
        check_finite("ball point", x)?;
        check_finite("ball point", y)?;
        for p in [x, y] {
            if c.value() * dot(p, p) >= 1.0 {
                return Err(Error::domain("Möbius addition operand outside the ball"));
            }
        }
        let mut out = vec![0.0; x.len()];
        self.mobius_add_into(x, y, c, &mut out)?;
        Ok(out)
    }

    /// Distance from the ball point with norm `m` to the origin, written as
    /// `(2/√c)·atanh(√c·m)`.
    #[inline]
    pub(crate) fn origin_distance(&self, m: f64, c: Curvature) -> f64 {
        let sc = c.sqrt();
        2.0 / sc * clamped_atanh(sc * m, self.eps)
    }

    /// Squared hyperbolic distance; `neg` and `w` are scratch buffers of the
    /// same length as `x`.
    pub(crate) fn sq_distance_with(
        &self,
        x: &[f64],
        y: &[f64],
        c: Curvature,
        neg: &mut [f64],
        w: &mut [f64],
    ) -> Result<f64> {
        for (n, v) in neg.iter_mut().zip(x) {
            *n = -v;
        }
        self.mobius_add_into(neg, y, c, w)?;
        let d = self.origin_distance(norm(w), c);
        Ok(d * d)
    }

    /// Hyperbolic distance `(2/√c)·atanh(√c‖(-x) ⊕ y‖)`.
    pub fn distance(&self, x: &[f64], y: &[f64], c: Curvature) -> Result<f64> {
        check_same_len(x, y)?;
        check_finite("ball point", x)?;
        check_finite("ball point", y)?;
        let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut w = vec![0.0; x.len()];
        self.mobius_add_into(&neg_x, y, c, &mut w)?;
        Ok(self.origin_distance(norm(&w), c))
    }
}

pub fn exp0(v: &[f64], c: Curvature) -> Result<Vec<f64>> {
    Ball::default().exp0(v, c)
}

pub fn log0(x: &[f64], c: Curvature) -> Result<Vec<f64>> {
    Ball::default().log0(x, c)
}

pub fn mobius_add(x: &[f64], y: &[f64], c: Curvature) -> Result<Vec<f64>> {
    Ball::default().mobius_add(x, y, c)
}

pub fn hyp_distance(x: &[f64], y: &[f64], c: Curvature) -> Result<f64> {
    Ball::default().distance(x, y, c)
}

pub fn project_to_ball(x: &[f64], c: Curvature) -> Vec<f64> {
    Ball::default().project(x, c)
}

fn check_blocks(v: &[f64], gens: &[f64], what: &str) -> Result<()> {
    if !v.len().is_multiple_of(2) || v.len() != 2 * gens.len() {
        return Err(Error::domain(format!(
            "{what}: vector of length {} needs {} block generators, got {}",
            v.len(),
            v.len() / 2,
            gens.len()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn block_scale_into(v: &[f64], k: &[f64], out: &mut [f64]) {
    for ((o, p), s) in out.chunks_exact_mut(2).zip(v.chunks_exact(2)).zip(k) {
        o[0] = s * p[0];
        o[1] = s * p[1];
    }
}

#[inline]
pub(crate) fn block_rotate_into(v: &[f64], theta: &[f64], out: &mut [f64]) {
    for ((o, p), t) in out.chunks_exact_mut(2).zip(v.chunks_exact(2)).zip(theta) {
        let (s, c) = t.sin_cos();
        o[0] = c * p[0] - s * p[1];
        o[1] = s * p[0] + c * p[1];
    }
}

/// Scales the i-th coordinate pair of `v` by `k[i]`.
pub fn block_scale(v: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    check_blocks(v, k, "block_scale")?;
    let mut out = vec![0.0; v.len()];
    block_scale_into(v, k, &mut out);
    Ok(out)
}

/// Rotates the i-th coordinate pair of `v` by the angle `theta[i]`.
pub fn block_rotate(v: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    check_blocks(v, theta, "block_rotate")?;
    let mut out = vec![0.0; v.len()];
    block_rotate_into(v, theta, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn curvature_rejects_non_positive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!(Curvature::new(f64::INFINITY).is_err());
    }

    #[test]
    fn exp0_examples() {
        assert_eq!(exp0(&[0.0, 0.0], c(1.0)).unwrap(), vec![0.0, 0.0]);
        assert_close(&exp0(&[1.0, 0.0], c(1.0)).unwrap(), &[0.761_594_155_955_764_9, 0.0], 1e-15);
        // √c = 0.5, ‖v‖ = 0.5: factor tanh(0.25)/0.25
        assert_close(&exp0(&[0.5, 0.0], c(0.25)).unwrap(), &[0.489_837_324_807_418_26, 0.0], 1e-15);
        assert!(exp0(&[f64::NAN, 0.0], c(1.0)).is_err());
    }

    #[test]
    fn log0_examples() {
        assert_eq!(log0(&[0.0, 0.0], c(1.0)).unwrap(), vec![0.0, 0.0]);
        assert_close(&log0(&[0.761_594_155_955_764_9, 0.0], c(1.0)).unwrap(), &[1.0, 0.0], 1e-12);
        assert_close(&log0(&[0.5, 0.0], c(1.0)).unwrap(), &[0.549_306_144_334_054_8, 0.0], 1e-15);
        assert!(log0(&[f64::INFINITY, 0.0], c(1.0)).is_err());
    }

    #[test]
    fn log0_clamps_outside_points() {
        let before = clamp_events();
        let v = log0(&[2.0, 0.0], c(1.0)).unwrap();
        assert!(v[0].is_finite());
        assert!((v[0] - (1.0 - BALL_EPS).atanh() / 2.0 * 2.0).abs() < 1e-12);
        assert!(clamp_events() > before);
    }

    #[test]
    fn mobius_examples() {
        let x = [0.3, -0.2, 0.1, 0.4];
        assert_close(&mobius_add(&x, &[0.0; 4], c(1.0)).unwrap(), &x, 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_close(&mobius_add(&x, &neg, c(1.0)).unwrap(), &[0.0; 4], 1e-15);
        assert_close(&mobius_add(&[0.3, 0.0], &[0.4, 0.0], c(1.0)).unwrap(), &[0.625, 0.0], 1e-15);
    }

    #[test]
    fn mobius_rejects_points_outside() {
        assert!(mobius_add(&[1.0, 0.0], &[0.0, 0.0], c(1.0)).is_err());
        assert!(mobius_add(&[0.1, 0.0], &[0.0], c(1.0)).is_err());
    }

    #[test]
    fn mobius_denominator_error() {
        // c‖x‖² and c‖y‖² both just below one, antipodal: 1 - 2ab + a²b² = (1-ab)² → 0
        let ball = Ball {
            eps: 1e-5,
            small_norm: SMALL_NORM,
            min_denominator: 1e-6,
        };
        let a = 1.0 - 1e-4;
        let err = ball.mobius_add(&[a, 0.0], &[-a, 0.0], c(1.0)).unwrap_err();
        assert!(matches!(err, Error::Numeric { stage: "mobius_add", .. }));
    }

    #[test]
    fn distance_examples() {
        let x = [0.2, 0.1];
        assert_eq!(hyp_distance(&x, &x, c(1.0)).unwrap(), 0.0);
        let d = hyp_distance(&[0.5, 0.0], &[0.0, 0.0], c(1.0)).unwrap();
        assert!((d - 1.098_612_288_668_109_6).abs() < 1e-14);
        let d = hyp_distance(&[0.5, 0.0], &[0.0, 0.0], c(0.25)).unwrap();
        assert!((d - 1.021_651_247_531_981_4).abs() < 1e-14);
    }

    #[test]
    fn block_scale_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(block_scale(&v, &[1.0, 1.0]).unwrap(), v.to_vec());
        assert_eq!(block_scale(&v, &[2.0, 0.5]).unwrap(), vec![2.0, 4.0, 1.5, 2.0]);
        let s = block_scale(&[0.6, 0.8], &[3.0]).unwrap();
        assert!((norm(&s) - 3.0).abs() < 1e-15);
        assert!(block_scale(&v, &[1.0]).is_err());
        assert!(block_scale(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn block_rotate_examples() {
        let v = [0.3, -0.7, 1.1, 0.2];
        assert_eq!(block_rotate(&v, &[0.0, 0.0]).unwrap(), v.to_vec());
        assert_close(&block_rotate(&[1.0, 0.0], &[FRAC_PI_2]).unwrap(), &[0.0, 1.0], 1e-15);
        assert_close(
            &block_rotate(&[1.0, 0.0, 0.0, 1.0], &[PI, PI]).unwrap(),
            &[-1.0, 0.0, 0.0, -1.0],
            1e-15,
        );
        assert!(block_rotate(&v, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn project_examples() {
        assert_eq!(project_to_ball(&[0.3, 0.4], c(1.0)), vec![0.3, 0.4]);
        let p = project_to_ball(&[0.6, 0.8], c(1.0));
        assert!((norm(&p) - 0.99999).abs() < 1e-15);
        assert_eq!(project_to_ball(&[0.0, 0.0], c(4.0)), vec![0.0, 0.0]);
    }

    #[test]
    fn exp0_stays_inside_for_huge_vectors() {
        let x = exp0(&[1e3, -2e3], c(3.0)).unwrap();
        assert!(3.0 * dot(&x, &x) < 1.0);
        assert!(BallPoint::new(x, c(3.0)).is_ok());
    }

    #[test]
    fn ball_point_level() {
        let p = BallPoint::new(vec![0.5, 0.0], c(1.0)).unwrap();
        assert!((p.level() - 1.098_612_288_668_109_6).abs() < 1e-14);
        assert!(BallPoint::new(vec![1.0, 0.0], c(1.0)).is_err());
        assert_eq!(BallPoint::origin(4, c(2.0)).level(), 0.0);
    }
}
