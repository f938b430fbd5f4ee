//! Elliptical non-conducting region: containment, projection and perimeter.
//!
//! The ellipse is centred at `center`, with semi-axis `a` along the direction
//! `phi` and semi-axis `b` perpendicular to it. Local coordinates of a point
//! `p` are `u = Δx cos φ + Δy sin φ`, `v = −Δx sin φ + Δy cos φ`.

use core::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::GeometryError;
use crate::math;

/// Default hole centre in millimetres.
pub const DEFAULT_CENTER: Point2 = Point2 { x: 50.0, y: 50.0 };

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(self, other: Point2) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl core::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl core::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// The inferred parameter `[a, b, phi]` plus the fixed centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParam {
    /// Semi-axis along the inclination direction [mm].
    pub a: f64,
    /// Perpendicular semi-axis [mm].
    pub b: f64,
    /// Inclination [rad].
    pub phi: f64,
    pub center: Point2,
}

impl GeometryParam {
    /// Builds a parameter at the default centre, validating the invariants.
    pub fn new(a: f64, b: f64, phi: f64) -> Result<Self, GeometryError> {
        Self::with_center(a, b, phi, DEFAULT_CENTER)
    }

    pub fn with_center(a: f64, b: f64, phi: f64, center: Point2) -> Result<Self, GeometryError> {
        let theta = Self { a, b, phi, center };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(GeometryError::NonPositiveAxis { name: "a", value: self.a });
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(GeometryError::NonPositiveAxis { name: "b", value: self.b });
        }
        if !(self.phi > -PI && self.phi <= PI) {
            return Err(GeometryError::AngleOutOfRange(self.phi));
        }
        if !self.center.is_finite() {
            return Err(GeometryError::NonFiniteCenter);
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.a, self.b, self.phi]
    }

    /// Local (major, minor) coordinates of `p`.
    #[inline]
    pub fn local(&self, p: Point2) -> (f64, f64) {
        let (s, c) = (math::sin(self.phi), math::cos(self.phi));
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Inverse of [`GeometryParam::local`].
    #[inline]
    pub fn global(&self, u: f64, v: f64) -> Point2 {
        let (s, c) = (math::sin(self.phi), math::cos(self.phi));
        Point2::new(self.center.x + u * c - v * s, self.center.y + u * s + v * c)
    }

    /// `u²/a² + v²/b²`; below one strictly inside.
    #[inline]
    pub fn level(&self, p: Point2) -> f64 {
        let (s, c) = (math::sin(self.phi), math::cos(self.phi));
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        let u = dx * c + dy * s;
        let (ia, ib) = (1.0 / (self.a * self.a), 1.0 / (self.b * self.b));
        // v² = r² − u², so a circle never sees the rotation
        (dx * dx + dy * dy) * ib + u * u * (ia - ib)
    }

    /// Boundary point at parametric angle `t`.
    #[inline]
    pub fn boundary_point(&self, t: f64) -> Point2 {
        self.global(self.a * math::cos(t), self.b * math::sin(t))
    }

    /// Parametric angle of the elliptic-polar direction of `p`.
    #[inline]
    pub fn parametric_angle(&self, p: Point2) -> f64 {
        let (u, v) = self.local(p);
        math::atan2(v / self.b, u / self.a)
    }

    /// Half-extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = (math::sin(self.phi), math::cos(self.phi));
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        (math::sqrt(a2 * c * c + b2 * s * s), math::sqrt(a2 * s * s + b2 * c * c))
    }
}

/// Strict interior test; boundary points are outside.
#[inline]
pub fn contains(theta: &GeometryParam, p: Point2) -> bool {
    theta.level(p) < 1.0
}

/// Closest boundary point to `p` together with its parametric angle.
pub fn closest_point_with_angle(theta: &GeometryParam, p: Point2) -> (Point2, f64) {
    let (u, v) = theta.local(p);
    let t = closest_angle(theta.a, theta.b, u, v);
    (theta.boundary_point(t), t)
}

/// Closest point on the ellipse boundary to `p`.
pub fn closest_point_on_ellipse(theta: &GeometryParam, p: Point2) -> Point2 {
    closest_point_with_angle(theta, p).0
}

/// Euclidean distance from `p` to the ellipse boundary.
pub fn boundary_distance(theta: &GeometryParam, p: Point2) -> f64 {
    closest_point_on_ellipse(theta, p).dist(p)
}

const NEWTON_MAX_ITER: usize = 100;
const ANGLE_TOL: f64 = 1e-12;
const COARSE_SAMPLES: usize = 64;
const DENSE_SAMPLES: usize = 10_000;

#[inline]
fn sq_dist(a: f64, b: f64, u: f64, v: f64, t: f64) -> f64 {
    let du = a * math::cos(t) - u;
    let dv = b * math::sin(t) - v;
    du * du + dv * dv
}

// Half derivative of the squared distance along the boundary.
#[inline]
fn stationarity(a: f64, b: f64, u: f64, v: f64, t: f64) -> (f64, f64) {
    let (s, c) = (math::sin(t), math::cos(t));
    let g = (b * b - a * a) * s * c + u * a * s - v * b * c;
    let dg = (b * b - a * a) * (c * c - s * s) + u * a * c + v * b * s;
    (g, dg)
}

fn closest_angle(a: f64, b: f64, u: f64, v: f64) -> f64 {
    let mut best_t = 0.0;
    let mut best_d = f64::INFINITY;
    for k in 0..COARSE_SAMPLES {
        let t = -PI + TAU * (k as f64) / (COARSE_SAMPLES as f64);
        let d = sq_dist(a, b, u, v, t);
        if d < best_d {
            best_d = d;
            best_t = t;
        }
    }
    let step = TAU / COARSE_SAMPLES as f64;
    if let Some(t) = newton(a, b, u, v, best_t, step) {
        return t;
    }
    dense_scan(a, b, u, v)
}

fn newton(a: f64, b: f64, u: f64, v: f64, t0: f64, bracket: f64) -> Option<f64> {
    let mut t = t0;
    for _ in 0..NEWTON_MAX_ITER {
        let (g, dg) = stationarity(a, b, u, v, t);
        if !(dg > 0.0) {
            return None;
        }
        let dt = g / dg;
        t -= dt;
        if math::abs(t - t0) > bracket {
            return None;
        }
        if math::abs(dt) < ANGLE_TOL {
            return Some(t);
        }
    }
    None
}

fn dense_scan(a: f64, b: f64, u: f64, v: f64) -> f64 {
    let h = TAU / DENSE_SAMPLES as f64;
    let mut best_k = 0usize;
    let mut best_d = f64::INFINITY;
    for k in 0..DENSE_SAMPLES {
        let d = sq_dist(a, b, u, v, -PI + h * k as f64);
        if d < best_d {
            best_d = d;
            best_k = k;
        }
    }
    let centre = -PI + h * best_k as f64;
    // Bisection on the stationarity condition inside the bracketing cell;
    // golden-section fallback if the sign does not change.
    let (mut lo, mut hi) = (centre - h, centre + h);
    let (glo, ghi) = (stationarity(a, b, u, v, lo).0, stationarity(a, b, u, v, hi).0);
    if glo <= 0.0 && ghi >= 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if stationarity(a, b, u, v, mid).0 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < ANGLE_TOL {
                break;
            }
        }
        return 0.5 * (lo + hi);
    }
    let inv_phi = 0.5 * (math::sqrt(5.0) - 1.0);
    while hi - lo > ANGLE_TOL {
        let x1 = hi - inv_phi * (hi - lo);
        let x2 = lo + inv_phi * (hi - lo);
        if sq_dist(a, b, u, v, x1) < sq_dist(a, b, u, v, x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

/// Circumference by adaptive Simpson quadrature of the arc-length element.
pub fn perimeter(theta: &GeometryParam) -> f64 {
    ellipse_perimeter(theta.a, theta.b)
}

pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let f = |t: f64| {
        let (s, c) = (math::sin(t), math::cos(t));
        math::sqrt(a * a * s * s + b * b * c * c)
    };
    4.0 * adaptive_simpson(&f, 0.0, FRAC_PI_2, 1e-12 * (a + b), 50)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(mid), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, lo, hi, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (lo + hi);
    let (lm, rm) = (0.5 * (lo + mid), 0.5 * (mid + hi));
    let (flm, frm) = (f(lm), f(rm));
    let left = (mid - lo) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || math::abs(delta) <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, lo, mid, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, mid, hi, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn theta(a: f64, b: f64, phi: f64) -> GeometryParam {
        GeometryParam::new(a, b, phi).unwrap()
    }

    #[test]
    fn containment_examples() {
        let t = theta(10.0, 4.0, 0.0);
        assert!(contains(&t, Point2::new(59.0, 50.0)));
        assert_abs_diff_eq!(t.level(Point2::new(59.0, 50.0)), 0.81, epsilon = 1e-12);
        assert!(!contains(&t, Point2::new(50.0, 55.0)));
        assert_abs_diff_eq!(t.level(Point2::new(50.0, 55.0)), 1.5625, epsilon = 1e-12);
        for phi in [-1.0, 0.0, 0.4, 2.0] {
            let c = theta(9.0, 9.0, phi);
            assert!(!contains(&c, Point2::new(59.0, 50.0)));
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(GeometryParam::new(0.0, 1.0, 0.0).is_err());
        assert!(GeometryParam::new(1.0, -1.0, 0.0).is_err());
        assert!(GeometryParam::new(1.0, 1.0, -PI).is_err());
        assert!(GeometryParam::new(1.0, 1.0, PI).is_ok());
    }

    #[test]
    fn closest_point_examples() {
        let c = theta(9.0, 9.0, 0.0);
        let q = closest_point_on_ellipse(&c, Point2::new(55.0, 50.0));
        assert_abs_diff_eq!(q.x, 59.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.y, 50.0, epsilon = 1e-10);

        let e = theta(10.0, 4.0, 0.0);
        let q = closest_point_on_ellipse(&e, Point2::new(70.0, 50.0));
        assert_abs_diff_eq!(q.x, 60.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.y, 50.0, epsilon = 1e-10);
    }

    // Brute-force angular scan, independent of the Newton path.
    fn scan_oracle(t: &GeometryParam, p: Point2) -> Point2 {
        let n = 2_000_000;
        let mut best = (f64::INFINITY, Point2::default());
        for k in 0..n {
            let q = t.boundary_point(TAU * k as f64 / n as f64);
            let d = q.dist(p);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    #[test]
    fn closest_point_interior_matches_scan_and_is_perpendicular() {
        let e = theta(10.0, 4.0, 0.0);
        let p = Point2::new(52.0, 53.0);
        let (q, t) = closest_point_with_angle(&e, p);
        let oracle = scan_oracle(&e, p);
        assert!(q.dist(oracle) < 1e-4, "q={q:?} oracle={oracle:?}");
        assert!((q.dist(p) - oracle.dist(p)).abs() < 1e-9);
        let tangent = (-e.a * t.sin(), e.b * t.cos());
        let dot = (p.x - q.x) * tangent.0 + (p.y - q.y) * tangent.1;
        assert!(dot.abs() < 1e-8, "dot={dot}");
        assert_abs_diff_eq!(e.level(q), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn dense_scan_fallback_agrees_with_newton() {
        let (a, b, u, v) = (10.0, 4.0, 2.0, 3.0);
        let t1 = closest_angle(a, b, u, v);
        let t2 = dense_scan(a, b, u, v);
        assert!((sq_dist(a, b, u, v, t1) - sq_dist(a, b, u, v, t2)).abs() < 1e-12);
    }

    #[test]
    fn perimeter_examples() {
        assert_abs_diff_eq!(ellipse_perimeter(9.0, 9.0), TAU * 9.0, epsilon = 1e-9);
        // 4a E(1 - b²/a²) evaluated with mpmath.
        let p = ellipse_perimeter(10.0, 4.0);
        assert!((p - 46.0262251913297).abs() / p < 1e-8, "p={p}");
        let h = ((10.0f64 - 4.0) / 14.0).powi(2);
        let ramanujan = PI * 14.0 * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
        assert!((p - ramanujan).abs() / p < 1e-3);
        let mut prev = 0.0;
        for k in 1..8 {
            let pk = ellipse_perimeter(10.0, 10f64.powi(-k));
            assert!(pk > 40.0 && (prev == 0.0 || pk < prev));
            prev = pk;
        }
        assert!((prev - 40.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn swap_axes_with_quarter_turn(a in 2.0..16.0f64, b in 2.0..16.0f64, phi in -1.5..1.5f64,
                                       x in 30.0..70.0f64, y in 30.0..70.0f64) {
            let t1 = theta(a, b, phi);
            let t2 = theta(b, a, phi + FRAC_PI_2);
            let p = Point2::new(x, y);
            let (l1, l2) = (t1.level(p), t2.level(p));
            prop_assume!((l1 - 1.0).abs() > 1e-9);
            prop_assert_eq!(contains(&t1, p), contains(&t2, p));
            prop_assert!((l1 - l2).abs() < 1e-9 * l1.max(1.0));
        }

        #[test]
        fn perimeter_symmetric(a in 0.5..20.0f64, b in 0.5..20.0f64) {
            let (p1, p2) = (ellipse_perimeter(a, b), ellipse_perimeter(b, a));
            prop_assert!((p1 - p2).abs() < 1e-8 * p1);
        }

        #[test]
        fn closest_point_on_boundary(a in 2.0..16.0f64, b in 2.0..16.0f64, phi in -1.5..1.5f64,
                                     x in 20.0..80.0f64, y in 20.0..80.0f64) {
            let t = theta(a, b, phi);
            let p = Point2::new(x, y);
            prop_assume!(p.dist(t.center) > 1e-6);
            let q = closest_point_on_ellipse(&t, p);
            prop_assert!((t.level(q) - 1.0).abs() < 1e-10);
            // never farther than the radial projection
            let (u, v) = t.local(p);
            let r = (u * u / (a * a) + v * v / (b * b)).sqrt();
            let radial = t.global(u / r, v / r);
            prop_assert!(q.dist(p) <= radial.dist(p) + 1e-9);
        }
    }
}
