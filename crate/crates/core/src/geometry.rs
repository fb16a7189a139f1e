//! Strictly convex planar domains and chord geometry.
//!
//! Two shape families are provided, both C² with strictly positive curvature:
//!
//! - `ellipse`: semi-axes `a, b`, arbitrary center and rotation;
//! - `squircle`: the level set `(1-w)·[(x/a)² + (y/b)²] + w·[(x/a)⁴ + (y/b)⁴] = 1`
//!   for squareness `w ∈ [0, 1)`. The quartic term bulges the ellipse towards
//!   a rounded rectangle while the quadratic term keeps the curvature bounded
//!   away from zero (the gauge Hessian is diagonal and positive definite away
//!   from the center).
//!
//! The boundary is parametrized by `t ∈ [0, 1)` counter-clockwise. For every
//! nonzero velocity the boundary splits into an ingoing arc (`v·n > 0`, `n`
//! the inward normal), an outgoing arc, and exactly two tangency points.
//! [`ConvexDomain::trace`] finds, for an interior point `z` and velocity `v`,
//! the backward entry point `z⁺ = z - s⁺v` and forward exit point
//! `z⁻ = z + s⁻v`; both are refined until they sit on the boundary to within
//! `1e-12 · diam`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec2::Vec2;

/// Number of cached boundary samples used for coarse scans.
const SCAN_SAMPLES: usize = 2048;
/// Panels of the cumulative arc-length table.
const ARCLEN_PANELS: usize = 4096;
/// Relative boundary collar: points this close to the boundary (relative to
/// the diameter) are treated as boundary points by `trace`.
const BOUNDARY_COLLAR_REL: f64 = 1e-9;
/// Relative target for boundary hit refinement.
const HIT_TOL_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point ({}, {}) lies outside the domain (distance {dist:.3e})", point.x, point.y)]
    PointOutsideDomain { point: Vec2, dist: f64 },
    #[error("direction vector must be nonzero")]
    ZeroDirection,
    #[error("boundary root refinement did not converge")]
    NoConvergence,
    #[error("boundary partition for direction ({}, {}) found {count} sign changes instead of 2", direction.x, direction.y)]
    DegenerateBoundary { direction: Vec2, count: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

/// Chord trace of an interior point along a velocity: `z⁺ = z - s⁺·v` is the
/// backward boundary hit (where inflow enters), `z⁻ = z + s⁻·v` the forward
/// one. Both `s` values are in velocity-time units (`s·|v|` is a length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTrace {
    pub s_plus: f64,
    pub s_minus: f64,
    pub z_plus: Vec2,
    pub z_minus: Vec2,
}

/// Closed boundary arc from `start` to `end` counter-clockwise in the `[0,1)`
/// parameter (wrapping through 0 when `end < start`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
}

impl Arc {
    /// Parameter length of the arc (fraction of the full boundary).
    pub fn param_len(&self) -> f64 {
        let d = self.end - self.start;
        if d >= 0.0 {
            d
        } else {
            d + 1.0
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        let t = t.rem_euclid(1.0);
        if self.start <= self.end {
            t >= self.start && t <= self.end
        } else {
            t >= self.start || t <= self.end
        }
    }

    /// Point at fraction `u ∈ [0,1]` along the arc.
    pub fn at(&self, u: f64) -> f64 {
        (self.start + u * self.param_len()).rem_euclid(1.0)
    }
}

/// Ingoing/outgoing split of the boundary for one velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPartition {
    /// Arc where `v·n > 0` (`n` inward): boundary data is prescribed here.
    pub arc_in: Arc,
    /// Arc where `v·n < 0`: the trace of the solution leaves here.
    pub arc_out: Arc,
    /// The two tangency parameters (`v·n = 0`), endpoints of both arcs.
    pub tangency: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Shape {
    Ellipse,
    Squircle { squareness: f64 },
}

/// A strictly convex C² domain. See the module docs for the shape families.
#[derive(Debug, Clone)]
pub struct ConvexDomain {
    shape: Shape,
    a: f64,
    b: f64,
    center: Vec2,
    rotation: f64,
    /// Cached boundary points at `t = i / SCAN_SAMPLES`.
    samples: Vec<Vec2>,
    bbox_min: Vec2,
    bbox_max: Vec2,
    r_max: f64,
    diam: f64,
    /// Cumulative arc length at `t = i / ARCLEN_PANELS` (last entry = total).
    arclen: Vec<f64>,
    total_len: f64,
}

impl ConvexDomain {
    pub fn ellipse(a: f64, b: f64, center: Vec2, rotation: f64) -> Result<Self, GeometryError> {
        Self::build(Shape::Ellipse, a, b, center, rotation)
    }

    pub fn squircle(
        a: f64,
        b: f64,
        squareness: f64,
        center: Vec2,
        rotation: f64,
    ) -> Result<Self, GeometryError> {
        if !(0.0..1.0).contains(&squareness) {
            return Err(GeometryError::InvalidShape(format!(
                "squareness must lie in [0, 1), got {squareness}"
            )));
        }
        Self::build(Shape::Squircle { squareness }, a, b, center, rotation)
    }

    /// Unit disk centered at the origin.
    pub fn unit_disk() -> Self {
        Self::ellipse(1.0, 1.0, Vec2::ZERO, 0.0).expect("unit disk is valid")
    }

    fn build(shape: Shape, a: f64, b: f64, center: Vec2, rotation: f64) -> Result<Self, GeometryError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(GeometryError::InvalidShape(format!(
                "semi-axes must be positive and finite, got a={a}, b={b}"
            )));
        }
        if !rotation.is_finite() || !center.is_finite() {
            return Err(GeometryError::InvalidShape("center/rotation must be finite".into()));
        }
        let mut dom = ConvexDomain {
            shape,
            a,
            b,
            center,
            rotation,
            samples: Vec::new(),
            bbox_min: Vec2::ZERO,
            bbox_max: Vec2::ZERO,
            r_max: 0.0,
            diam: 0.0,
            arclen: Vec::new(),
            total_len: 0.0,
        };
        dom.samples = (0..SCAN_SAMPLES)
            .map(|i| dom.boundary_point(i as f64 / SCAN_SAMPLES as f64))
            .collect();
        let (mut lo, mut hi) = (dom.samples[0], dom.samples[0]);
        let mut r_max = 0.0f64;
        for &p in &dom.samples {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            r_max = r_max.max((p - center).norm());
        }
        // The sample hull underestimates the true extent by O(curvature /
        // SCAN_SAMPLES²); pad generously since the box only sizes grids.
        let pad = 4.0 * r_max / SCAN_SAMPLES as f64;
        dom.bbox_min = lo - Vec2::new(pad, pad);
        dom.bbox_max = hi + Vec2::new(pad, pad);
        dom.r_max = r_max * (1.0 + 1e-9) + pad;
        dom.diam = 2.0 * dom.r_max;

        // Strict convexity check: sampled curvature must be positive.
        let min_curv = (0..SCAN_SAMPLES)
            .map(|i| dom.curvature(i as f64 / SCAN_SAMPLES as f64))
            .fold(f64::INFINITY, f64::min);
        if !(min_curv > 0.0) {
            return Err(GeometryError::InvalidShape(format!(
                "sampled curvature reaches {min_curv:.3e}; boundary is not strictly convex"
            )));
        }

        // Cumulative arc length by composite Simpson on each panel.
        let n = ARCLEN_PANELS;
        let mut acc = 0.0;
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        for i in 0..n {
            let t0 = i as f64 / n as f64;
            let t1 = (i + 1) as f64 / n as f64;
            let tm = 0.5 * (t0 + t1);
            let panel = (t1 - t0) / 6.0
                * (dom.boundary_speed(t0) + 4.0 * dom.boundary_speed(tm) + dom.boundary_speed(t1));
            acc += panel;
            table.push(acc);
        }
        dom.arclen = table;
        dom.total_len = acc;
        Ok(dom)
    }

    // ----- local/world frames and the gauge function -------------------------

    fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotated(-self.rotation)
    }

    fn to_world(&self, q: Vec2) -> Vec2 {
        q.rotated(self.rotation) + self.center
    }

    fn squareness(&self) -> f64 {
        match self.shape {
            Shape::Ellipse => 0.0,
            Shape::Squircle { squareness } => squareness,
        }
    }

    /// Gauge `φ`: negative inside, zero on the boundary, convex.
    pub fn gauge(&self, p: Vec2) -> f64 {
        let q = self.to_local(p);
        let (u, v) = (q.x / self.a, q.y / self.b);
        let (u2, v2) = (u * u, v * v);
        let w = self.squareness();
        (1.0 - w) * (u2 + v2) + w * (u2 * u2 + v2 * v2) - 1.0
    }

    /// World-frame gradient of the gauge.
    pub fn gauge_gradient(&self, p: Vec2) -> Vec2 {
        let q = self.to_local(p);
        let (u, v) = (q.x / self.a, q.y / self.b);
        let w = self.squareness();
        let gx = (2.0 * (1.0 - w) * u + 4.0 * w * u * u * u) / self.a;
        let gy = (2.0 * (1.0 - w) * v + 4.0 * w * v * v * v) / self.b;
        Vec2::new(gx, gy).rotated(self.rotation)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.gauge(p) < 0.0
    }

    /// Inward unit normal at a boundary point.
    pub fn inward_normal(&self, p: Vec2) -> Vec2 {
        let g = self.gauge_gradient(p);
        -g.normalized()
    }

    pub fn diameter(&self) -> f64 {
        self.diam
    }

    pub fn bbox(&self) -> (Vec2, Vec2) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn total_arc_length(&self) -> f64 {
        self.total_len
    }

    // ----- boundary parametrization ------------------------------------------

    /// Boundary point at parameter `t` (counter-clockwise, period 1).
    pub fn boundary_point(&self, t: f64) -> Vec2 {
        let th = 2.0 * std::f64::consts::PI * t;
        let (s, c) = th.sin_cos();
        let r = self.radius_at(c, s);
        self.to_world(Vec2::new(r * c, r * s))
    }

    /// Local polar radius of the boundary in direction `(c, s)`.
    fn radius_at(&self, c: f64, s: f64) -> f64 {
        let qa = c / self.a;
        let qb = s / self.b;
        let quad = qa * qa + qb * qb;
        let w = self.squareness();
        if w == 0.0 {
            return 1.0 / quad.sqrt();
        }
        let quart = qa * qa * qa * qa + qb * qb * qb * qb;
        let disc = (1.0 - w) * (1.0 - w) * quad * quad + 4.0 * w * quart;
        let r2 = (disc.sqrt() - (1.0 - w) * quad) / (2.0 * w * quart);
        r2.sqrt()
    }

    /// Tangent vector `dZ/dt` (not normalized), via implicit differentiation
    /// of the gauge along the polar parametrization.
    pub fn boundary_tangent(&self, t: f64) -> Vec2 {
        let th = 2.0 * std::f64::consts::PI * t;
        let (s, c) = th.sin_cos();
        let r = self.radius_at(c, s);
        let u = Vec2::new(c, s);
        let u_perp = Vec2::new(-s, c);
        let p = self.to_world(u * r);
        let grad = self.gauge_gradient(p).rotated(-self.rotation);
        let g_r = grad.dot(u);
        let g_th = grad.dot(u_perp) * r;
        let dr_dth = -g_th / g_r;
        let dz_dth = u * dr_dth + u_perp * r;
        (dz_dth * (2.0 * std::f64::consts::PI)).rotated(self.rotation)
    }

    /// `|dZ/dt|`, the arc-length density of the parametrization; boundary
    /// quadratures use `dσ = boundary_speed(t) dt`.
    pub fn boundary_speed(&self, t: f64) -> f64 {
        self.boundary_tangent(t).norm()
    }

    /// Signed curvature at parameter `t`; positive everywhere by strict
    /// convexity. Uses the closed-form level-set formula (the gauge Hessian is
    /// diagonal in the local frame).
    pub fn curvature(&self, t: f64) -> f64 {
        let p = self.boundary_point(t);
        let q = self.to_local(p);
        let (u, v) = (q.x / self.a, q.y / self.b);
        let w = self.squareness();
        let gx = (2.0 * (1.0 - w) * u + 4.0 * w * u * u * u) / self.a;
        let gy = (2.0 * (1.0 - w) * v + 4.0 * w * v * v * v) / self.b;
        let hxx = (2.0 * (1.0 - w) + 12.0 * w * u * u) / (self.a * self.a);
        let hyy = (2.0 * (1.0 - w) + 12.0 * w * v * v) / (self.b * self.b);
        let grad_norm = (gx * gx + gy * gy).sqrt();
        (hxx * gy * gy + hyy * gx * gx) / (grad_norm * grad_norm * grad_norm)
    }

    // ----- tracing -----------------------------------------------------------

    /// Traces the chord through `z` along `v`. `z` must lie inside the domain
    /// or within `1e-9 · diam` of the boundary; boundary points get a zero
    /// `s⁺` (entering side) or `s⁻` (exiting side).
    pub fn trace(&self, z: Vec2, v: Vec2) -> Result<RayTrace, GeometryError> {
        if v.norm() == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
        let phi = self.gauge(z);
        if phi > 0.0 {
            let dist = phi / self.gauge_gradient(z).norm().max(1e-300);
            if dist > BOUNDARY_COLLAR_REL * self.diam {
                return Err(GeometryError::PointOutsideDomain { point: z, dist });
            }
        }
        let s_minus = self.directed_root(z, v)?;
        let s_plus = self.directed_root(z, -v)?;
        Ok(RayTrace {
            s_plus,
            s_minus,
            z_plus: z - v * s_plus,
            z_minus: z + v * s_minus,
        })
    }

    /// Nonnegative root of `φ(z + s·v) = 0` in the `+v` direction. Returns 0
    /// when `z` is a boundary point with `v` pointing outward or tangent.
    fn directed_root(&self, z: Vec2, v: Vec2) -> Result<f64, GeometryError> {
        let phi0 = self.gauge(z);
        let grad0 = self.gauge_gradient(z);
        let on_boundary = phi0.abs()
            <= BOUNDARY_COLLAR_REL * self.diam * grad0.norm().max(1e-300);
        if (phi0 >= 0.0 || on_boundary) && grad0.dot(v) >= 0.0 {
            return Ok(0.0);
        }
        let s_max = (self.r_max + (z - self.center).norm() + self.diam * 0.01) / v.norm();
        if let Shape::Ellipse = self.shape {
            // Closed-form quadratic in local coordinates, then a Newton
            // polish on the gauge for uniform accuracy with the generic path.
            let q = self.to_local(z);
            let d = v.rotated(-self.rotation);
            let (aa, bb) = (self.a, self.b);
            let ca = (d.x / aa) * (d.x / aa) + (d.y / bb) * (d.y / bb);
            let cb = 2.0 * (q.x * d.x / (aa * aa) + q.y * d.y / (bb * bb));
            let cc = (q.x / aa) * (q.x / aa) + (q.y / bb) * (q.y / bb) - 1.0;
            let disc = (cb * cb - 4.0 * ca * cc).max(0.0);
            let root = if cb >= 0.0 {
                // Roots: (-cb ± sqrt) / 2ca; the forward one is the "+" root.
                (2.0 * cc) / (-cb - disc.sqrt() - f64::MIN_POSITIVE)
            } else {
                (-cb + disc.sqrt()) / (2.0 * ca)
            };
            let s = self.polish_root(z, v, root.max(0.0), s_max)?;
            return Ok(s);
        }
        // Generic path: bisection bracket [0, s_max], then Newton.
        let f = |s: f64| self.gauge(z + v * s);
        let mut lo = 0.0;
        let mut hi = s_max;
        debug_assert!(f(hi) > 0.0, "bracket top must be outside the domain");
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if f(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.polish_root(z, v, 0.5 * (lo + hi), s_max)
    }

    /// Newton refinement of a boundary hit until the hit point sits on the
    /// level set to within `1e-12 · diam`.
    fn polish_root(&self, z: Vec2, v: Vec2, s0: f64, s_max: f64) -> Result<f64, GeometryError> {
        let mut s = s0.clamp(0.0, s_max);
        for _ in 0..60 {
            let p = z + v * s;
            let phi = self.gauge(p);
            let grad = self.gauge_gradient(p);
            let slope = grad.dot(v);
            let dist = phi.abs() / grad.norm().max(1e-300);
            if dist <= HIT_TOL_REL * self.diam {
                return Ok(s.max(0.0));
            }
            if slope.abs() < 1e-300 {
                break;
            }
            s -= phi / slope;
            if !s.is_finite() {
                break;
            }
            s = s.clamp(-s_max, 2.0 * s_max);
        }
        Err(GeometryError::NoConvergence)
    }

    // ----- nearest point and boundary parameters -----------------------------

    /// Nearest boundary parameter and point for an arbitrary point `p`.
    pub fn nearest_boundary(&self, p: Vec2) -> (f64, Vec2, f64) {
        let stride = 4;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in (0..SCAN_SAMPLES).step_by(stride) {
            let d = (self.samples[i] - p).norm_sq();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let mut t = best as f64 / SCAN_SAMPLES as f64;
        // Newton on the stationarity condition (Z(t) - p)·Z'(t) = 0, with the
        // derivative approximated by the dominant |Z'|² term (Gauss-Newton).
        for _ in 0..30 {
            let zt = self.boundary_point(t);
            let dt = self.boundary_tangent(t);
            let g = (zt - p).dot(dt);
            let h = dt.norm_sq();
            let step = g / h;
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        t = t.rem_euclid(1.0);
        let zt = self.boundary_point(t);
        (t, zt, (zt - p).norm())
    }

    /// Boundary parameter of a point assumed to lie on (or very near) the
    /// boundary.
    pub fn param_of_boundary_point(&self, p: Vec2) -> f64 {
        self.nearest_boundary(p).0
    }

    // ----- ingoing/outgoing partition ----------------------------------------

    /// Splits the boundary into the ingoing arc (`v·n > 0`), the outgoing arc
    /// and the two tangency parameters. Fails if the sampled sign pattern does
    /// not show exactly two changes (which strict convexity guarantees).
    pub fn boundary_partition(&self, v: Vec2) -> Result<BoundaryPartition, GeometryError> {
        if v.norm() == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
        // g(t) > 0 on the outgoing side in terms of the gauge gradient
        // (outward normal); the ingoing arc is where g < 0.
        let g = |t: f64| self.gauge_gradient(self.boundary_point(t)).dot(v);
        let n = SCAN_SAMPLES;
        let mut changes = Vec::new();
        let mut prev = g(0.0);
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let cur = g(t);
            if prev == 0.0 || prev.signum() != cur.signum() {
                let (mut lo, mut hi) = ((i - 1) as f64 / n as f64, t);
                let mut glo = prev;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid);
                    if gm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if gm.signum() == glo.signum() {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                changes.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        if changes.len() != 2 {
            return Err(GeometryError::DegenerateBoundary { direction: v, count: changes.len() });
        }
        let (t0, t1) = (changes[0], changes[1]);
        // Decide which arc is ingoing by testing the midpoint of (t0, t1).
        let mid = 0.5 * (t0 + t1);
        let (arc_a, arc_b) = (Arc { start: t0, end: t1 }, Arc { start: t1, end: t0.rem_euclid(1.0) });
        let (arc_in, arc_out) = if g(mid) < 0.0 { (arc_a, arc_b) } else { (arc_b, arc_a) };
        Ok(BoundaryPartition { arc_in, arc_out, tangency: [t0, t1] })
    }

    // ----- arc length --------------------------------------------------------

    /// Arc length of a boundary arc, by adaptive Simpson quadrature of |Z'|.
    pub fn boundary_measure(&self, arc: &Arc) -> f64 {
        let len = arc.param_len();
        if len == 0.0 {
            return 0.0;
        }
        let f = |u: f64| self.boundary_speed(arc.start + u * len) * len;
        adaptive_simpson(&f, 0.0, 1.0, 1e-11, 24)
    }

    /// Cumulative arc length from parameter 0 to `t` (linear interpolation of
    /// the Simpson table; used for boundary mollifier windows).
    pub fn arc_length_at(&self, t: f64) -> f64 {
        let t = t.rem_euclid(1.0);
        let x = t * ARCLEN_PANELS as f64;
        let i = (x.floor() as usize).min(ARCLEN_PANELS - 1);
        let frac = x - i as f64;
        self.arclen[i] + frac * (self.arclen[i + 1] - self.arclen[i])
    }

    /// Inverse of [`Self::arc_length_at`]: the parameter at cumulative arc
    /// length `s` (wrapped to the total length).
    pub fn param_at_arc_length(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.total_len);
        // Binary search the monotone cumulative table.
        let mut lo = 0usize;
        let mut hi = ARCLEN_PANELS;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.arclen[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let seg = self.arclen[lo + 1] - self.arclen[lo];
        let frac = if seg > 0.0 { (s - self.arclen[lo]) / seg } else { 0.0 };
        (lo as f64 + frac) / ARCLEN_PANELS as f64
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, depth)
}
