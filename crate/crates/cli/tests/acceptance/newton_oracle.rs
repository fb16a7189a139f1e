//! Dense Newton reference solver for the four-velocity model on the unit
//! disk, used to cross-check the sweep-based Picard solver.
//!
//! Everything numeric is rebuilt here from first principles: analytic ray
//! intersections with the circle, an own periodic piecewise-linear boundary
//! evaluator, an own bilinear interpolator, the collision terms written out
//! by hand, and the implicit-trapezoid chord recurrence assembled into one
//! global nonlinear system over all stored nodes and species. That system is
//! solved by damped Newton with an exact dense Jacobian (forward-mode dual
//! numbers, one directional derivative per column) and partial-pivot LU.
//! Only the mesh bookkeeping (node layout, storage mask, nearest-boundary
//! anchors) and the boundary knot table are shared with the library.

use std::f64::consts::TAU;
use std::ops::{Add, Div, Mul, Sub};
use std::sync::Arc;

use dvm_core::fields::NodeClass;
use dvm_core::{Grid, Vec2};

/// Forward-mode dual number: a value and one directional derivative.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.v * o.d + self.d * o.v }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

/// The scalar the residual is generic over: plain values or dual numbers.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn lift(v: f64) -> Self;
}

impl Scalar for f64 {
    fn lift(v: f64) -> f64 {
        v
    }
}

impl Scalar for Dual {
    fn lift(v: f64) -> Dual {
        Dual { v, d: 0.0 }
    }
}

/// Periodic piecewise-linear evaluation of sorted knots `(t, value)` on the
/// unit circle of parameter, period 1.
fn pl_eval(knots: &[(f64, f64)], t: f64) -> f64 {
    let n = knots.len();
    assert!(n >= 2, "need at least two knots");
    let t = t.rem_euclid(1.0);
    let j = match knots.iter().position(|&(tk, _)| tk > t) {
        Some(0) | None => n - 1,
        Some(p) => p - 1,
    };
    let (t0, v0) = knots[j];
    let (mut t1, v1) = knots[(j + 1) % n];
    if t1 <= t0 {
        t1 += 1.0;
    }
    let mut tt = t;
    if tt < t0 {
        tt += 1.0;
    }
    v0 + (v1 - v0) * ((tt - t0) / (t1 - t0))
}

/// One discretized characteristic: ingoing endpoint, boundary value there,
/// transit time and step count.
struct Chord {
    entry: Vec2,
    boundary_value: f64,
    total: f64,
    steps: u32,
}

/// The full discrete system on the unit disk for four velocities and the
/// single reaction `(1,2) <-> (3,4)` with a symmetric rate.
pub struct DenseSystem {
    grid: Arc<Grid>,
    vel: [Vec2; 4],
    rate: f64,
    stored: Vec<u32>,
    /// Species-major: chord of unknown `i * ns + q`.
    chords: Vec<Chord>,
}

impl DenseSystem {
    pub fn build(grid: Arc<Grid>, vel: [Vec2; 4], rate: f64, knots: &[Vec<(f64, f64)>]) -> Self {
        assert_eq!(knots.len(), 4, "one knot table per species");
        let stored = grid.stored_nodes().to_vec();
        let mut chords = Vec::with_capacity(4 * stored.len());
        for (i, &v) in vel.iter().enumerate() {
            let speed = v.norm();
            for &idx in &stored {
                let z = grid.node_pos(idx as usize);
                let anchor = match grid.class(idx as usize) {
                    NodeClass::Interior => z,
                    _ => z * (1.0 / z.norm()),
                };
                // Largest s >= 0 with |anchor - s v| = 1: the ingoing point.
                let a2 = v.norm_sq();
                let b = v.dot(anchor);
                let c = anchor.norm_sq() - 1.0;
                let disc = (b * b - a2 * c).max(0.0);
                let total = ((b + disc.sqrt()) / a2).max(0.0);
                let entry = anchor - v * total;
                let t = (entry.y.atan2(entry.x) / TAU).rem_euclid(1.0);
                let boundary_value = pl_eval(&knots[i], t);
                let steps = if total > 0.0 {
                    ((total * speed / grid.h()).ceil() as u32).max(1)
                } else {
                    0
                };
                chords.push(Chord { entry, boundary_value, total, steps });
            }
        }
        DenseSystem { grid, vel, rate, stored, chords }
    }

    pub fn unknown_count(&self) -> usize {
        4 * self.stored.len()
    }

    /// Ingoing boundary values transported unchanged: the Newton start point.
    pub fn transported_data(&self) -> Vec<f64> {
        self.chords.iter().map(|c| c.boundary_value).collect()
    }

    /// Dense per-node arrays (species-major unknowns scattered onto the
    /// lattice; non-stored nodes stay zero, matching the field convention).
    pub fn scatter<S: Scalar>(&self, u: &[S]) -> [Vec<S>; 4] {
        let n = self.grid.node_count();
        let ns = self.stored.len();
        let z = S::lift(0.0);
        let mut f = [vec![z; n], vec![z; n], vec![z; n], vec![z; n]];
        for (i, fi) in f.iter_mut().enumerate() {
            for (q, &idx) in self.stored.iter().enumerate() {
                fi[idx as usize] = u[i * ns + q];
            }
        }
        f
    }

    /// Loss frequencies and gains of the reaction `(1,2) <-> (3,4)`, written
    /// out per species: each pair appears twice in the symmetry orbit.
    fn collision<S: Scalar>(&self, f: &[Vec<S>; 4]) -> ([Vec<S>; 4], [Vec<S>; 4]) {
        let n = self.grid.node_count();
        let z = S::lift(0.0);
        let g2 = S::lift(2.0 * self.rate);
        let mut nu = [vec![z; n], vec![z; n], vec![z; n], vec![z; n]];
        let mut gain = nu.clone();
        for &idx in &self.stored {
            let q = idx as usize;
            let (f0, f1, f2, f3) = (f[0][q], f[1][q], f[2][q], f[3][q]);
            let lo = g2 * (f0 * f1);
            let hi = g2 * (f2 * f3);
            nu[0][q] = g2 * f1;
            nu[1][q] = g2 * f0;
            nu[2][q] = g2 * f3;
            nu[3][q] = g2 * f2;
            gain[0][q] = hi;
            gain[1][q] = hi;
            gain[2][q] = lo;
            gain[3][q] = lo;
        }
        (nu, gain)
    }

    /// Bilinear interpolation with the same clamped-cell semantics as the
    /// library grid, rebuilt here over generic scalars.
    fn bilin<S: Scalar>(&self, vals: &[S], p: Vec2) -> S {
        let o = self.grid.origin();
        let h = self.grid.h();
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let gx = (p.x - o.x) / h;
        let gy = (p.y - o.y) / h;
        let ix = (gx.floor() as isize).clamp(0, nx as isize - 2) as usize;
        let iy = (gy.floor() as isize).clamp(0, ny as isize - 2) as usize;
        let fx = (gx - ix as f64).clamp(0.0, 1.0);
        let fy = (gy - iy as f64).clamp(0.0, 1.0);
        let idx = iy * nx + ix;
        vals[idx] * S::lift((1.0 - fx) * (1.0 - fy))
            + vals[idx + 1] * S::lift(fx * (1.0 - fy))
            + vals[idx + nx] * S::lift((1.0 - fx) * fy)
            + vals[idx + nx + 1] * S::lift(fx * fy)
    }

    /// Implicit-trapezoid march along one chord, ingoing endpoint to anchor.
    fn march<S: Scalar>(&self, nu: &[S], gain: &[S], chord: &Chord, v: Vec2) -> S {
        let mut f = S::lift(chord.boundary_value);
        if chord.steps == 0 {
            return f;
        }
        let ds = chord.total / chord.steps as f64;
        let half = S::lift(0.5 * ds);
        let one = S::lift(1.0);
        let mut z = chord.entry;
        let mut nu_c = self.bilin(nu, z);
        let mut g_c = self.bilin(gain, z);
        for _ in 0..chord.steps {
            let zn = z + v * ds;
            let nu_n = self.bilin(nu, zn);
            let g_n = self.bilin(gain, zn);
            f = ((one - half * nu_c) * f + half * (g_c + g_n)) / (one + half * nu_n);
            z = zn;
            nu_c = nu_n;
            g_c = g_n;
        }
        f
    }

    /// Residual of the fixed-point form: `u - march(u)` per unknown.
    pub fn residual<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        let f = self.scatter(u);
        let (nu, gain) = self.collision(&f);
        let ns = self.stored.len();
        let mut r = Vec::with_capacity(u.len());
        for i in 0..4 {
            for q in 0..ns {
                let end = self.march(&nu[i], &gain[i], &self.chords[i * ns + q], self.vel[i]);
                r.push(u[i * ns + q] - end);
            }
        }
        r
    }

    /// Exact dense Jacobian, one dual-number residual sweep per column.
    fn jacobian(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let n = u.len();
        let mut j = vec![vec![0.0; n]; n];
        for col in 0..n {
            let ud: Vec<Dual> = u
                .iter()
                .enumerate()
                .map(|(q, &v)| Dual { v, d: if q == col { 1.0 } else { 0.0 } })
                .collect();
            for (row, r) in self.residual(&ud).into_iter().enumerate() {
                j[row][col] = r.d;
            }
        }
        j
    }

    /// Damped Newton from transported boundary data. Returns the solution,
    /// the iteration count and the final residual norm.
    pub fn solve(&self) -> (Vec<f64>, usize, f64) {
        let mut u = self.transported_data();
        let scale = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let tol = 1e-12 * (1.0 + scale);
        for iter in 0..50 {
            let r = self.residual(&u);
            let norm = linf(&r);
            if norm <= tol {
                return (u, iter, norm);
            }
            let mut j = self.jacobian(&u);
            let mut delta = r;
            lu_solve(&mut j, &mut delta).expect("reference Jacobian must stay nonsingular");
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> =
                    u.iter().zip(&delta).map(|(&a, &d)| a - lambda * d).collect();
                if linf(&self.residual(&trial)) < norm || lambda < 1.0 / 64.0 {
                    u = trial;
                    break;
                }
                lambda *= 0.5;
            }
        }
        panic!("dense Newton reference did not reach tolerance {tol:.3e}");
    }
}

fn linf(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// In-place partial-pivot LU factorization and solve; `b` becomes the answer.
fn lu_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<(), String> {
    let n = b.len();
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k][k].abs();
        for (r, row) in a.iter().enumerate().skip(k + 1) {
            let m = row[k].abs();
            if m > best {
                best = m;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(format!("singular pivot at column {k}"));
        }
        if piv != k {
            a.swap(k, piv);
            b.swap(k, piv);
        }
        let (top, rest) = a.split_at_mut(k + 1);
        let row_k = &top[k];
        let akk = row_k[k];
        for (r, row) in rest.iter_mut().enumerate() {
            let m = row[k] / akk;
            if m != 0.0 {
                for c in k..n {
                    row[c] -= m * row_k[c];
                }
                b[k + 1 + r] -= m * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= a[k][c] * b[c];
        }
        b[k] = s / a[k][k];
    }
    Ok(())
}
