//! Pointwise collision operators: truncated gain/loss with optional damping
//! convolution, the untruncated quadratic operator, and the entropy
//! production functional.
//!
//! With `T(x) = x / (1 + x/k)` the truncated operator of species `i` reads
//!
//! ```text
//! gain_i = ∑ Γ_ij^lm T(F_l) T(C_m)
//! ν_i    = ∑ Γ_ij^lm C_j / ((1 + F_i/k)(1 + C_j/k))      (so F_i ν_i = ∑ Γ T(F_i) T(C_j))
//! net_i  = gain_i − F_i ν_i
//! ```
//!
//! where `C` is the mollified companion field in the damped layer and `F`
//! itself otherwise. `k = ∞` makes `T` the identity and recovers the plain
//! quadratic operator — both paths share this code, and their agreement is
//! covered by tests.

use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{mollify, DensityField, FieldError};
use crate::model::VelocityModel;
use crate::vec2::Vec2;

/// Clamp bound for log ratios in the entropy summand; hitting it is counted
/// and surfaced by diagnostics rather than silently saturating.
const LOG_RATIO_CLAMP: f64 = 700.0;

#[derive(Debug, Error)]
pub enum CollisionError {
    #[error("non-finite input value for species {} at ({x}, {y})", species + 1)]
    NonfiniteValue { species: usize, x: f64, y: f64 },
    #[error("species count mismatch: model has p = {model_p}, field has {field_p}")]
    SpeciesMismatch { model_p: usize, field_p: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Gain, collision frequency, and net collision term on the field's grid.
/// Arrays are node-indexed like the field; only stored (interior + collar)
/// nodes carry values.
#[derive(Debug, Clone)]
pub struct CollisionEval {
    pub gain: Vec<Vec<f64>>,
    pub frequency: Vec<Vec<f64>>,
    pub net: Vec<Vec<f64>>,
}

impl CollisionEval {
    /// Bilinear sample of one species' gain at a point.
    pub fn gain_at(&self, field: &DensityField, i: usize, p: Vec2) -> f64 {
        field.grid().bilinear(&self.gain[i], p)
    }

    /// Bilinear sample of one species' frequency at a point.
    pub fn frequency_at(&self, field: &DensityField, i: usize, p: Vec2) -> f64 {
        field.grid().bilinear(&self.frequency[i], p)
    }
}

#[inline]
fn truncate(x: f64, k: f64) -> f64 {
    if k.is_finite() {
        x / (1.0 + x / k)
    } else {
        x
    }
}

fn check_finite(model: &VelocityModel, f: &DensityField) -> Result<(), CollisionError> {
    if model.p() != f.species_count() {
        return Err(CollisionError::SpeciesMismatch { model_p: model.p(), field_p: f.species_count() });
    }
    for i in 0..f.species_count() {
        let vs = f.species(i);
        for &idx in f.grid().stored_nodes() {
            if !vs[idx as usize].is_finite() {
                let pos = f.grid().node_pos(idx as usize);
                return Err(CollisionError::NonfiniteValue { species: i, x: pos.x, y: pos.y });
            }
        }
    }
    Ok(())
}

/// Truncated collision operator at level `k` on field `f`. In the damped
/// layer (`damped = true`) the second factor of every product reads the
/// mollified companion `fconv`; otherwise `f` is used in both slots and
/// `fconv` is ignored.
pub fn eval_truncated(
    model: &VelocityModel,
    f: &DensityField,
    fconv: &DensityField,
    k: f64,
    damped: bool,
) -> Result<CollisionEval, CollisionError> {
    check_finite(model, f)?;
    if damped {
        check_finite(model, fconv)?;
    }
    let grid = f.grid();
    let n = grid.node_count();
    let p = model.p();
    let conv = if damped { fconv } else { f };

    let mut gain = vec![vec![0.0; n]; p];
    let mut frequency = vec![vec![0.0; n]; p];
    let mut net = vec![vec![0.0; n]; p];
    for i in 0..p {
        let reactions = model.reactions_of(i);
        let fi = f.species(i);
        let results: Vec<(u32, f64, f64)> = grid
            .stored_nodes()
            .par_iter()
            .map(|&idx| {
                let q = idx as usize;
                let mut g = 0.0;
                let mut nu = 0.0;
                let fiq = fi[q];
                for &(j, l, m, gamma) in reactions {
                    g += gamma * truncate(f.species(l)[q], k) * truncate(conv.species(m)[q], k);
                    let cj = conv.species(j)[q];
                    nu += if k.is_finite() {
                        gamma * cj / ((1.0 + fiq / k) * (1.0 + cj / k))
                    } else {
                        gamma * cj
                    };
                }
                (idx, g, nu)
            })
            .collect();
        for (idx, g, nu) in results {
            let q = idx as usize;
            gain[i][q] = g;
            frequency[i][q] = nu;
            net[i][q] = g - fi[q] * nu;
        }
    }
    Ok(CollisionEval { gain, frequency, net })
}

/// Plain quadratic collision operator `∑ Γ (f_l f_m − f_i f_j)`, used by the
/// mild-residual diagnostic. Identical to [`eval_truncated`] with the `k = ∞`
/// sentinel and no damping.
pub fn eval_untruncated(
    model: &VelocityModel,
    f: &DensityField,
) -> Result<CollisionEval, CollisionError> {
    eval_truncated(model, f, f, f64::INFINITY, false)
}

/// The collision fields a transport sweep at level `(alpha, k)` freezes: for
/// `alpha > 0` the second factors read the alpha-radius convolution of `f`,
/// degrading to the identity when the discrete kernel would be unresolvable
/// (`alpha < 2h`). The solver and the flux diagnostics both route through
/// here so residual checks see exactly the operator that produced the field.
pub fn frozen_fields(
    model: &VelocityModel,
    f: &DensityField,
    alpha: f64,
    k: f64,
) -> Result<CollisionEval, CollisionError> {
    let damped = alpha > 0.0 && alpha >= 2.0 * f.grid().h();
    let fconv = if damped { Some(mollify(f, alpha)?) } else { None };
    eval_truncated(model, f, fconv.as_ref().unwrap_or(f), k, damped)
}

/// Entropy production of the truncated operator: the domain integral of
/// `∑ Γ (a − b)(ln a − ln b)` with `a = T(F_l)T(F_m)`, `b = T(F_i)T(F_j)`,
/// evaluated at interior cell midpoints. Nonnegative term by term.
pub fn entropy_production(model: &VelocityModel, f: &DensityField, k: f64) -> f64 {
    entropy_production_flagged(model, f, k).0
}

/// [`entropy_production`] together with the number of summands whose log
/// ratio hit the ±700 clamp (possible only when exactly one side vanishes).
pub fn entropy_production_flagged(model: &VelocityModel, f: &DensityField, k: f64) -> (f64, usize) {
    let grid = f.grid();
    let p = model.p();
    let entries: Vec<(usize, usize, usize, usize, f64)> = model
        .gamma_entries()
        .filter(|&(_, g)| g > 0.0)
        .map(|((i, j, l, m), g)| (i, j, l, m, g))
        .collect();

    let per_cell: Vec<(f64, usize)> = grid
        .cells_inside()
        .par_iter()
        .map(|&cell| {
            let z = grid.cell_center(cell);
            let mut vals = Vec::with_capacity(p);
            for i in 0..p {
                vals.push(truncate(f.eval(i, z), k));
            }
            let mut acc = 0.0;
            let mut clamps = 0usize;
            for &(i, j, l, m, g) in &entries {
                let a = vals[l] * vals[m];
                let b = vals[i] * vals[j];
                if a == b {
                    continue;
                }
                let mut ratio = if a > 0.0 && b > 0.0 {
                    a.ln() - b.ln()
                } else if a == 0.0 {
                    -f64::INFINITY
                } else {
                    f64::INFINITY
                };
                if !(-LOG_RATIO_CLAMP..=LOG_RATIO_CLAMP).contains(&ratio) {
                    ratio = ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
                    clamps += 1;
                }
                acc += g * (a - b) * ratio;
            }
            (acc, clamps)
        })
        .collect();

    let area = grid.cell_area();
    let mut total = 0.0;
    let mut clamps = 0;
    for (v, c) in per_cell {
        total += v * area;
        clamps += c;
    }
    (total, clamps)
}
