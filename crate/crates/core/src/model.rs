//! Discrete velocity sets and collision tensors.
//!
//! A model is a finite list of planar velocities `v_1..v_p` together with a
//! nonnegative reaction tensor `gamma[(i,j,l,m)]` describing the collision
//! `(v_i, v_j) -> (v_l, v_m)`. The tensor carries the microreversibility
//! symmetries (swap within a pair, swap the two pairs), and every positive
//! entry must conserve momentum and kinetic energy.
//!
//! [`validate_model`] produces a certificate answering the two structural
//! questions the solver and its diagnostics rely on:
//!
//! - *normality*: every solution of the collision-invariant equations
//!   `psi_i + psi_j = psi_l + psi_m` (over reacting quadruples) is of the form
//!   `a + b·v + c·|v|²`;
//! - *transversality*: the margin `eta`, the smallest `|sin|` of the angle
//!   between two interacting velocities. `eta > 0` rules out colinear
//!   interacting pairs and is what makes chord-transversal estimates usable.
//!
//! Rank computations behind the certificate run in exact rational arithmetic
//! whenever the velocity components are short dyadic rationals (anything that
//! was written as a short decimal literal); otherwise a floating elimination
//! with a relative pivot threshold of 1e-10 is used.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num::bigint::Sign;
use num::{BigInt, BigRational, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec2::Vec2;

/// Reaction tensor key `(i, j, l, m)`, zero-based.
pub type GammaKey = (usize, usize, usize, usize);

/// Relative pivot threshold for the floating-point rank fallback.
const FLOAT_RANK_TOL: f64 = 1e-10;

/// Default tolerance for symmetry/conservation checks.
pub const DEFAULT_MODEL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(String),
    #[error("reaction references velocity index {index} but the model has {p} velocities (indices are 1-based)")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("reaction {key:?} has negative rate {gamma}")]
    NegativeRate { key: GammaKey, gamma: f64 },
    #[error("reactions {a:?} and {b:?} are symmetry images but were given rates {ga} and {gb}")]
    InconsistentRates { a: GammaKey, b: GammaKey, ga: f64, gb: f64 },
    #[error("model fails structural validation: {}", format_findings(.findings))]
    Invalid { findings: Vec<Finding> },
}

fn format_findings(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A single structured validation finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Finding {
    /// `gamma[key]` and `gamma[image]` should be equal by symmetry but differ.
    SymmetryViolation { key: GammaKey, image: GammaKey, gamma: f64, gamma_image: f64 },
    /// A positive-rate reaction fails momentum or energy conservation.
    ConservationViolation {
        key: GammaKey,
        momentum_defect: [f64; 2],
        energy_defect: f64,
    },
    /// Velocity `i` is the zero vector.
    ZeroVelocity { i: usize },
    /// Velocities `i` and `j` coincide.
    DuplicateVelocity { i: usize, j: usize },
    /// Interacting pair `(i, j)` is colinear, so the transversality margin
    /// vanishes.
    ColinearPair { i: usize, j: usize },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::SymmetryViolation { key, image, gamma, gamma_image } => write!(
                f,
                "symmetry violation: gamma{key:?} = {gamma} but gamma{image:?} = {gamma_image}"
            ),
            Finding::ConservationViolation { key, momentum_defect, energy_defect } => write!(
                f,
                "conservation violation at {key:?}: momentum defect ({}, {}), energy defect {}",
                momentum_defect[0], momentum_defect[1], energy_defect
            ),
            Finding::ZeroVelocity { i } => write!(f, "velocity {} is zero", i + 1),
            Finding::DuplicateVelocity { i, j } => {
                write!(f, "velocities {} and {} coincide", i + 1, j + 1)
            }
            Finding::ColinearPair { i, j } => {
                write!(f, "interacting velocities {} and {} are colinear", i + 1, j + 1)
            }
        }
    }
}

/// A discrete velocity model: velocities plus the closed reaction tensor.
#[derive(Debug, Clone)]
pub struct VelocityModel {
    velocities: Vec<Vec2>,
    /// Closed (or raw, see [`VelocityModel::from_raw`]) tensor entries.
    gamma: BTreeMap<GammaKey, f64>,
    /// Per-species reaction lists `(j, l, m, gamma)` for positive entries,
    /// sorted by key; this is what the collision evaluator iterates.
    per_species: Vec<Vec<(usize, usize, usize, f64)>>,
}

/// The 8-element symmetry orbit of a tensor key: swap within either pair,
/// swap the pairs.
pub fn symmetry_orbit(key: GammaKey) -> [GammaKey; 8] {
    let (i, j, l, m) = key;
    [
        (i, j, l, m),
        (j, i, l, m),
        (i, j, m, l),
        (j, i, m, l),
        (l, m, i, j),
        (m, l, i, j),
        (l, m, j, i),
        (m, l, j, i),
    ]
}

impl VelocityModel {
    /// Builds a model from velocities and explicit reactions, closing the
    /// tensor under its symmetries. Explicit entries that land in the same
    /// orbit must agree to 1e-12 relative; rates must be nonnegative.
    pub fn new(
        velocities: Vec<Vec2>,
        reactions: &[(GammaKey, f64)],
    ) -> Result<Self, ModelError> {
        let p = velocities.len();
        let mut closed: BTreeMap<GammaKey, f64> = BTreeMap::new();
        let mut source: BTreeMap<GammaKey, GammaKey> = BTreeMap::new();
        for &(key, g) in reactions {
            for &idx in &[key.0, key.1, key.2, key.3] {
                if idx >= p {
                    return Err(ModelError::IndexOutOfRange { index: idx + 1, p });
                }
            }
            if g < 0.0 || !g.is_finite() {
                return Err(ModelError::NegativeRate { key, gamma: g });
            }
            for image in symmetry_orbit(key) {
                match closed.get(&image) {
                    Some(&prev) if (prev - g).abs() > 1e-12 * prev.abs().max(1.0) => {
                        return Err(ModelError::InconsistentRates {
                            a: source[&image],
                            b: key,
                            ga: prev,
                            gb: g,
                        });
                    }
                    _ => {
                        closed.insert(image, g);
                        source.insert(image, key);
                    }
                }
            }
        }
        Ok(Self::assemble(velocities, closed))
    }

    /// Builds a model storing the given tensor entries verbatim, without
    /// symmetric closure or consistency checks. Intended for feeding
    /// deliberately broken tensors to [`validate_model`].
    pub fn from_raw(velocities: Vec<Vec2>, gamma: BTreeMap<GammaKey, f64>) -> Self {
        Self::assemble(velocities, gamma)
    }

    fn assemble(velocities: Vec<Vec2>, gamma: BTreeMap<GammaKey, f64>) -> Self {
        let p = velocities.len();
        let mut per_species = vec![Vec::new(); p];
        for (&(i, j, l, m), &g) in &gamma {
            if g > 0.0 && i < p {
                per_species[i].push((j, l, m, g));
            }
        }
        VelocityModel { velocities, gamma, per_species }
    }

    /// Loads a model from a TOML file with `velocities` (list of `[x, y]`
    /// pairs) and `reactions` (list of `[i, j, l, m, gamma]` rows, indices
    /// 1-based). The stored tensor is the symmetric closure of the listed
    /// reactions.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct ModelFile {
            velocities: Vec<[f64; 2]>,
            #[serde(default)]
            reactions: Vec<(usize, usize, usize, usize, f64)>,
        }
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile =
            toml::from_str(&text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let p = file.velocities.len();
        let mut reactions = Vec::new();
        for &(i, j, l, m, g) in &file.reactions {
            for idx in [i, j, l, m] {
                if idx == 0 || idx > p {
                    return Err(ModelError::IndexOutOfRange { index: idx, p });
                }
            }
            reactions.push(((i - 1, j - 1, l - 1, m - 1), g));
        }
        let velocities = file.velocities.iter().map(|&[x, y]| Vec2::new(x, y)).collect();
        VelocityModel::new(velocities, &reactions)
    }

    pub fn p(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocities(&self) -> &[Vec2] {
        &self.velocities
    }

    pub fn velocity(&self, i: usize) -> Vec2 {
        self.velocities[i]
    }

    /// Tensor entry, zero for unset keys.
    pub fn gamma(&self, key: GammaKey) -> f64 {
        self.gamma.get(&key).copied().unwrap_or(0.0)
    }

    /// All stored entries in key order (includes explicit zeros).
    pub fn gamma_entries(&self) -> impl Iterator<Item = (GammaKey, f64)> + '_ {
        self.gamma.iter().map(|(&k, &g)| (k, g))
    }

    /// Positive reactions of species `i` as `(j, l, m, gamma)`, key-sorted.
    pub fn reactions_of(&self, i: usize) -> &[(usize, usize, usize, f64)] {
        &self.per_species[i]
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Interaction index sets: `sets[i]` lists the `j` such that some reaction
/// `(i, j) -> (l, m)` has positive rate; `free_streaming[i]` flags species
/// with no reactions at all.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSets {
    pub sets: Vec<Vec<usize>>,
    pub free_streaming: Vec<bool>,
}

/// Computes the interaction sets `J_i` from the stored tensor.
pub fn interacting_index_sets(model: &VelocityModel) -> InteractionSets {
    let p = model.p();
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
    for ((i, j, _, _), g) in model.gamma_entries() {
        if g > 0.0 && i < p && j < p {
            sets[i].insert(j);
        }
    }
    let sets: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
    let free_streaming = sets.iter().map(|s| s.is_empty()).collect();
    InteractionSets { sets, free_streaming }
}

/// Result of model certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCertificate {
    /// True iff the collision-invariant kernel is exactly the span of
    /// `{1, v_x, v_y, |v|²}` restricted to the velocity set.
    pub normal: bool,
    /// Dimension of the collision-invariant kernel (`p` minus the rank of the
    /// reaction incidence system).
    pub invariant_kernel_dim: usize,
    /// True iff every kernel vector is representable as `a + b·v + c·|v|²`.
    pub representable: bool,
    /// Transversality margin: `min |sin(v_i, v_j)|` over interacting pairs,
    /// `0.0` when there are colinear interacting pairs or no reactions.
    pub eta: f64,
    /// Non-structural findings (currently: colinear interacting pairs).
    pub violations: Vec<Finding>,
    /// Whether the rank computations ran in exact rational arithmetic.
    pub exact_arithmetic: bool,
}

/// Certifies a model: checks tensor symmetry, conservation laws and velocity
/// sanity (hard failures return `ModelError::Invalid` with all findings),
/// then computes the invariant kernel, its representability and the
/// transversality margin `eta`.
pub fn validate_model(model: &VelocityModel, tol: f64) -> Result<ModelCertificate, ModelError> {
    let p = model.p();
    let mut hard = Vec::new();

    // 1. Velocity sanity: nonzero, pairwise distinct.
    for (i, v) in model.velocities().iter().enumerate() {
        if v.norm() == 0.0 {
            hard.push(Finding::ZeroVelocity { i });
        }
        for (j, w) in model.velocities().iter().enumerate().skip(i + 1) {
            if (*v - *w).norm() <= tol {
                hard.push(Finding::DuplicateVelocity { i, j });
            }
        }
    }

    // 2. Tensor symmetry on the stored entries: every image of a stored key
    //    must carry the same rate; an absent image counts as zero.
    for (key, g) in model.gamma_entries() {
        for image in symmetry_orbit(key) {
            let gi = model.gamma(image);
            if (gi - g).abs() > tol * g.abs().max(1.0) {
                hard.push(Finding::SymmetryViolation { key, image, gamma: g, gamma_image: gi });
            }
        }
    }

    // 3. Conservation of momentum and energy for every positive rate.
    for ((i, j, l, m), g) in model.gamma_entries() {
        if g <= 0.0 {
            continue;
        }
        let (vi, vj, vl, vm) = (
            model.velocity(i),
            model.velocity(j),
            model.velocity(l),
            model.velocity(m),
        );
        let dp = vi + vj - vl - vm;
        let de = vi.norm_sq() + vj.norm_sq() - vl.norm_sq() - vm.norm_sq();
        if dp.norm() > tol || de.abs() > tol {
            hard.push(Finding::ConservationViolation {
                key: (i, j, l, m),
                momentum_defect: [dp.x, dp.y],
                energy_defect: de,
            });
        }
    }

    if !hard.is_empty() {
        return Err(ModelError::Invalid { findings: hard });
    }

    // 4. Transversality margin over interacting pairs.
    let inter = interacting_index_sets(model);
    let mut eta = f64::INFINITY;
    let mut any_pair = false;
    let mut soft = Vec::new();
    for i in 0..p {
        for &j in &inter.sets[i] {
            any_pair = true;
            let (vi, vj) = (model.velocity(i), model.velocity(j));
            let sin = vi.cross(vj).abs() / (vi.norm() * vj.norm());
            if sin == 0.0 && i <= j {
                soft.push(Finding::ColinearPair { i, j });
            }
            eta = eta.min(sin);
        }
    }
    if !any_pair {
        eta = 0.0;
    }

    // 5. Invariant kernel of the incidence system and its representability.
    let rows = incidence_rows(model);
    let kernel = rational_kernel_basis(p, &rows);
    let invariant_kernel_dim = kernel.len();
    let representable = if velocities_are_short_rationals(model.velocities()) {
        representable_exact(model.velocities(), &kernel)
    } else {
        representable_float(model.velocities(), &kernel)
    };

    Ok(ModelCertificate {
        normal: representable,
        invariant_kernel_dim,
        representable,
        eta,
        violations: soft,
        exact_arithmetic: velocities_are_short_rationals(model.velocities()),
    })
}

/// One incidence row `e_i + e_j - e_l - e_m` per distinct positive-rate orbit.
fn incidence_rows(model: &VelocityModel) -> Vec<Vec<i64>> {
    let p = model.p();
    let mut seen: BTreeSet<GammaKey> = BTreeSet::new();
    let mut rows = Vec::new();
    for (key, g) in model.gamma_entries() {
        if g <= 0.0 || seen.contains(&key) {
            continue;
        }
        seen.extend(symmetry_orbit(key));
        let (i, j, l, m) = key;
        let mut row = vec![0i64; p];
        row[i] += 1;
        row[j] += 1;
        row[l] -= 1;
        row[m] -= 1;
        if row.iter().any(|&c| c != 0) {
            rows.push(row);
        }
    }
    rows
}

fn big(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

/// Reduced row echelon form in place; returns the pivot columns.
fn rref(mat: &mut Vec<Vec<BigRational>>) -> Vec<usize> {
    let rows = mat.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = mat[0].len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(pr) = (r..rows).find(|&rr| !mat[rr][c].is_zero()) else {
            continue;
        };
        mat.swap(r, pr);
        let inv = mat[r][c].clone();
        for x in mat[r].iter_mut() {
            *x = &*x / &inv;
        }
        let pivot_row = mat[r].clone();
        for rr in 0..rows {
            if rr != r && !mat[rr][c].is_zero() {
                let f = mat[rr][c].clone();
                for cc in 0..cols {
                    let next = &mat[rr][cc] - &(&f * &pivot_row[cc]);
                    mat[rr][cc] = next;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    pivots
}

/// Exact basis of `{x : A x = 0}` for the integer incidence matrix.
fn rational_kernel_basis(p: usize, rows: &[Vec<i64>]) -> Vec<Vec<BigRational>> {
    let mut mat: Vec<Vec<BigRational>> = rows
        .iter()
        .map(|row| row.iter().map(|&c| big(c)).collect())
        .collect();
    let pivots = rref(&mut mat);
    let pivot_set: BTreeSet<usize> = pivots.iter().copied().collect();
    let mut basis = Vec::new();
    for free in (0..p).filter(|c| !pivot_set.contains(c)) {
        let mut v = vec![big(0); p];
        v[free] = big(1);
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -mat[r][free].clone();
        }
        basis.push(v);
    }
    basis
}

/// True when all components are dyadic rationals with short numerator and
/// denominator — the case where squaring and summing stays exact.
fn velocities_are_short_rationals(velocities: &[Vec2]) -> bool {
    velocities.iter().all(|v| {
        [v.x, v.y].iter().all(|&c| {
            let Some(r) = BigRational::from_float(c) else { return false };
            r.denom().bits() <= 21 && r.numer().bits() <= 31
        })
    })
}

/// Columns `{1, v_x, v_y, |v|²}` as exact rationals.
fn moment_matrix_exact(velocities: &[Vec2]) -> Vec<Vec<BigRational>> {
    velocities
        .iter()
        .map(|v| {
            let x = BigRational::from_float(v.x).unwrap();
            let y = BigRational::from_float(v.y).unwrap();
            let e = &x * &x + &y * &y;
            vec![big(1), x, y, e]
        })
        .collect()
}

/// Exact check that each kernel vector lies in the span of the moment
/// columns: augmenting must not increase the rank.
fn representable_exact(velocities: &[Vec2], kernel: &[Vec<BigRational>]) -> bool {
    let mut m = moment_matrix_exact(velocities);
    let rank_m = {
        let mut copy = m.clone();
        rref(&mut copy).len()
    };
    for (r, row) in m.iter_mut().enumerate() {
        for k in kernel {
            row.push(k[r].clone());
        }
    }
    rref(&mut m).len() == rank_m
}

/// Floating fallback: modified Gram-Schmidt on the moment columns, then each
/// kernel vector must project onto the span up to the relative threshold.
fn representable_float(velocities: &[Vec2], kernel: &[Vec<BigRational>]) -> bool {
    let p = velocities.len();
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            velocities
                .iter()
                .map(|v| match c {
                    0 => 1.0,
                    1 => v.x,
                    2 => v.y,
                    _ => v.norm_sq(),
                })
                .collect()
        })
        .collect();
    let scale = cols
        .iter()
        .flat_map(|col| col.iter().map(|x| x.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in cols {
        let mut w = col;
        for q in &basis {
            let proj: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= proj * qi;
            }
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > FLOAT_RANK_TOL * scale * (p as f64).sqrt() {
            for x in w.iter_mut() {
                *x /= n;
            }
            basis.push(w);
        }
    }
    kernel.iter().all(|k| {
        let mut w: Vec<f64> = k.iter().map(rational_to_f64).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return true;
        }
        for q in &basis {
            let proj: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= proj * qi;
            }
        }
        let res = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        res <= FLOAT_RANK_TOL * norm
    })
}

fn rational_to_f64(r: &BigRational) -> f64 {
    let num = bigint_to_f64(r.numer());
    let den = bigint_to_f64(r.denom());
    num / den
}

fn bigint_to_f64(x: &BigInt) -> f64 {
    let (sign, digits) = x.to_u64_digits();
    let mut acc = 0.0;
    for &d in digits.iter().rev() {
        acc = acc * 1.8446744073709552e19 + d as f64;
    }
    if sign == Sign::Minus {
        -acc
    } else {
        acc
    }
}
