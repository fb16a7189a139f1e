//! A-priori certificates on solved fields: masses, entropies, boundary flux
//! balances, outgoing-flow and transverse-chord controls, exceptional-set
//! measures, translation equicontinuity of the integrated frequency, and the
//! mild-form residual.
//!
//! Every quantity here is measured, never assumed: the suite turns the
//! estimates that back the existence argument into numbers a test (or a
//! reader of the report) can check per run and compare across the truncation
//! ladder. Constants are tabulated as observed; the uniform-boundedness
//! claims live in the acceptance tests as cross-`k` comparisons.
//!
//! Boundary integrals anchor on the ingoing arc of each velocity: along a
//! chord the area element `|v·n| dσ ds` is shared by both endpoints, so
//! outgoing integrals are evaluated on the ingoing quadrature with exit-trace
//! values — one quadrature per species serves inflow, outflow, and the
//! chord-family measures.

use std::collections::BTreeSet;
use std::fmt::Display;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::collision::{
    entropy_production_flagged, eval_untruncated, frozen_fields, CollisionError,
};
use crate::fields::{line_integral, line_integral_values, BoundaryData, DensityField, FieldError, Grid, NodeClass};
use crate::geometry::{ConvexDomain, GeometryError};
use crate::model::VelocityModel;
use crate::solver::{Chord, ChordTables};
use crate::vec2::Vec2;

/// Default quadrature count for flux balances (per ingoing arc).
pub const DEFAULT_FLUX_SAMPLES: usize = 1024;
/// Default boundary sample count for trace-based controls.
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 256;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error("fixed-point gap sweep failed: {0}")]
    Sweep(String),
    #[error("invalid diagnostics input: {0}")]
    InvalidInput(String),
}

/// Tunables for the suite; defaults suit desk-scale runs.
#[derive(Debug, Clone)]
pub struct DiagnosticsOptions {
    /// Exceptional-set thresholds, each in (0, 1).
    pub eps_values: Vec<f64>,
    /// Shift magnitudes for equicontinuity, in multiples of the grid spacing.
    pub shift_multiples: Vec<f64>,
    /// Boundary samples for trace controls (outgoing flow, transverse max,
    /// exceptional sets).
    pub boundary_samples: usize,
    /// Quadrature points per ingoing arc for flux balances.
    pub flux_samples: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            eps_values: vec![0.9, 0.7, 0.5],
            shift_multiples: vec![1.0, 2.0, 4.0],
            boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
            flux_samples: DEFAULT_FLUX_SAMPLES,
        }
    }
}

/// Measure of one species' exceptional chord set at one threshold.
/// `species` is 1-based, matching exported artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct ExceptionalMeasure {
    pub species: usize,
    pub eps: f64,
    pub measure: f64,
}

/// One equicontinuity modulus sample. `species` is 1-based; `direction` is
/// `"stream"` (along the species velocity) or `"transverse"` (along the first
/// interacting partner).
#[derive(Debug, Clone, Serialize)]
pub struct EquicontinuityEntry {
    pub species: usize,
    pub direction: String,
    pub magnitude: f64,
    pub modulus: f64,
}

/// Everything the suite measures on one solved field.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub alpha: f64,
    /// Truncation level as a label (`"inf"` for the untruncated operator;
    /// JSON has no infinity).
    pub k: String,
    pub mass: f64,
    pub entropy: f64,
    pub entropy_dissipation: f64,
    /// Ingoing mass flux per species (1-based order) and total.
    pub inflow: Vec<f64>,
    pub inflow_total: f64,
    pub outflow: Vec<f64>,
    pub outflow_total: f64,
    /// `α·∑∫F + outflow − inflow`; vanishes to quadrature tolerance because
    /// collision terms carry no net mass.
    pub damped_mass_residual: f64,
    /// Same balance weighted by velocity components; exact only without
    /// damping (the convolved operator conserves mass alone).
    pub momentum_residual: [f64; 2],
    pub energy_residual: f64,
    pub mild_residual_l1: f64,
    /// Relative L¹ change of one extra sweep at the reported stage — the
    /// fixed-point gap between the exponential and mild forms.
    pub expo_mild_gap: f64,
    pub outgoing_flow_control: f64,
    pub transverse_max: f64,
    pub exceptional_measures: Vec<ExceptionalMeasure>,
    pub equicontinuity: Vec<EquicontinuityEntry>,
    /// Entropy-production log-ratio clamps observed (0 in healthy runs).
    pub clamp_flags: usize,
}

/// Truncation label used in every exported artifact.
pub fn k_label(k: f64) -> String {
    if k.is_finite() {
        format!("{k}")
    } else {
        "inf".to_string()
    }
}

impl DiagnosticsReport {
    /// Aligned two-column rendering for humans; one quantity per line.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let num = |v: f64| format!("{v:.16e}");
        rows.push(("alpha".into(), num(self.alpha)));
        rows.push(("k".into(), self.k.clone()));
        rows.push(("mass".into(), num(self.mass)));
        rows.push(("entropy".into(), num(self.entropy)));
        rows.push(("entropy_dissipation".into(), num(self.entropy_dissipation)));
        for (i, v) in self.inflow.iter().enumerate() {
            rows.push((format!("inflow[{}]", i + 1), num(*v)));
        }
        rows.push(("inflow_total".into(), num(self.inflow_total)));
        for (i, v) in self.outflow.iter().enumerate() {
            rows.push((format!("outflow[{}]", i + 1), num(*v)));
        }
        rows.push(("outflow_total".into(), num(self.outflow_total)));
        rows.push(("damped_mass_residual".into(), num(self.damped_mass_residual)));
        rows.push(("momentum_residual_x".into(), num(self.momentum_residual[0])));
        rows.push(("momentum_residual_y".into(), num(self.momentum_residual[1])));
        rows.push(("energy_residual".into(), num(self.energy_residual)));
        rows.push(("mild_residual_l1".into(), num(self.mild_residual_l1)));
        rows.push(("expo_mild_gap".into(), num(self.expo_mild_gap)));
        rows.push(("outgoing_flow_control".into(), num(self.outgoing_flow_control)));
        rows.push(("transverse_max".into(), num(self.transverse_max)));
        for e in &self.exceptional_measures {
            rows.push((
                format!("exceptional[{}, eps={}]", e.species, e.eps),
                num(e.measure),
            ));
        }
        for e in &self.equicontinuity {
            rows.push((
                format!("equicontinuity[{}, {}, {:.3e}]", e.species, e.direction, e.magnitude),
                num(e.modulus),
            ));
        }
        rows.push(("clamp_flags".into(), format!("{}", self.clamp_flags)));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

#[inline]
fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Total mass and entropy `∑_i ∫ F_i (1, ln F_i)` by midpoint quadrature over
/// interior cells.
pub fn mass_entropy(f: &DensityField) -> (f64, f64) {
    let grid = f.grid();
    let area = grid.cell_area();
    let mut mass = 0.0;
    let mut entropy = 0.0;
    for i in 0..f.species_count() {
        let vals = f.species(i);
        let per_cell: Vec<(f64, f64)> = grid
            .cells_inside()
            .par_iter()
            .map(|&c| {
                let v = grid.bilinear(vals, grid.cell_center(c));
                (v, xlnx(v))
            })
            .collect();
        for (m, e) in per_cell {
            mass += m * area;
            entropy += e * area;
        }
    }
    (mass, entropy)
}

/// One boundary quadrature anchor on an ingoing arc, with its full chord.
struct FluxAnchor {
    /// Entry point on ∂Ω.
    z: Vec2,
    /// Arc-length weight `|Z'(t)|·Δt` of the midpoint rule.
    w_sigma: f64,
    /// `v·n` at the anchor (inward normal; ≥ 0 on the ingoing arc).
    flux: f64,
    /// Crossing time to the outgoing boundary.
    s_cross: f64,
    /// Exit point.
    z_exit: Vec2,
}

/// Midpoint quadrature of the ingoing arc for velocity `v`, each anchor
/// carrying its traced chord. Midpoints avoid the tangency endpoints where
/// the flux factor vanishes and traces degenerate.
fn ingoing_quadrature(
    domain: &ConvexDomain,
    v: Vec2,
    samples: usize,
) -> Result<Vec<FluxAnchor>, DiagnosticsError> {
    let part = domain.boundary_partition(v)?;
    let arc = part.arc_in;
    let len = arc.param_len();
    let anchors: Vec<Result<FluxAnchor, DiagnosticsError>> = (0..samples)
        .into_par_iter()
        .map(|q| {
            let t = arc.at((q as f64 + 0.5) / samples as f64);
            let z = domain.boundary_point(t);
            let w_sigma = domain.boundary_speed(t) * len / samples as f64;
            let flux = v.dot(domain.inward_normal(z)).max(0.0);
            let tr = domain.trace(z, v)?;
            Ok(FluxAnchor { z, w_sigma, flux, s_cross: tr.s_minus, z_exit: tr.z_minus })
        })
        .collect();
    anchors.into_iter().collect()
}

/// One-sided quadratic extrapolation of a species to a boundary point, along
/// the chord direction using three samples spaced two cells apart inside.
/// `into_domain` must point inward from `z`; `s_room` is the available chord
/// time. The stencil starts two cells in so that every bilinear evaluation
/// sits clear of the boundary collar, whose nodes hold values sampled at
/// their wall projection and would feed an O(h) displacement bias into a
/// shallower stencil.
fn boundary_trace(
    f: &DensityField,
    i: usize,
    z: Vec2,
    into_domain: Vec2,
    s_room: f64,
) -> f64 {
    let speed = into_domain.norm();
    let d = (2.0 * f.grid().h() / speed).min(s_room / 4.0);
    if d * speed <= 1e-9 * f.grid().h() {
        // Grazing chord: the collar-backed bilinear value is the best left.
        return f.eval(i, z).max(0.0);
    }
    let a = f.eval(i, z + into_domain * d);
    let b = f.eval(i, z + into_domain * (2.0 * d));
    let c = f.eval(i, z + into_domain * (3.0 * d));
    (3.0 * a - 3.0 * b + c).max(0.0)
}

/// Flux balance residuals with the per-species boundary fluxes they combine.
#[derive(Debug, Clone)]
pub struct FluxBalance {
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    pub residual_mass: f64,
    pub residual_momentum: [f64; 2],
    pub residual_energy: f64,
}

impl FluxBalance {
    pub fn inflow_total(&self) -> f64 {
        self.inflow.iter().sum()
    }

    pub fn outflow_total(&self) -> f64 {
        self.outflow.iter().sum()
    }
}

/// Residuals of `α ∑_i ψ(v_i) ∫F_i + ∑_i ψ(v_i)(outflow_i − inflow_i)` for
/// the invariants ψ ∈ {1, v_x, v_y, |v|²}.
///
/// Boundary fluxes use extrapolated entry/exit traces and the chord mass
/// uses the exact line integral of the interpolated field, fibred over each
/// ingoing arc. On a converged field the residual should vanish to
/// discretization accuracy: the collision terms integrate to zero against
/// every invariant, leaving only the interpolation and trace errors.
pub fn flux_balance(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    alpha: f64,
) -> Result<FluxBalance, DiagnosticsError> {
    flux_balance_sampled(model, domain, f, alpha, DEFAULT_FLUX_SAMPLES)
}

pub(crate) fn flux_balance_sampled(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    alpha: f64,
    samples: usize,
) -> Result<FluxBalance, DiagnosticsError> {
    let grid = f.grid();
    let p = model.p();
    let mut inflow = vec![0.0; p];
    let mut outflow = vec![0.0; p];
    let mut mass_int = vec![0.0; p];
    for i in 0..p {
        let v = model.velocity(i);
        if v.norm() == 0.0 {
            continue;
        }
        let anchors = ingoing_quadrature(domain, v, samples)?;
        let vals = f.species(i);
        let terms: Vec<Result<(f64, f64, f64), DiagnosticsError>> = anchors
            .par_iter()
            .map(|a| {
                if a.flux == 0.0 {
                    return Ok((0.0, 0.0, 0.0));
                }
                let f0 = boundary_trace(f, i, a.z, v, a.s_cross);
                let f_end = boundary_trace(f, i, a.z_exit, v * -1.0, a.s_cross);
                let m = line_integral_values(grid, vals, a.z, v, 0.0, a.s_cross)?;
                let w = a.w_sigma * a.flux;
                Ok((w * f0, w * f_end, w * m))
            })
            .collect();
        for term in terms {
            let (fin, fout, m) = term?;
            inflow[i] += fin;
            outflow[i] += fout;
            mass_int[i] += m;
        }
    }
    let mut residual = [0.0; 4];
    for i in 0..p {
        let v = model.velocity(i);
        let balance = alpha * mass_int[i] + outflow[i] - inflow[i];
        residual[0] += balance;
        residual[1] += v.x * balance;
        residual[2] += v.y * balance;
        residual[3] += v.norm_sq() * balance;
    }
    Ok(FluxBalance {
        inflow,
        outflow,
        residual_mass: residual[0],
        residual_momentum: [residual[1], residual[2]],
        residual_energy: residual[3],
    })
}

/// The outgoing-flow entropy control: over each species' outgoing boundary,
/// `∫_{F≤k} |v·n| F ln F dσ + ln(k/2) ∫_{F>k} |v·n| F dσ` with extrapolated
/// exit traces (threshold-equal points take the first branch).
pub fn outgoing_flow_control(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    k: f64,
) -> Result<f64, DiagnosticsError> {
    outgoing_flow_sampled(model, domain, f, k, DEFAULT_BOUNDARY_SAMPLES)
}

pub(crate) fn outgoing_flow_sampled(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    k: f64,
    samples: usize,
) -> Result<f64, DiagnosticsError> {
    let mut total = 0.0;
    for i in 0..model.p() {
        let v = model.velocity(i);
        if v.norm() == 0.0 {
            continue;
        }
        let anchors = ingoing_quadrature(domain, v, samples)?;
        let terms: Vec<f64> = anchors
            .par_iter()
            .map(|a| {
                let tr = boundary_trace(f, i, a.z_exit, v * -1.0, a.s_cross);
                let phi = if tr <= k { xlnx(tr) } else { (0.5 * k).ln() * tr };
                a.w_sigma * a.flux * phi
            })
            .collect();
        total += terms.iter().sum::<f64>();
    }
    Ok(total)
}

/// The transverse chord estimate at one ingoing boundary point: the sum over
/// all species of `sin²(v_i, v_j) ∫_0^{s⁻} F_j(Z + s v_i) ds` along the full
/// `i`-chord from `Z`.
pub fn transverse_estimate(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    i: usize,
    z: Vec2,
) -> Result<f64, DiagnosticsError> {
    let v = model.velocity(i);
    if v.norm() == 0.0 {
        return Err(DiagnosticsError::InvalidInput(format!(
            "species {} has zero velocity, its chords are undefined",
            i + 1
        )));
    }
    let s_cross = domain.trace(z, v)?.s_minus;
    let vi2 = v.norm_sq();
    let mut acc = 0.0;
    for j in 0..model.p() {
        let vj = model.velocity(j);
        let denom = vi2 * vj.norm_sq();
        if denom == 0.0 {
            continue;
        }
        let cr = v.cross(vj);
        let coeff = cr * cr / denom;
        if coeff == 0.0 {
            continue;
        }
        acc += coeff * line_integral(f, j, z, v, 0.0, s_cross)?;
    }
    Ok(acc)
}

/// Max of [`transverse_estimate`] over every species and a midpoint sample of
/// its ingoing arc.
pub(crate) fn transverse_max_sampled(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    samples: usize,
) -> Result<f64, DiagnosticsError> {
    let mut best = 0.0f64;
    for i in 0..model.p() {
        let v = model.velocity(i);
        if v.norm() == 0.0 {
            continue;
        }
        let part = domain.boundary_partition(v)?;
        let arc = part.arc_in;
        let vals: Vec<Result<f64, DiagnosticsError>> = (0..samples)
            .into_par_iter()
            .map(|q| {
                let t = arc.at((q as f64 + 0.5) / samples as f64);
                transverse_estimate(model, domain, f, i, domain.boundary_point(t))
            })
            .collect();
        for r in vals {
            best = best.max(r?);
        }
    }
    Ok(best)
}

/// Measure of one species' exceptional chord set at threshold `1/eps²`, with
/// the flag mask over the ingoing-arc midpoint samples. A chord is flagged
/// when its exit trace exceeds the threshold or the arclength integral of
/// some interacting partner along it does; the measure sums the flagged
/// chord areas `|v·n| dσ ds`.
pub fn exceptional_set(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    i: usize,
    eps: f64,
) -> Result<(f64, Vec<bool>), DiagnosticsError> {
    exceptional_sampled(model, domain, f, i, eps, DEFAULT_BOUNDARY_SAMPLES)
}

pub(crate) fn exceptional_sampled(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    i: usize,
    eps: f64,
    samples: usize,
) -> Result<(f64, Vec<bool>), DiagnosticsError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DiagnosticsError::InvalidInput(format!(
            "exceptional-set eps must lie in (0, 1), got {eps}"
        )));
    }
    let v = model.velocity(i);
    let speed = v.norm();
    if speed == 0.0 {
        return Err(DiagnosticsError::InvalidInput(format!(
            "species {} has zero velocity, its chords are undefined",
            i + 1
        )));
    }
    let threshold = 1.0 / (eps * eps);
    let partners: BTreeSet<usize> =
        model.reactions_of(i).iter().map(|&(j, _, _, _)| j).collect();
    let anchors = ingoing_quadrature(domain, v, samples)?;
    let flags: Vec<Result<bool, DiagnosticsError>> = anchors
        .par_iter()
        .map(|a| {
            let trace = boundary_trace(f, i, a.z_exit, v * -1.0, a.s_cross);
            if trace > threshold {
                return Ok(true);
            }
            for &j in &partners {
                // Arclength integral along the chord: speed × time integral.
                let m = speed * line_integral(f, j, a.z, v, 0.0, a.s_cross)?;
                if m > threshold {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect();
    let mut mask = Vec::with_capacity(samples);
    let mut measure = 0.0;
    for (a, fl) in anchors.iter().zip(flags) {
        let fl = fl?;
        if fl {
            measure += a.w_sigma * a.flux * a.s_cross;
        }
        mask.push(fl);
    }
    Ok((measure, mask))
}

/// L¹ residual of the mild form with the untruncated operator and the raw
/// boundary data: `∑_i ∫ |f_i(z) − f_b_i(entry) − ∫ Q_i ds| dz` over interior
/// nodes — the acceptance functional for the ladder's final field.
pub fn mild_residual(
    model: &VelocityModel,
    domain: &ConvexDomain,
    bd: &BoundaryData,
    f: &DensityField,
) -> Result<f64, DiagnosticsError> {
    let grid = f.grid();
    let mut per_species = Vec::with_capacity(model.p());
    for i in 0..model.p() {
        per_species.push(ChordTables::build_species(domain, grid, model.velocity(i))?);
    }
    mild_residual_with(model, bd, f, |i| &per_species[i])
}

pub(crate) fn mild_residual_with<'a>(
    model: &VelocityModel,
    bd: &BoundaryData,
    f: &DensityField,
    chords: impl Fn(usize) -> &'a [Chord] + Sync,
) -> Result<f64, DiagnosticsError> {
    let grid = f.grid();
    let ce = eval_untruncated(model, f)?;
    let h2 = grid.h() * grid.h();
    let stored = grid.stored_nodes();
    let mut total = 0.0;
    for i in 0..model.p() {
        let v = model.velocity(i);
        let net = &ce.net[i];
        let vals = f.species(i);
        let sp = chords(i);
        let contribs: Vec<Result<f64, FieldError>> = stored
            .par_iter()
            .enumerate()
            .map(|(q, &idx)| {
                if grid.class(idx as usize) != NodeClass::Interior {
                    return Ok(0.0);
                }
                let c = &sp[q];
                let coll = line_integral_values(grid, net, c.entry, v, 0.0, c.total)?;
                let r = vals[idx as usize] - bd.raw(i, c.t_entry) - coll;
                Ok(r.abs() * h2)
            })
            .collect();
        for r in contribs {
            total += r?;
        }
    }
    Ok(total)
}

/// Integrated collision frequency along each stored node's chord — the
/// functional whose translation equicontinuity underwrites L¹ compactness.
fn frequency_primitive(
    grid: &Grid,
    freq: &[f64],
    v: Vec2,
    chords: &[Chord],
) -> Result<Vec<f64>, DiagnosticsError> {
    let stored = grid.stored_nodes();
    let vals: Vec<Result<f64, FieldError>> = chords
        .par_iter()
        .map(|c| line_integral_values(grid, freq, c.entry, v, 0.0, c.total))
        .collect();
    let mut out = vec![0.0; grid.node_count()];
    for (q, r) in vals.into_iter().enumerate() {
        out[stored[q] as usize] = r?;
    }
    Ok(out)
}

fn modulus_from_primitive(
    grid: &Grid,
    domain: &ConvexDomain,
    n_values: &[f64],
    shift: Vec2,
) -> f64 {
    let h2 = grid.h() * grid.h();
    let terms: Vec<f64> = grid
        .interior_nodes()
        .par_iter()
        .map(|&idx| {
            let z = grid.node_pos(idx as usize);
            let zs = z + shift;
            if !domain.contains(zs) {
                return 0.0;
            }
            (grid.bilinear(n_values, zs) - n_values[idx as usize]).abs() * h2
        })
        .collect();
    terms.iter().sum()
}

/// L¹ modulus of translation of the integrated frequency: the norm over the
/// nodes whose shifted image stays in Ω of the difference between the chord
/// primitive at `z + shift` and at `z`, for species `i` at level `k`.
pub fn equicontinuity_modulus(
    model: &VelocityModel,
    domain: &ConvexDomain,
    f: &DensityField,
    k: f64,
    i: usize,
    shift: Vec2,
) -> Result<f64, DiagnosticsError> {
    if !(shift.norm() < domain.diameter()) {
        return Err(DiagnosticsError::InvalidInput(format!(
            "shift magnitude {} must stay below the domain diameter {}",
            shift.norm(),
            domain.diameter()
        )));
    }
    let v = model.velocity(i);
    let grid = f.grid();
    let ce = frozen_fields(model, f, 0.0, k)?;
    let chords = ChordTables::build_species(domain, grid, v)?;
    let n_values = frequency_primitive(grid, &ce.frequency[i], v, &chords)?;
    Ok(modulus_from_primitive(grid, domain, &n_values, shift))
}

/// The full certificate suite bound to one run's context.
pub struct DiagnosticsSuite<'a> {
    model: &'a VelocityModel,
    domain: &'a ConvexDomain,
    bd: &'a BoundaryData,
    chords: &'a ChordTables,
    opts: DiagnosticsOptions,
}

impl<'a> DiagnosticsSuite<'a> {
    pub fn new(
        model: &'a VelocityModel,
        domain: &'a ConvexDomain,
        bd: &'a BoundaryData,
        chords: &'a ChordTables,
        opts: DiagnosticsOptions,
    ) -> Self {
        DiagnosticsSuite { model, domain, bd, chords, opts }
    }

    /// Measures every report quantity on `field` at stage `(alpha, k)`.
    /// `sweep` re-applies the stage's fixed-point map once, for the
    /// exponential-vs-mild gap.
    pub fn evaluate<E: Display>(
        &self,
        field: &DensityField,
        alpha: f64,
        k: f64,
        sweep: impl Fn(&DensityField) -> Result<DensityField, E>,
    ) -> Result<DiagnosticsReport, DiagnosticsError> {
        let grid = field.grid();
        let (mass, entropy) = mass_entropy(field);
        let (entropy_dissipation, clamp_flags) =
            entropy_production_flagged(self.model, field, k);
        let fb = flux_balance_sampled(
            self.model,
            self.domain,
            field,
            alpha,
            self.opts.flux_samples,
        )?;
        let outgoing = outgoing_flow_sampled(
            self.model,
            self.domain,
            field,
            k,
            self.opts.boundary_samples,
        )?;
        let transverse_max = transverse_max_sampled(
            self.model,
            self.domain,
            field,
            self.opts.boundary_samples,
        )?;
        let mild =
            mild_residual_with(self.model, self.bd, field, |i| self.chords.species(i))?;

        let mut exceptional_measures = Vec::new();
        for i in 0..self.model.p() {
            if self.model.velocity(i).norm() == 0.0 {
                continue;
            }
            for &eps in &self.opts.eps_values {
                let (measure, _) = exceptional_sampled(
                    self.model,
                    self.domain,
                    field,
                    i,
                    eps,
                    self.opts.boundary_samples,
                )?;
                exceptional_measures.push(ExceptionalMeasure { species: i + 1, eps, measure });
            }
        }

        // Equicontinuity of the undamped truncated frequency primitive, along
        // the species direction and its first transverse interacting partner.
        let ce0 = frozen_fields(self.model, field, 0.0, k)?;
        let mut equicontinuity = Vec::new();
        for i in 0..self.model.p() {
            let v = self.model.velocity(i);
            if v.norm() == 0.0 {
                continue;
            }
            let n_values =
                frequency_primitive(grid, &ce0.frequency[i], v, self.chords.species(i))?;
            let mut directions = vec![("stream", v.normalized())];
            if let Some(&(j, _, _, _)) = self
                .model
                .reactions_of(i)
                .iter()
                .find(|&&(j, _, _, _)| v.cross(self.model.velocity(j)) != 0.0)
            {
                directions.push(("transverse", self.model.velocity(j).normalized()));
            }
            for (label, dir) in directions {
                for &m in &self.opts.shift_multiples {
                    let magnitude = m * grid.h();
                    let modulus = modulus_from_primitive(
                        grid,
                        self.domain,
                        &n_values,
                        dir * magnitude,
                    );
                    equicontinuity.push(EquicontinuityEntry {
                        species: i + 1,
                        direction: label.to_string(),
                        magnitude,
                        modulus,
                    });
                }
            }
        }

        let swept = sweep(field).map_err(|e| DiagnosticsError::Sweep(e.to_string()))?;
        let scale = field.l1_norm();
        let dist = swept.l1_distance(field);
        let expo_mild_gap = if scale > 0.0 { dist / scale } else { dist };

        Ok(DiagnosticsReport {
            alpha,
            k: k_label(k),
            mass,
            entropy,
            entropy_dissipation,
            inflow_total: fb.inflow_total(),
            outflow_total: fb.outflow_total(),
            inflow: fb.inflow,
            outflow: fb.outflow,
            damped_mass_residual: fb.residual_mass,
            momentum_residual: fb.residual_momentum,
            energy_residual: fb.residual_energy,
            mild_residual_l1: mild,
            expo_mild_gap,
            outgoing_flow_control: outgoing,
            transverse_max,
            exceptional_measures,
            equicontinuity,
            clamp_flags,
        })
    }
}
