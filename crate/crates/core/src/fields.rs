//! Gridded per-velocity densities, chord quadrature, mollification, and
//! boundary data.
//!
//! Densities live on a uniform Cartesian lattice covering a padded bounding
//! box of the domain. Nodes are classified as interior (inside Ω), collar
//! (outside Ω but within [`COLLAR_FACTOR`]`·h` of the boundary), or exterior.
//! Interior and collar nodes carry values; the collar holds the field's
//! normal-direction extension (the value at the nearest boundary point, which
//! solvers realize by marching their characteristic all the way to that
//! boundary point). Bilinear interpolation near ∂Ω therefore reads collar
//! nodes by design — that is the only way exterior storage is ever consumed,
//! and it is the same extension rule [`mollify`] applies at larger depth.
//!
//! [`line_integral`] integrates the bilinear interpolant along a segment
//! *exactly*: the restriction of a bilinear function to a line is quadratic
//! between cell crossings, so the segment is split at every crossing (and
//! further until each piece is shorter than `h/|v|`) and each piece gets a
//! Simpson rule, which is exact for quadratics. This makes the quadrature
//! additive under concatenation to floating-point roundoff.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{ConvexDomain, GeometryError};
use crate::model::VelocityModel;
use crate::vec2::Vec2;

/// Collar depth in units of the grid spacing: exterior nodes within this
/// distance of ∂Ω store extension values so that every bilinear stencil used
/// on `closure(Ω)` is fully populated.
pub const COLLAR_FACTOR: f64 = 2.5;

/// Dense sample count of the truncated boundary table cache.
const TRUNCATED_CACHE_SAMPLES: usize = 4096;

/// Panels of the Simpson rule discretizing the boundary mollifier window.
const BOUNDARY_MOLLIFIER_PANELS: usize = 64;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("segment s ∈ [{s0}, {s1}] from ({}, {}) along ({}, {}) leaves the domain", z.x, z.y, v.x, v.y)]
    SegmentLeavesDomain { z: Vec2, v: Vec2, s0: f64, s1: f64 },
    #[error("mollifier radius {alpha} under-resolves the grid (needs at least {min})")]
    AlphaTooSmall { alpha: f64, min: f64 },
    #[error("mollifier radius {alpha} exceeds the grid's reserved band ({max}); rebuild the grid with a larger reserve")]
    AlphaExceedsReserve { alpha: f64, max: f64 },
    #[error("negative value {value} for species {} at node ({x}, {y})", species + 1)]
    NegativeValue { species: usize, x: f64, y: f64, value: f64 },
    #[error("non-finite value for species {} at node ({x}, {y})", species + 1)]
    NonfiniteValue { species: usize, x: f64, y: f64 },
    #[error("species index {} out of range for p = {p}", index + 1)]
    SpeciesOutOfRange { index: usize, p: usize },
    #[error("boundary table for species {} has duplicate parameter {t}", species + 1)]
    DuplicateParam { species: usize, t: f64 },
    #[error("truncation level must be positive, got {0}")]
    InvalidTruncation(f64),
    #[error("boundary data I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("boundary data parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Classification of a lattice node relative to Ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Collar,
    Exterior,
}

/// Uniform Cartesian lattice over a padded bounding box of the domain, with
/// per-node nearest-boundary data precomputed for extension rules.
#[derive(Debug)]
pub struct Grid {
    h: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    /// Largest mollifier radius the padding reserves room for.
    max_alpha: f64,
    class: Vec<NodeClass>,
    nearest_t: Vec<f64>,
    nearest_point: Vec<Vec2>,
    boundary_dist: Vec<f64>,
    stored: Vec<u32>,
    interior: Vec<u32>,
    /// Cells (indexed `cx + cy·(nx−1)`) whose center lies inside Ω.
    cells_inside: Vec<u32>,
}

impl Grid {
    /// Builds the lattice for `domain` with spacing `h`, reserving enough
    /// exterior padding for mollifier radii up to `max_alpha`.
    pub fn new(domain: &ConvexDomain, h: f64, max_alpha: f64) -> Result<Arc<Self>, FieldError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FieldError::InvalidSpacing(h));
        }
        if !(max_alpha >= 0.0 && max_alpha.is_finite()) {
            return Err(FieldError::InvalidSpacing(max_alpha));
        }
        let pad = max_alpha + 3.0 * h;
        let (lo, hi) = domain.bbox();
        let x0 = lo.x - pad;
        let y0 = lo.y - pad;
        let nx = (((hi.x + pad - x0) / h).ceil() as usize) + 1;
        let ny = (((hi.y + pad - y0) / h).ceil() as usize) + 1;
        let n = nx * ny;

        let per_node: Vec<(NodeClass, f64, Vec2, f64)> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let p = Vec2::new(
                    x0 + (idx % nx) as f64 * h,
                    y0 + (idx / nx) as f64 * h,
                );
                let (t, zt, dist) = domain.nearest_boundary(p);
                let class = if domain.gauge(p) < 0.0 {
                    NodeClass::Interior
                } else if dist <= COLLAR_FACTOR * h {
                    NodeClass::Collar
                } else {
                    NodeClass::Exterior
                };
                (class, t, zt, dist)
            })
            .collect();

        let mut class = Vec::with_capacity(n);
        let mut nearest_t = Vec::with_capacity(n);
        let mut nearest_point = Vec::with_capacity(n);
        let mut boundary_dist = Vec::with_capacity(n);
        let mut stored = Vec::new();
        let mut interior = Vec::new();
        for (idx, (c, t, zt, d)) in per_node.into_iter().enumerate() {
            class.push(c);
            nearest_t.push(t);
            nearest_point.push(zt);
            boundary_dist.push(d);
            if c != NodeClass::Exterior {
                stored.push(idx as u32);
            }
            if c == NodeClass::Interior {
                interior.push(idx as u32);
            }
        }

        let mut cells_inside = Vec::new();
        for cy in 0..ny - 1 {
            for cx in 0..nx - 1 {
                let center = Vec2::new(x0 + (cx as f64 + 0.5) * h, y0 + (cy as f64 + 0.5) * h);
                if domain.gauge(center) < 0.0 {
                    cells_inside.push((cy * (nx - 1) + cx) as u32);
                }
            }
        }

        Ok(Arc::new(Grid {
            h,
            x0,
            y0,
            nx,
            ny,
            max_alpha,
            class,
            nearest_t,
            nearest_point,
            boundary_dist,
            stored,
            interior,
            cells_inside,
        }))
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> Vec2 {
        Vec2::new(self.x0, self.y0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn max_alpha(&self) -> f64 {
        self.max_alpha
    }

    pub fn node_pos(&self, idx: usize) -> Vec2 {
        Vec2::new(
            self.x0 + (idx % self.nx) as f64 * self.h,
            self.y0 + (idx / self.nx) as f64 * self.h,
        )
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    /// Nearest boundary parameter, point, and distance for a node.
    pub fn nearest_boundary(&self, idx: usize) -> (f64, Vec2, f64) {
        (self.nearest_t[idx], self.nearest_point[idx], self.boundary_dist[idx])
    }

    /// Interior and collar node indices, ascending.
    pub fn stored_nodes(&self) -> &[u32] {
        &self.stored
    }

    pub fn interior_nodes(&self) -> &[u32] {
        &self.interior
    }

    /// Cells whose center lies inside Ω, for midpoint quadrature.
    pub fn cells_inside(&self) -> &[u32] {
        &self.cells_inside
    }

    pub fn cell_center(&self, cell: u32) -> Vec2 {
        let w = self.nx - 1;
        let cx = (cell as usize) % w;
        let cy = (cell as usize) / w;
        Vec2::new(
            self.x0 + (cx as f64 + 0.5) * self.h,
            self.y0 + (cy as f64 + 0.5) * self.h,
        )
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Cell coordinates and in-cell fractions for a point, clamped to the
    /// lattice.
    #[inline]
    fn locate(&self, p: Vec2) -> (usize, usize, f64, f64) {
        let gx = (p.x - self.x0) / self.h;
        let gy = (p.y - self.y0) / self.h;
        let ix = (gx.floor() as isize).clamp(0, self.nx as isize - 2) as usize;
        let iy = (gy.floor() as isize).clamp(0, self.ny as isize - 2) as usize;
        let fx = (gx - ix as f64).clamp(0.0, 1.0);
        let fy = (gy - iy as f64).clamp(0.0, 1.0);
        (ix, iy, fx, fy)
    }

    /// Bilinear interpolation of a node-indexed value array.
    #[inline]
    pub fn bilinear(&self, values: &[f64], p: Vec2) -> f64 {
        let (ix, iy, fx, fy) = self.locate(p);
        let i00 = iy * self.nx + ix;
        let v00 = values[i00];
        let v10 = values[i00 + 1];
        let v01 = values[i00 + self.nx];
        let v11 = values[i00 + self.nx + 1];
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    /// True when the bilinear stencil of `p` would read an exterior node.
    #[inline]
    fn stencil_leaves_storage(&self, p: Vec2) -> bool {
        let (ix, iy, _, _) = self.locate(p);
        let i00 = iy * self.nx + ix;
        self.class[i00] == NodeClass::Exterior
            || self.class[i00 + 1] == NodeClass::Exterior
            || self.class[i00 + self.nx] == NodeClass::Exterior
            || self.class[i00 + self.nx + 1] == NodeClass::Exterior
    }
}

/// Per-velocity nonnegative densities on a shared grid.
///
/// Values are stored densely (`nx·ny` per species) but only interior and
/// collar nodes are meaningful; exterior slots stay zero and are never read.
#[derive(Debug, Clone)]
pub struct DensityField {
    grid: Arc<Grid>,
    values: Vec<Vec<f64>>,
}

impl DensityField {
    pub fn zero(grid: Arc<Grid>, p: usize) -> Self {
        let n = grid.node_count();
        DensityField { grid, values: vec![vec![0.0; n]; p] }
    }

    /// Fills stored (interior + collar) nodes from a function of species and
    /// position, validating nonnegativity and finiteness.
    pub fn from_fn(
        grid: Arc<Grid>,
        p: usize,
        f: impl Fn(usize, Vec2) -> f64,
    ) -> Result<Self, FieldError> {
        let mut field = Self::zero(grid, p);
        for i in 0..p {
            for &idx in field.grid.stored_nodes() {
                let pos = field.grid.node_pos(idx as usize);
                let v = f(i, pos);
                if !v.is_finite() {
                    return Err(FieldError::NonfiniteValue { species: i, x: pos.x, y: pos.y });
                }
                if v < 0.0 {
                    return Err(FieldError::NegativeValue { species: i, x: pos.x, y: pos.y, value: v });
                }
                field.values[i][idx as usize] = v;
            }
        }
        Ok(field)
    }

    /// Wraps prevalidated per-species value arrays (solver internals).
    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<Vec<f64>>) -> Self {
        debug_assert!(values.iter().all(|v| v.len() == grid.node_count()));
        DensityField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn species_count(&self) -> usize {
        self.values.len()
    }

    pub fn species(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub(crate) fn species_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i]
    }

    /// Bilinear evaluation of one species at an arbitrary point of
    /// `closure(Ω)` (plus the collar band).
    pub fn eval(&self, i: usize, p: Vec2) -> f64 {
        self.grid.bilinear(&self.values[i], p)
    }

    /// Discrete L¹ norm over interior nodes.
    pub fn l1_norm(&self) -> f64 {
        let a = self.grid.cell_area();
        let mut acc = 0.0;
        for vs in &self.values {
            for &idx in self.grid.interior_nodes() {
                acc += vs[idx as usize].abs();
            }
        }
        acc * a
    }

    /// Discrete L¹ distance to another field on the same grid.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        assert!(Arc::ptr_eq(&self.grid, &other.grid), "fields must share a grid");
        assert_eq!(self.values.len(), other.values.len(), "species counts must match");
        let a = self.grid.cell_area();
        let mut acc = 0.0;
        for (va, vb) in self.values.iter().zip(&other.values) {
            for &idx in self.grid.interior_nodes() {
                acc += (va[idx as usize] - vb[idx as usize]).abs();
            }
        }
        acc * a
    }

    pub fn max_value(&self) -> f64 {
        let mut m = 0.0f64;
        for vs in &self.values {
            for &idx in self.grid.stored_nodes() {
                m = m.max(vs[idx as usize]);
            }
        }
        m
    }
}

// ----- line integrals --------------------------------------------------------

/// Integral of one species of `field` along `s ↦ z + s·v`, `s ∈ [s0, s1]`
/// (sign-reversing when `s1 < s0`). Exact for the bilinear interpolant, with
/// sample spacing never exceeding `h/|v|`. The segment must stay within the
/// stored (interior + collar) band.
pub fn line_integral(
    field: &DensityField,
    i: usize,
    z: Vec2,
    v: Vec2,
    s0: f64,
    s1: f64,
) -> Result<f64, FieldError> {
    if i >= field.species_count() {
        return Err(FieldError::SpeciesOutOfRange { index: i, p: field.species_count() });
    }
    line_integral_values(field.grid(), field.species(i), z, v, s0, s1)
}

/// [`line_integral`] over a bare node-value array (shared by collision-field
/// quadratures).
pub fn line_integral_values(
    grid: &Grid,
    values: &[f64],
    z: Vec2,
    v: Vec2,
    s0: f64,
    s1: f64,
) -> Result<f64, FieldError> {
    if s1 < s0 {
        return Ok(-line_integral_values(grid, values, z, v, s1, s0)?);
    }
    if s1 == s0 {
        return Ok(0.0);
    }
    let speed = v.norm();
    if speed == 0.0 {
        return Ok(0.0);
    }
    let leave = || FieldError::SegmentLeavesDomain { z, v, s0, s1 };
    for s in [s0, s1] {
        if grid.stencil_leaves_storage(z + v * s) {
            return Err(leave());
        }
    }

    // Breakpoints where the line crosses lattice lines: the integrand is a
    // quadratic polynomial in s between consecutive crossings.
    let mut breaks: Vec<f64> = Vec::new();
    for (z_c, v_c, o_c) in [(z.x, v.x, grid.x0), (z.y, v.y, grid.y0)] {
        if v_c.abs() < 1e-300 {
            continue;
        }
        let g0 = (z_c + s0 * v_c - o_c) / grid.h;
        let g1 = (z_c + s1 * v_c - o_c) / grid.h;
        let (jlo, jhi) = if g0 <= g1 { (g0, g1) } else { (g1, g0) };
        let mut j = jlo.ceil() as i64;
        let j_end = jhi.floor() as i64;
        while j <= j_end {
            let s = ((o_c + j as f64 * grid.h) - z_c) / v_c;
            if s > s0 && s < s1 {
                breaks.push(s);
            }
            j += 1;
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * (s1 - s0).max(1.0));

    let max_step = grid.h / speed;
    let mut acc = 0.0;
    let mut prev = s0;
    let mut fprev = grid.bilinear(values, z + v * s0);
    for &b in breaks.iter().chain(std::iter::once(&s1)) {
        let len = b - prev;
        if len <= 0.0 {
            continue;
        }
        // Subdivide so every Simpson piece respects the step bound; the rule
        // stays exact for the in-cell quadratic regardless of the split.
        let nsub = ((len / max_step).ceil() as usize).max(1);
        let ds = len / nsub as f64;
        for m in 0..nsub {
            let a = prev + m as f64 * ds;
            let b2 = if m + 1 == nsub { b } else { prev + (m + 1) as f64 * ds };
            let mid = 0.5 * (a + b2);
            let pm = z + v * mid;
            if grid.stencil_leaves_storage(pm) {
                return Err(leave());
            }
            let fm = grid.bilinear(values, pm);
            let fb = grid.bilinear(values, z + v * b2);
            acc += (b2 - a) / 6.0 * (fprev + 4.0 * fm + fb);
            fprev = fb;
        }
        prev = b;
    }
    Ok(acc)
}

// ----- mollification ---------------------------------------------------------

/// Convolution with the radial bump `exp(−1/(1−(r/α)²))` (support radius α),
/// normalized to unit mass on the discrete stencil. Before convolving, every
/// exterior node within depth `α + collar` of ∂Ω receives the field value at
/// its nearest boundary point, extending the field in the normal direction so
/// the kernel never sees unset storage.
pub fn mollify(field: &DensityField, alpha: f64) -> Result<DensityField, FieldError> {
    let grid = field.grid().clone();
    let h = grid.h();
    if !(alpha.is_finite() && alpha > 0.0) || alpha < 2.0 * h {
        return Err(FieldError::AlphaTooSmall { alpha, min: 2.0 * h });
    }
    if alpha > grid.max_alpha() {
        return Err(FieldError::AlphaExceedsReserve { alpha, max: grid.max_alpha() });
    }

    // Discrete kernel on offsets strictly inside the support disk.
    let r_nodes = (alpha / h).floor() as i64;
    let mut offsets: Vec<(i64, i64, f64)> = Vec::new();
    let mut total = 0.0;
    for dy in -r_nodes..=r_nodes {
        for dx in -r_nodes..=r_nodes {
            let r2 = ((dx * dx + dy * dy) as f64) * h * h;
            let rho2 = r2 / (alpha * alpha);
            if rho2 < 1.0 {
                let w = (-1.0 / (1.0 - rho2)).exp();
                offsets.push((dx, dy, w));
                total += w;
            }
        }
    }
    for o in &mut offsets {
        o.2 /= total;
    }

    let nx = grid.nx();
    let n = grid.node_count();
    let prefill_depth = alpha + COLLAR_FACTOR * h + 0.5 * h;
    let p = field.species_count();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        // Extended copy: exterior nodes in reach of any stencil get the
        // boundary value in the normal direction.
        let mut ext = field.species(i).to_vec();
        let filled: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .filter(|&idx| {
                grid.class(idx) == NodeClass::Exterior && grid.boundary_dist[idx] <= prefill_depth
            })
            .map(|idx| {
                let (_, zb, _) = grid.nearest_boundary(idx);
                (idx, grid.bilinear(field.species(i), zb))
            })
            .collect();
        for (idx, v) in filled {
            ext[idx] = v;
        }

        let mut conv = vec![0.0; n];
        let results: Vec<(u32, f64)> = grid
            .stored_nodes()
            .par_iter()
            .map(|&idx| {
                let ix = (idx as usize % nx) as i64;
                let iy = (idx as usize / nx) as i64;
                let mut acc = 0.0;
                for &(dx, dy, w) in &offsets {
                    let j = ((iy + dy) * nx as i64 + ix + dx) as usize;
                    acc += w * ext[j];
                }
                (idx, acc)
            })
            .collect();
        for (idx, v) in results {
            conv[idx as usize] = v;
        }
        out.push(conv);
    }
    Ok(DensityField::from_raw(grid, out))
}

// ----- boundary data ---------------------------------------------------------

/// Periodic piecewise-linear table over the boundary parameter `t ∈ [0, 1)`.
#[derive(Debug, Clone)]
struct BoundaryTable {
    ts: Vec<f64>,
    vs: Vec<f64>,
}

impl BoundaryTable {
    fn eval(&self, t: f64) -> f64 {
        match self.ts.len() {
            0 => 0.0,
            1 => self.vs[0],
            _ => {
                let t = t.rem_euclid(1.0);
                // Segment [ts[j], ts[j+1]) containing t, wrapping at the ends.
                let j = match self.ts.partition_point(|&x| x <= t) {
                    0 => self.ts.len() - 1,
                    q => q - 1,
                };
                let (t0, v0) = (self.ts[j], self.vs[j]);
                let (mut t1, v1) = if j + 1 == self.ts.len() {
                    (self.ts[0] + 1.0, self.vs[0])
                } else {
                    (self.ts[j + 1], self.vs[j + 1])
                };
                let mut tt = t;
                if tt < t0 {
                    tt += 1.0;
                }
                if t1 <= t0 {
                    t1 += 1.0;
                }
                let u = if t1 > t0 { (tt - t0) / (t1 - t0) } else { 0.0 };
                v0 + u * (v1 - v0)
            }
        }
    }
}

/// Prescribed nonnegative inflow data on ∂Ω, one table per velocity, with an
/// attached truncation level `k` producing the capped-and-smoothed boundary
/// trace on demand: values capped at `k/2`, then averaged through a bump
/// window of arc-length radius `1/k`. `k = ∞` leaves the raw tables in force.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    tables: Vec<BoundaryTable>,
    k: f64,
    /// Dense samples of the truncated trace at `t = q / TRUNCATED_CACHE_SAMPLES`,
    /// per species; empty when `k = ∞`.
    truncated_cache: Vec<Vec<f64>>,
}

impl BoundaryData {
    /// Builds raw (untruncated, `k = ∞`) data from `(t, species, value)` rows
    /// with zero-based species indices.
    pub fn from_rows(p: usize, rows: &[(f64, usize, f64)]) -> Result<Self, FieldError> {
        let mut pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); p];
        for &(t, i, v) in rows {
            if i >= p {
                return Err(FieldError::SpeciesOutOfRange { index: i, p });
            }
            if !v.is_finite() {
                return Err(FieldError::NonfiniteValue { species: i, x: t, y: 0.0 });
            }
            if v < 0.0 {
                return Err(FieldError::NegativeValue { species: i, x: t, y: 0.0, value: v });
            }
            pairs[i].push((t.rem_euclid(1.0), v));
        }
        let mut tables = Vec::with_capacity(p);
        for (i, mut ps) in pairs.into_iter().enumerate() {
            ps.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));
            for w in ps.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(FieldError::DuplicateParam { species: i, t: w[0].0 });
                }
            }
            tables.push(BoundaryTable {
                ts: ps.iter().map(|x| x.0).collect(),
                vs: ps.iter().map(|x| x.1).collect(),
            });
        }
        Ok(BoundaryData { tables, k: f64::INFINITY, truncated_cache: Vec::new() })
    }

    /// Constant data `c` for every species.
    pub fn constant(p: usize, c: f64) -> Result<Self, FieldError> {
        let rows: Vec<(f64, usize, f64)> = (0..p).map(|i| (0.0, i, c)).collect();
        Self::from_rows(p, &rows)
    }

    /// Loads a `t,i,value` CSV (species one-based, `#` comments, optional
    /// header line).
    pub fn load_csv(path: impl AsRef<Path>, p: usize) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(FieldError::Parse {
                    line: lineno + 1,
                    msg: format!("expected 3 comma-separated fields, got {}", parts.len()),
                });
            }
            let parsed: Result<(f64, usize, f64), String> = (|| {
                let t: f64 = parts[0].parse().map_err(|e| format!("bad t: {e}"))?;
                let i: usize = parts[1].parse().map_err(|e| format!("bad species index: {e}"))?;
                let v: f64 = parts[2].parse().map_err(|e| format!("bad value: {e}"))?;
                if i == 0 {
                    return Err("species indices are one-based".into());
                }
                Ok((t, i - 1, v))
            })();
            match parsed {
                Ok(row) => rows.push(row),
                Err(msg) => {
                    // Tolerate a single header line.
                    if rows.is_empty() && lineno == 0 {
                        continue;
                    }
                    return Err(FieldError::Parse { line: lineno + 1, msg });
                }
            }
        }
        Self::from_rows(p, &rows)
    }

    pub fn species_count(&self) -> usize {
        self.tables.len()
    }

    pub fn truncation(&self) -> f64 {
        self.k
    }

    /// Raw table value at boundary parameter `t`.
    pub fn raw(&self, i: usize, t: f64) -> f64 {
        self.tables[i].eval(t)
    }

    /// Returns a copy with truncation level `k`: traces are `min(f, k/2)`
    /// smoothed through an arc-length bump window of radius `1/k`, sampled
    /// densely at construction so repeated evaluation is cheap and
    /// deterministic. `k = ∞` clears truncation.
    pub fn with_truncation(&self, k: f64, domain: &ConvexDomain) -> Result<Self, FieldError> {
        if !(k > 0.0) {
            return Err(FieldError::InvalidTruncation(k));
        }
        let mut out = self.clone();
        out.k = k;
        out.truncated_cache = Vec::new();
        if k.is_infinite() {
            return Ok(out);
        }
        let radius = 1.0 / k;
        let m = BOUNDARY_MOLLIFIER_PANELS;
        // Simpson weights of the bump on [−1, 1], normalized discretely so
        // constants pass through unchanged.
        let mut wq = Vec::with_capacity(m + 1);
        let mut total = 0.0;
        for j in 0..=m {
            let u = -1.0 + 2.0 * j as f64 / m as f64;
            let bump = if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
            let simpson = if j == 0 || j == m {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let w = bump * simpson;
            wq.push(w);
            total += w;
        }
        for w in &mut wq {
            *w /= total;
        }
        let cap = 0.5 * k;
        let n = TRUNCATED_CACHE_SAMPLES;
        for table in &self.tables {
            let mut cache = Vec::with_capacity(n);
            for q in 0..n {
                let t = q as f64 / n as f64;
                let s_center = domain.arc_length_at(t);
                let mut acc = 0.0;
                for (j, &w) in wq.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let u = -1.0 + 2.0 * j as f64 / m as f64;
                    let tj = domain.param_at_arc_length(s_center + u * radius);
                    acc += w * table.eval(tj).min(cap);
                }
                cache.push(acc);
            }
            out.truncated_cache.push(cache);
        }
        Ok(out)
    }

    /// Truncated trace value at boundary parameter `t` (raw when `k = ∞`).
    pub fn eval(&self, i: usize, t: f64) -> f64 {
        if self.k.is_infinite() {
            return self.raw(i, t);
        }
        let cache = &self.truncated_cache[i];
        let n = cache.len();
        let x = t.rem_euclid(1.0) * n as f64;
        let j = (x.floor() as usize).min(n - 1);
        let frac = x - j as f64;
        let a = cache[j];
        let b = cache[(j + 1) % n];
        a + frac * (b - a)
    }

    /// Mass and entropy inflow of the raw data, per species:
    /// `∫ (v·n) f_b dσ` and `∫ (v·n) f_b (1 + ln f_b) dσ` over the ingoing
    /// arc, with `0·ln 0 = 0`.
    pub fn inflows(
        &self,
        model: &VelocityModel,
        domain: &ConvexDomain,
        samples: usize,
    ) -> Result<Vec<(f64, f64)>, FieldError> {
        let mut out = Vec::with_capacity(self.tables.len());
        for i in 0..self.tables.len() {
            let v = model.velocity(i);
            let part = domain.boundary_partition(v)?;
            let arc = part.arc_in;
            let n = samples.max(2);
            let mut mass = 0.0;
            let mut entropy = 0.0;
            for q in 0..=n {
                let u = q as f64 / n as f64;
                let t = arc.at(u);
                let zt = domain.boundary_point(t);
                let flux = v.dot(domain.inward_normal(zt));
                let speed = domain.boundary_tangent(t).norm() * arc.param_len();
                let f = self.raw(i, t);
                let wq = if q == 0 || q == n { 0.5 } else { 1.0 };
                let w = wq * flux.max(0.0) * speed / n as f64;
                mass += w * f;
                if f > 0.0 {
                    entropy += w * f * (1.0 + f.ln());
                }
            }
            out.push((mass, entropy));
        }
        Ok(out)
    }
}

/// Boundary trace seen by species `i` at `z ∈ Ω`: traces backwards along `v`
/// to the entry point and evaluates the (possibly truncated) boundary data
/// there.
pub fn ingoing_trace(
    bd: &BoundaryData,
    i: usize,
    v: Vec2,
    z: Vec2,
    domain: &ConvexDomain,
) -> Result<f64, FieldError> {
    if i >= bd.species_count() {
        return Err(FieldError::SpeciesOutOfRange { index: i, p: bd.species_count() });
    }
    let tr = domain.trace(z, v)?;
    let t = domain.param_of_boundary_point(tr.z_plus);
    Ok(bd.eval(i, t))
}
