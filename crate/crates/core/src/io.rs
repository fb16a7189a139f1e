//! Artifact persistence: density-field CSVs with grid-metadata sidecars,
//! diagnostics reports (JSON and aligned text), and ladder tables.
//!
//! Every write lands via a temp-file-and-rename step so a crashed run never
//! leaves a half-written artifact behind. Numeric columns use 17 significant
//! digits, which round-trips `f64` exactly; re-reading a field therefore
//! reproduces it bit for bit, and re-running diagnostics on it reproduces the
//! stored report byte for byte.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{k_label, DiagnosticsReport};
use crate::fields::{DensityField, Grid};
use crate::solver::StageSummary;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("grid metadata mismatch in {path}: {what} is {found}, expected {expected}")]
    MetadataMismatch { path: PathBuf, what: &'static str, expected: String, found: String },
    #[error(
        "invalid value in {path}: species {species} at node ({x}, {y}) has {value}, \
         which is not a finite nonnegative density"
    )]
    BadValue { path: PathBuf, species: usize, x: f64, y: f64, value: f64 },
    #[error("{path} is missing a value for species {species} at stored node ({x}, {y})")]
    MissingNode { path: PathBuf, species: usize, x: f64, y: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` atomically: a unique temp file in the same
/// directory is written, flushed, and renamed over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| ArtifactError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "path has no file name".into(),
        })?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Grid and stage metadata stored next to each field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    /// Number of velocities.
    pub p: usize,
    /// Truncation level label (`"inf"` means untruncated).
    pub k: String,
    pub alpha: f64,
}

impl FieldMeta {
    pub fn describe(field: &DensityField, alpha: f64, k: f64) -> Self {
        let g = field.grid();
        let origin = g.origin();
        FieldMeta {
            h: g.h(),
            x0: origin.x,
            y0: origin.y,
            nx: g.nx(),
            ny: g.ny(),
            p: field.species_count(),
            k: k_label(k),
            alpha,
        }
    }

    /// Parses the truncation label back to a level.
    pub fn k_value(&self) -> Option<f64> {
        if self.k == "inf" {
            Some(f64::INFINITY)
        } else {
            self.k.parse().ok().filter(|v: &f64| v.is_finite())
        }
    }

    /// Checks that the sidecar describes exactly this grid and species count.
    /// Stored floats round-trip exactly, so the comparison is bitwise.
    pub fn check(&self, grid: &Grid, p: usize, path: &Path) -> Result<(), ArtifactError> {
        let origin = grid.origin();
        let mismatch = |what: &'static str, expected: String, found: String| {
            Err(ArtifactError::MetadataMismatch { path: path.to_path_buf(), what, expected, found })
        };
        if self.h != grid.h() {
            return mismatch("h", grid.h().to_string(), self.h.to_string());
        }
        if self.x0 != origin.x || self.y0 != origin.y {
            return mismatch(
                "origin",
                format!("({}, {})", origin.x, origin.y),
                format!("({}, {})", self.x0, self.y0),
            );
        }
        if self.nx != grid.nx() || self.ny != grid.ny() {
            return mismatch(
                "grid shape",
                format!("{}x{}", grid.nx(), grid.ny()),
                format!("{}x{}", self.nx, self.ny),
            );
        }
        if self.p != p {
            return mismatch("species count", p.to_string(), self.p.to_string());
        }
        Ok(())
    }
}

/// Sidecar path for a field CSV: `fields_k4.csv` -> `fields_k4.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Writes a field as `x,y,species,value` rows (species one-based) over the
/// stored nodes, plus a JSON metadata sidecar. 17 significant digits per
/// value make the round trip exact.
pub fn write_field(
    path: &Path,
    field: &DensityField,
    alpha: f64,
    k: f64,
) -> Result<(), ArtifactError> {
    let grid = field.grid();
    let mut out = String::with_capacity(grid.stored_nodes().len() * field.species_count() * 64);
    out.push_str("x,y,species,value\n");
    for i in 0..field.species_count() {
        let vals = field.species(i);
        for &idx in grid.stored_nodes() {
            let z = grid.node_pos(idx as usize);
            use std::fmt::Write;
            writeln!(out, "{:.16e},{:.16e},{},{:.16e}", z.x, z.y, i + 1, vals[idx as usize])
                .expect("string write");
        }
    }
    atomic_write(path, out.as_bytes())?;
    let meta = FieldMeta::describe(field, alpha, k);
    let json = serde_json::to_vec_pretty(&meta)
        .map_err(|source| ArtifactError::Json { path: sidecar_path(path), source })?;
    atomic_write(&sidecar_path(path), &json)
}

/// Reads a field CSV and sidecar back onto an existing grid.
///
/// The sidecar must match the grid bit for bit; every stored node of every
/// species must appear exactly once; values must be finite and nonnegative.
/// Violations name the offending node.
pub fn read_field(
    path: &Path,
    grid: &Arc<Grid>,
    p: usize,
) -> Result<(DensityField, FieldMeta), ArtifactError> {
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: FieldMeta = serde_json::from_str(&meta_text)
        .map_err(|source| ArtifactError::Json { path: meta_path.clone(), source })?;
    meta.check(grid, p, path)?;

    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let origin = grid.origin();
    let h = grid.h();
    let n = grid.node_count();
    let mut values = vec![vec![f64::NAN; n]; p];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with('x')) {
            continue;
        }
        let parse_err = |msg: String| ArtifactError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", parts.len())));
        }
        let x: f64 = parts[0].parse().map_err(|e| parse_err(format!("bad x: {e}")))?;
        let y: f64 = parts[1].parse().map_err(|e| parse_err(format!("bad y: {e}")))?;
        let sp: usize = parts[2].parse().map_err(|e| parse_err(format!("bad species: {e}")))?;
        let value: f64 = parts[3].parse().map_err(|e| parse_err(format!("bad value: {e}")))?;
        if sp == 0 || sp > p {
            return Err(parse_err(format!("species {sp} out of range 1..={p}")));
        }
        let ix = ((x - origin.x) / h).round();
        let iy = ((y - origin.y) / h).round();
        let on_node = |coord: f64, rounded: f64, start: f64| {
            (coord - (start + rounded * h)).abs() <= 1e-9 * h
        };
        if ix < 0.0
            || iy < 0.0
            || ix as usize >= grid.nx()
            || iy as usize >= grid.ny()
            || !on_node(x, ix, origin.x)
            || !on_node(y, iy, origin.y)
        {
            return Err(parse_err(format!("({x}, {y}) is not a grid node")));
        }
        let idx = iy as usize * grid.nx() + ix as usize;
        if !(value.is_finite() && value >= 0.0) {
            return Err(ArtifactError::BadValue {
                path: path.to_path_buf(),
                species: sp,
                x,
                y,
                value,
            });
        }
        if !values[sp - 1][idx].is_nan() {
            return Err(parse_err(format!("duplicate value for species {sp} at ({x}, {y})")));
        }
        values[sp - 1][idx] = value;
    }
    for (i, vals) in values.iter_mut().enumerate() {
        for &idx in grid.stored_nodes() {
            if vals[idx as usize].is_nan() {
                let z = grid.node_pos(idx as usize);
                return Err(ArtifactError::MissingNode {
                    path: path.to_path_buf(),
                    species: i + 1,
                    x: z.x,
                    y: z.y,
                });
            }
        }
        // Unreferenced (exterior) slots revert to the zero placeholder.
        for v in vals.iter_mut() {
            if v.is_nan() {
                *v = 0.0;
            }
        }
    }
    Ok((DensityField::from_raw(Arc::clone(grid), values), meta))
}

/// Serializes a report to pretty JSON; field order and float rendering are
/// deterministic, so equal reports produce identical bytes.
pub fn report_json(report: &DiagnosticsReport) -> Result<Vec<u8>, ArtifactError> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|source| ArtifactError::Json {
        path: PathBuf::from("<report>"),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the JSON and aligned-text renderings of a report.
pub fn write_report(
    json_path: &Path,
    text_path: &Path,
    report: &DiagnosticsReport,
) -> Result<(), ArtifactError> {
    atomic_write(json_path, &report_json(report)?)?;
    atomic_write(text_path, report.to_text().as_bytes())
}

/// Flattens a report into `(quantity, value)` rows for the ladder table.
pub fn ladder_rows(report: &DiagnosticsReport) -> Vec<(String, f64)> {
    let mut rows = vec![
        ("mass".to_string(), report.mass),
        ("entropy".to_string(), report.entropy),
        ("entropy_dissipation".to_string(), report.entropy_dissipation),
        ("inflow_total".to_string(), report.inflow_total),
        ("outflow_total".to_string(), report.outflow_total),
        ("damped_mass_residual".to_string(), report.damped_mass_residual),
        ("momentum_residual_x".to_string(), report.momentum_residual[0]),
        ("momentum_residual_y".to_string(), report.momentum_residual[1]),
        ("energy_residual".to_string(), report.energy_residual),
        ("mild_residual_l1".to_string(), report.mild_residual_l1),
        ("expo_mild_gap".to_string(), report.expo_mild_gap),
        ("outgoing_flow_control".to_string(), report.outgoing_flow_control),
        ("transverse_max".to_string(), report.transverse_max),
    ];
    for (i, v) in report.inflow.iter().enumerate() {
        rows.push((format!("inflow[species={}]", i + 1), *v));
    }
    for m in &report.exceptional_measures {
        rows.push((format!("exceptional_measure[species={},eps={}]", m.species, m.eps), m.measure));
    }
    for e in &report.equicontinuity {
        rows.push((
            format!(
                "equicontinuity[species={},dir={},shift={}]",
                e.species, e.direction, e.magnitude
            ),
            e.modulus,
        ));
    }
    rows
}

/// Writes the cross-truncation ladder as a `k,quantity,value` CSV.
pub fn write_ladder(path: &Path, per_k: &[(f64, Vec<(String, f64)>)]) -> Result<(), ArtifactError> {
    let mut out = String::from("k,quantity,value\n");
    for (k, rows) in per_k {
        for (quantity, value) in rows {
            use std::fmt::Write;
            writeln!(out, "{},{},{:.16e}", k_label(*k), quantity, value).expect("string write");
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Writes the continuation trace (one row per damping stage) as CSV.
pub fn write_stages(path: &Path, stages: &[StageSummary]) -> Result<(), ArtifactError> {
    let mut out = String::from("alpha,iterations,final_update_norm,converged,distance_from_previous\n");
    for s in stages {
        use std::fmt::Write;
        writeln!(
            out,
            "{},{},{:.16e},{},{:.16e}",
            s.alpha, s.iterations, s.final_update_norm, s.converged, s.distance_from_previous,
        )
        .expect("string write");
    }
    atomic_write(path, out.as_bytes())
}
