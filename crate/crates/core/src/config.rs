//! Declarative run configuration: one TOML file naming the model, domain,
//! boundary table, grid, schedules, and diagnostics tunables.
//!
//! Paths are resolved relative to the config file's directory and must exist
//! at load time. Truncation levels accept the string `"inf"` for the
//! untruncated operator, since TOML has no infinity literal.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::diagnostics::DiagnosticsOptions;
use crate::geometry::{ConvexDomain, GeometryError};
use crate::solver::{SolverConfig, SolverError};
use crate::vec2::Vec2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("config references missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub boundary_path: PathBuf,
    pub domain: ConvexDomain,
    pub solver: SolverConfig,
    pub diagnostics: DiagnosticsOptions,
    /// Relative acceptance threshold: the run passes when the final
    /// mild-form residual is at most this fraction of the total mass.
    pub mild_residual_rel: f64,
    /// Optional default output directory (CLI flags override it).
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    domain: RawDomain,
    boundary: RawBoundary,
    grid: RawGrid,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    #[serde(default)]
    acceptance: RawAcceptance,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    path: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: String,
    #[serde(default = "one")]
    a: f64,
    #[serde(default = "one")]
    b: f64,
    #[serde(default)]
    squareness: f64,
    #[serde(default)]
    center: [f64; 2],
    #[serde(default)]
    rotation: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    path: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    h: f64,
}

/// A truncation level: a number or the string `"inf"`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KEntry {
    Num(f64),
    Label(String),
}

impl KEntry {
    fn value(&self) -> Result<f64, ConfigError> {
        match self {
            KEntry::Num(v) => Ok(*v),
            KEntry::Label(s) if s == "inf" => Ok(f64::INFINITY),
            KEntry::Label(s) => Err(ConfigError::Invalid(format!(
                "truncation level must be a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    alpha_schedule: Option<Vec<f64>>,
    k_schedule: Option<Vec<KEntry>>,
    picard_tol: Option<f64>,
    picard_max_iters: Option<usize>,
    relaxation: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    eps: Option<Vec<f64>>,
    shift_multiples: Option<Vec<f64>>,
    boundary_samples: Option<usize>,
    flux_samples: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAcceptance {
    mild_residual_rel: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Loads and validates a config file; relative paths are taken from the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

        let model_path = resolve(&base, &raw.model.path);
        if !model_path.is_file() {
            return Err(ConfigError::MissingFile { path: model_path });
        }
        let boundary_path = resolve(&base, &raw.boundary.path);
        if !boundary_path.is_file() {
            return Err(ConfigError::MissingFile { path: boundary_path });
        }

        let d = &raw.domain;
        let center = Vec2::new(d.center[0], d.center[1]);
        let domain = match d.kind.as_str() {
            "disk" => ConvexDomain::ellipse(d.a, d.a, center, d.rotation)?,
            "ellipse" => ConvexDomain::ellipse(d.a, d.b, center, d.rotation)?,
            "squircle" => ConvexDomain::squircle(d.a, d.b, d.squareness, center, d.rotation)?,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "domain kind must be disk, ellipse, or squircle, got {other:?}"
                )))
            }
        };

        let mut solver = SolverConfig::new(raw.grid.h);
        if let Some(a) = raw.solver.alpha_schedule {
            solver.alpha_schedule = a;
        }
        if let Some(ks) = raw.solver.k_schedule {
            solver.k_schedule = ks.iter().map(|k| k.value()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = raw.solver.picard_tol {
            solver.picard_tol = v;
        }
        if let Some(v) = raw.solver.picard_max_iters {
            solver.picard_max_iters = v;
        }
        if let Some(v) = raw.solver.relaxation {
            solver.relaxation = v;
        }
        solver.validate()?;

        let mut diagnostics = DiagnosticsOptions::default();
        if let Some(v) = raw.diagnostics.eps {
            diagnostics.eps_values = v;
        }
        if let Some(v) = raw.diagnostics.shift_multiples {
            diagnostics.shift_multiples = v;
        }
        if let Some(v) = raw.diagnostics.boundary_samples {
            diagnostics.boundary_samples = v;
        }
        if let Some(v) = raw.diagnostics.flux_samples {
            diagnostics.flux_samples = v;
        }
        for &e in &diagnostics.eps_values {
            if !(e > 0.0 && e < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "diagnostics eps values must lie in (0, 1), got {e}"
                )));
            }
        }
        for &m in &diagnostics.shift_multiples {
            if !(m > 0.0 && m.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "shift multiples must be positive, got {m}"
                )));
            }
        }
        if diagnostics.boundary_samples == 0 || diagnostics.flux_samples == 0 {
            return Err(ConfigError::Invalid("sample counts must be positive".into()));
        }

        let mild_residual_rel = raw.acceptance.mild_residual_rel.unwrap_or(1e-4);
        if !(mild_residual_rel > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "acceptance mild_residual_rel must be positive, got {mild_residual_rel}"
            )));
        }

        let output_dir = raw.output.dir.map(|p| resolve(&base, &p));

        Ok(RunConfig {
            model_path,
            boundary_path,
            domain,
            solver,
            diagnostics,
            mild_residual_rel,
            output_dir,
        })
    }
}
