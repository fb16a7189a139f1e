//! Solver and verification suite for stationary boundary-value problems of
//! planar discrete-velocity kinetic models.
//!
//! Densities `F_i(x)` for finitely many velocities `v_i` satisfy
//! `v_i · ∇F_i = Q_i(F)` in a bounded convex domain, with prescribed inflow
//! on the part of the boundary where `v_i` points inward. The solver works on
//! a regularized family of such problems — an absorption term `α F_i`, a
//! truncated and mollified collision operator at level `k` — and drives the
//! regularization down a schedule while certifying, numerically, the a-priori
//! bounds that hold uniformly along the way: mass-flux balance, entropy
//! production, outgoing-flow control, smallness of exceptional boundary sets,
//! and equicontinuity of averaged frequencies.
//!
//! Module map:
//! - [`model`]: velocity sets, collision-tensor symmetry closure, normality
//!   certification;
//! - [`geometry`]: convex domains, boundary parametrization, ray traces;
//! - [`fields`]: grids, nonnegative density fields, boundary data,
//!   mollification;
//! - [`collision`]: gain/loss evaluation, truncation, entropy production;
//! - [`solver`]: chord tables, damped transport sweeps, Picard iteration,
//!   continuation in `(α, k)`;
//! - [`diagnostics`]: the certification suite producing one report per
//!   solved stage;
//! - [`config`] and [`io`]: run descriptions and on-disk artifacts.

pub mod collision;
pub mod config;
pub mod diagnostics;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod model;
pub mod solver;
mod vec2;

pub use collision::{
    entropy_production, entropy_production_flagged, eval_truncated, eval_untruncated,
    frozen_fields, CollisionError, CollisionEval,
};
pub use config::{ConfigError, RunConfig};
pub use diagnostics::{
    equicontinuity_modulus, exceptional_set, flux_balance, k_label, mass_entropy, mild_residual,
    outgoing_flow_control, transverse_estimate, DiagnosticsError, DiagnosticsOptions,
    DiagnosticsReport, DiagnosticsSuite, FluxBalance,
};
pub use fields::{
    ingoing_trace, line_integral, mollify, BoundaryData, DensityField, FieldError, Grid,
};
pub use geometry::{ConvexDomain, GeometryError, RayTrace};
pub use io::{
    atomic_write, ladder_rows, read_field, report_json, sidecar_path, write_field, write_ladder,
    write_report, write_stages, ArtifactError, FieldMeta,
};
pub use model::{
    interacting_index_sets, validate_model, InteractionSets, ModelCertificate, ModelError,
    VelocityModel,
};
pub use solver::{
    continuation_solve, damped_sweep, k_ladder, solve_damped, ChordTables, SolveResult, Solver,
    SolverConfig, SolverError, StageSummary,
};
pub use vec2::Vec2;
