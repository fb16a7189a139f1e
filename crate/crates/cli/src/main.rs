//! Command-line driver: certify velocity models, run the damping/truncation
//! continuation with full artifact output, and regenerate diagnostics
//! reports from stored fields.
//!
//! Exit codes: `0` success, `1` a certification or convergence check failed
//! (artifacts are still written), `2` unusable input (bad config, missing or
//! malformed files, mismatched grid metadata).
//!
//! `DVM_THREADS` caps the worker-thread count; runs are bitwise reproducible
//! for any value of it because all reductions are ordered.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dvm_core::io::{
    ladder_rows, read_field, sidecar_path, write_field, write_ladder, write_report, write_stages,
    ArtifactError,
};
use dvm_core::model::ModelError;
use dvm_core::solver::{SolverError, StageSummary};
use dvm_core::{
    atomic_write, k_label, validate_model, BoundaryData, Grid, RunConfig, Solver, VelocityModel,
};

#[derive(Parser)]
#[command(name = "dvm", version, about = "Stationary discrete-velocity transport: solve and certify")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Certify a velocity model: normality and the transversality gap.
    ///
    /// Writes the certificate as JSON. Exits 0 only for a normal model with a
    /// strictly positive gap.
    Validate {
        /// Model TOML file (velocities and reactions).
        model: PathBuf,
        /// Certificate path (default: the model path with a
        /// `.certificate.json` extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the continuation schedule and write fields, reports, and the
    /// cross-truncation ladder.
    Solve {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to the config's `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute diagnostics reports from stored fields.
    ///
    /// Reads each `field_k<label>.csv` named by the config's truncation
    /// schedule and rewrites the matching reports; a re-run on unchanged
    /// fields reproduces them byte for byte.
    Diagnose {
        /// Directory holding field artifacts from a solve run.
        #[arg(long)]
        fields: PathBuf,
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> anyhow::Result<u8> {
        init_thread_pool()?;
        match cli.cmd {
            Cmd::Validate { model, out } => cmd_validate(&model, out.as_deref()),
            Cmd::Solve { config, out } => cmd_solve(&config, out.as_deref()),
            Cmd::Diagnose { fields, config } => cmd_diagnose(&fields, &config),
        }
    })();
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Builds the global worker pool from `DVM_THREADS` when set.
fn init_thread_pool() -> anyhow::Result<()> {
    match std::env::var("DVM_THREADS") {
        Ok(s) => {
            let n: usize = s
                .trim()
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .with_context(|| format!("DVM_THREADS must be a positive integer, got {s:?}"))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("failed to build the worker-thread pool")?;
            Ok(())
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(e).context("DVM_THREADS is not valid unicode"),
    }
}

fn cmd_validate(model_path: &Path, out: Option<&Path>) -> anyhow::Result<u8> {
    let model = match VelocityModel::load(model_path) {
        Ok(m) => m,
        Err(e @ (ModelError::Io(_) | ModelError::Parse(_))) => {
            return Err(e).with_context(|| format!("cannot load model {}", model_path.display()))
        }
        Err(e) => {
            // The file parsed; the model it describes is structurally invalid.
            eprintln!("model rejected: {e}");
            return Ok(1);
        }
    };
    let cert = match validate_model(&model, 1e-9) {
        Ok(c) => c,
        Err(ModelError::Invalid { findings }) => {
            eprintln!("model fails certification:");
            for f in &findings {
                eprintln!("  - {f}");
            }
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };

    let cert_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model_path.with_extension("certificate.json"));
    let mut json = serde_json::to_vec_pretty(&cert).context("encode certificate")?;
    json.push(b'\n');
    atomic_write(&cert_path, &json)
        .with_context(|| format!("cannot write {}", cert_path.display()))?;

    println!("model: {} velocities, {} tensor entries", model.p(), model.gamma_entries().count());
    println!("normal: {}", cert.normal);
    println!("invariant kernel dimension: {}", cert.invariant_kernel_dim);
    println!("transversality gap eta: {:.6}", cert.eta);
    println!("exact arithmetic: {}", cert.exact_arithmetic);
    if !cert.violations.is_empty() {
        println!("findings:");
        for f in &cert.violations {
            println!("  - {f}");
        }
    }
    println!("certificate written to {}", cert_path.display());
    Ok(if cert.normal && cert.eta > 0.0 { 0 } else { 1 })
}

/// Loads everything a solve or diagnose run needs from a config.
fn load_run(cfg: &RunConfig) -> anyhow::Result<(VelocityModel, BoundaryData, Arc<Grid>)> {
    let model = VelocityModel::load(&cfg.model_path)
        .with_context(|| format!("cannot load model {}", cfg.model_path.display()))?;
    let bd = BoundaryData::load_csv(&cfg.boundary_path, model.p())
        .with_context(|| format!("cannot load boundary data {}", cfg.boundary_path.display()))?;
    let grid = Grid::new(&cfg.domain, cfg.solver.h, cfg.solver.alpha_schedule[0])
        .context("cannot build the grid")?;
    Ok((model, bd, grid))
}

fn stage_field_path(dir: &Path, label: &str, alpha: f64) -> PathBuf {
    dir.join(format!("field_k{label}_alpha{alpha}.csv"))
}

fn write_rung_artifacts(
    dir: &Path,
    label: &str,
    k: f64,
    stages: &[StageSummary],
    final_field: &dvm_core::DensityField,
    final_alpha: f64,
    report: &dvm_core::DiagnosticsReport,
) -> anyhow::Result<()> {
    for s in stages {
        write_field(&stage_field_path(dir, label, s.alpha), &s.field, s.alpha, k)?;
    }
    write_field(&dir.join(format!("field_k{label}.csv")), final_field, final_alpha, k)?;
    write_report(
        &dir.join(format!("report_k{label}.json")),
        &dir.join(format!("report_k{label}.txt")),
        report,
    )?;
    write_stages(&dir.join(format!("stages_k{label}.csv")), stages)?;
    Ok(())
}

fn cmd_solve(config_path: &Path, out: Option<&Path>) -> anyhow::Result<u8> {
    let cfg = RunConfig::load(config_path)
        .with_context(|| format!("cannot load config {}", config_path.display()))?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set [output] dir in the config")?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let (model, bd, grid) = load_run(&cfg)?;
    let solver = Solver::new(model, cfg.domain.clone(), grid)
        .context("cannot set up the solver")?
        .with_diagnostics(cfg.diagnostics.clone());
    let alpha_last = *cfg.solver.alpha_schedule.last().expect("validated schedule");

    let mut ladder: Vec<(f64, Vec<(String, f64)>)> = Vec::new();
    let mut code = 0u8;
    for &k in &cfg.solver.k_schedule {
        let label = k_label(k);
        println!("k={label}: continuation over {} damping stages", cfg.solver.alpha_schedule.len());
        match solver.continuation_solve(&bd, k, &cfg.solver) {
            Ok(res) => {
                for s in &res.stages {
                    println!(
                        "  alpha={}: {} sweeps, update {:.3e}",
                        s.alpha, s.iterations, s.final_update_norm
                    );
                }
                write_rung_artifacts(
                    &out_dir,
                    &label,
                    k,
                    &res.stages,
                    &res.field,
                    alpha_last,
                    &res.diagnostics,
                )?;
                ladder.push((k, ladder_rows(&res.diagnostics)));
                let threshold = cfg.mild_residual_rel * res.diagnostics.mass;
                let ok = res.diagnostics.mild_residual_l1 <= threshold;
                println!(
                    "k={label}: mild residual {:.3e} vs threshold {:.3e}: {}",
                    res.diagnostics.mild_residual_l1,
                    threshold,
                    if ok { "ok" } else { "ABOVE THRESHOLD" }
                );
                if !ok {
                    code = 1;
                }
            }
            Err(SolverError::NotConverged { stage, alpha, iterations, update_norm, partial }) => {
                eprintln!(
                    "k={label}: stage {stage} (alpha={alpha}) stalled after {iterations} sweeps \
                     (last update {update_norm:.3e}); partial artifacts written"
                );
                write_rung_artifacts(
                    &out_dir,
                    &label,
                    k,
                    &partial.stages,
                    &partial.field,
                    alpha,
                    &partial.diagnostics,
                )?;
                ladder.push((k, ladder_rows(&partial.diagnostics)));
                code = 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_ladder(&out_dir.join("ladder.csv"), &ladder)?;
    println!("artifacts in {}", out_dir.display());
    Ok(code)
}

fn cmd_diagnose(fields_dir: &Path, config_path: &Path) -> anyhow::Result<u8> {
    let cfg = RunConfig::load(config_path)
        .with_context(|| format!("cannot load config {}", config_path.display()))?;
    let (model, bd, grid) = load_run(&cfg)?;
    let p = model.p();
    let solver = Solver::new(model, cfg.domain.clone(), grid)
        .context("cannot set up the solver")?
        .with_diagnostics(cfg.diagnostics.clone());

    for &k in &cfg.solver.k_schedule {
        let label = k_label(k);
        let path = fields_dir.join(format!("field_k{label}.csv"));
        let (field, meta) = match read_field(&path, solver.grid(), p) {
            Ok(pair) => pair,
            Err(e @ ArtifactError::BadValue { .. }) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
            Err(e) => {
                return Err(e).with_context(|| format!("cannot read field {}", path.display()))
            }
        };
        let stored_k = meta
            .k_value()
            .with_context(|| format!("{}: bad truncation label {:?}", sidecar_path(&path).display(), meta.k))?;
        if stored_k != k {
            anyhow::bail!(
                "{}: sidecar says k={} but the config schedule expects k={label}",
                path.display(),
                meta.k
            );
        }
        let bdk = if bd.truncation() == k {
            bd.clone()
        } else {
            bd.with_truncation(k, &cfg.domain)?
        };
        let report = solver.diagnose(&bdk, &field, meta.alpha, k)?;
        write_report(
            &fields_dir.join(format!("report_k{label}.json")),
            &fields_dir.join(format!("report_k{label}.txt")),
            &report,
        )?;
        println!("k={label}: report regenerated from {}", path.display());
    }
    Ok(0)
}
