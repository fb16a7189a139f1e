//! Acceptance gate for the solver: nine end-to-end checks, each printing one
//! verdict line, and the test fails unless every line reads PASS.
//!
//! Later checks reuse fixtures produced by earlier ones (the fine-grid
//! solver, the truncation ladder), so the evaluation order differs slightly
//! from the numbering; verdict lines are printed in numeric order at the end.
//! Tolerances are pinned inline next to each check.

mod newton_oracle;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use dvm_core::{
    entropy_production, BoundaryData, ConvexDomain, DensityField, DiagnosticsReport, Grid,
    SolveResult, Solver, SolverConfig, Vec2, VelocityModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FINE_H: f64 = 1.0 / 64.0;
const MID_H: f64 = 1.0 / 32.0;

fn m4_velocities() -> Vec<Vec2> {
    vec![
        Vec2::new(2.0, 1.0),
        Vec2::new(3.0, 2.0),
        Vec2::new(2.0, 2.0),
        Vec2::new(3.0, 1.0),
    ]
}

/// The four-velocity normal model with its single reaction `(1,2) <-> (3,4)`.
fn m4_model() -> VelocityModel {
    VelocityModel::new(m4_velocities(), &[((0, 1, 2, 3), 1.0)]).expect("four-velocity model")
}

/// Sinusoidal inflow knots `base + amp·sin(2πt + phase(i))` for 4 species.
fn sine_rows(knots: usize, base: f64, amp: f64, phase: impl Fn(usize) -> f64) -> Vec<(f64, usize, f64)> {
    let mut rows = Vec::with_capacity(4 * knots);
    for i in 0..4 {
        let ph = phase(i);
        for j in 0..knots {
            let t = j as f64 / knots as f64;
            rows.push((t, i, base + amp * (TAU * t + ph).sin()));
        }
    }
    rows
}

/// Fixtures shared forward between criteria.
#[derive(Default)]
struct Ctx {
    solver64: Option<Arc<Solver>>,
    solver32: Option<Arc<Solver>>,
    /// Truncation ladder on the fine grid with unit (Maxwellian) inflow.
    ladder_maxwell: Option<Vec<(f64, SolveResult)>>,
    /// Truncation ladder on the mid grid with small sinusoidal inflow.
    ladder_small: Option<Vec<(f64, SolveResult)>>,
    free_field: Option<DensityField>,
    damped: Vec<(f64, SolveResult)>,
    refined: Vec<SolveResult>,
    picard_ref: Option<DensityField>,
}

fn mid_solver(ctx: &mut Ctx) -> Arc<Solver> {
    if ctx.solver32.is_none() {
        let domain = ConvexDomain::unit_disk();
        let grid = Grid::new(&domain, MID_H, 0.1).expect("mid grid");
        let solver = Solver::new(m4_model(), domain, grid).expect("mid solver");
        ctx.solver32 = Some(Arc::new(solver));
    }
    ctx.solver32.clone().unwrap()
}

// --- criterion 1 -------------------------------------------------------------
// Unit inflow (the Maxwellian exp(0)) on the unit disk, h = 1/64, truncation
// ladder k ∈ {4, 16, 64} with damping schedule [1e-1, 1e-2, 1e-3, 0]. Every
// rung must converge with mild-form residual ≤ 1e-4 of the mass and entropy
// dissipation ≤ 1e-8, inside 2 minutes on one thread.
fn c1_maxwellian_ladder(ctx: &mut Ctx) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("1-thread pool");
    let config = SolverConfig::new(FINE_H);
    let bd = BoundaryData::constant(4, 1.0).expect("unit inflow");
    let start = Instant::now();
    let (solver, ladder) = pool.install(|| {
        let domain = ConvexDomain::unit_disk();
        let grid = Grid::new(&domain, FINE_H, 0.1).expect("fine grid");
        let solver = Solver::new(m4_model(), domain, grid).expect("fine solver");
        let ladder = solver.k_ladder(&bd, &config).expect("ladder");
        (solver, ladder)
    });
    let elapsed = start.elapsed().as_secs_f64();

    let mut worst_resid = 0.0f64;
    let mut worst_diss = 0.0f64;
    for (k, res) in &ladder {
        assert!(res.converged, "rung k={k} did not converge");
        let rep = &res.diagnostics;
        let lim = 1e-4 * rep.mass;
        assert!(
            rep.mild_residual_l1 <= lim,
            "rung k={k}: mild residual {:.3e} exceeds 1e-4·mass = {lim:.3e}",
            rep.mild_residual_l1
        );
        assert!(
            rep.entropy_dissipation <= 1e-8,
            "rung k={k}: entropy dissipation {:.3e} exceeds 1e-8",
            rep.entropy_dissipation
        );
        worst_resid = worst_resid.max(rep.mild_residual_l1 / rep.mass);
        worst_diss = worst_diss.max(rep.entropy_dissipation);
    }
    assert!(elapsed <= 120.0, "ladder took {elapsed:.1}s, limit 120s");

    ctx.solver64 = Some(Arc::new(solver));
    ctx.ladder_maxwell = Some(ladder);
    format!(
        "3 rungs converged; worst mild residual {worst_resid:.1e}·mass, \
         worst dissipation {worst_diss:.1e}; {elapsed:.1}s on one thread"
    )
}

// --- criterion 2 -------------------------------------------------------------
// With all rates zero the solution is the ingoing data transported along
// characteristics. One Picard sweep must converge, and every interior node
// must match the data at its upwind boundary point to 2h².
fn c2_transport_identity(ctx: &mut Ctx) -> String {
    let free = VelocityModel::new(m4_velocities(), &[]).expect("collisionless model");
    let domain = ConvexDomain::unit_disk();
    let h = MID_H;
    let grid = Grid::new(&domain, h, 0.0).expect("grid");
    let solver = Solver::new(free, domain.clone(), grid).expect("solver");

    // Piecewise-linear inflow with deliberately uneven knots.
    let mut rows = Vec::new();
    for i in 0..4 {
        let base = [0.4, 1.3, 0.8, 1.9][i];
        for (j, t) in [0.0, 0.17, 0.42, 0.63, 0.81].into_iter().enumerate() {
            rows.push((t, i, base + 0.3 * ((i + 2 * j) % 5) as f64));
        }
    }
    let bd = BoundaryData::from_rows(4, &rows).expect("inflow");

    let mut config = SolverConfig::new(h);
    config.alpha_schedule = vec![0.0];
    config.k_schedule = vec![f64::INFINITY];
    let res = solver.continuation_solve(&bd, f64::INFINITY, &config).expect("solve");
    assert!(res.converged, "collisionless solve did not converge");
    assert_eq!(res.iterations, 1, "expected exactly one Picard sweep, got {}", res.iterations);

    let tol = 2.0 * h * h;
    let mut worst = 0.0f64;
    for i in 0..4 {
        let v = solver.model().velocity(i);
        let vals = res.field.species(i);
        for &idx in solver.grid().interior_nodes() {
            let z = solver.grid().node_pos(idx as usize);
            let tr = domain.trace(z, v).expect("trace");
            let t = domain.param_of_boundary_point(tr.z_plus);
            let want = bd.raw(i, t);
            let diff = (vals[idx as usize] - want).abs();
            worst = worst.max(diff);
            assert!(
                diff <= tol,
                "species {} node ({:.3}, {:.3}): |{} - {}| = {diff:.3e} > 2h² = {tol:.3e}",
                i + 1,
                z.x,
                z.y,
                vals[idx as usize],
                want
            );
        }
    }
    ctx.free_field = Some(res.field);
    format!("one sweep; worst node deviation {worst:.1e} ≤ 2h² = {tol:.1e}")
}

// --- criterion 3 -------------------------------------------------------------
// At α ∈ {1e-1, 1e-2} the damped mass balance α·∑∫F + outflow − inflow must
// vanish to 1e-5 of the total inflow.
fn c3_damped_mass_balance(ctx: &mut Ctx) -> String {
    let solver = ctx.solver64.clone().expect("criterion 1 fixture (fine solver)");
    let bd = BoundaryData::constant(4, 1.0).expect("unit inflow");
    let config = SolverConfig::new(FINE_H);
    let mut details = Vec::new();
    for alpha in [1e-1, 1e-2] {
        let res = solver.solve_damped(&bd, alpha, f64::INFINITY, &config).expect("damped solve");
        assert!(res.converged, "α={alpha}: no convergence");
        let rep = &res.diagnostics;
        let lim = 1e-5 * rep.inflow_total;
        assert!(
            rep.damped_mass_residual.abs() <= lim,
            "α={alpha}: |{:.3e}| exceeds 1e-5·inflow = {lim:.3e}",
            rep.damped_mass_residual
        );
        details.push(format!("α={alpha}: {:.1e}", rep.damped_mass_residual.abs() / rep.inflow_total));
        ctx.damped.push((alpha, res));
    }
    format!("residual/inflow {} (limit 1e-5)", details.join(", "))
}

// --- criterion 4 -------------------------------------------------------------
// At α = 0 with non-equilibrium inflow, the four collision-invariant flux
// residuals (mass, both momenta, energy) must each stay below 1e-4 of their
// natural scale, and halving h must shrink each by at least 3×.
fn c4_conservation_refinement(ctx: &mut Ctx) -> String {
    let bd = BoundaryData::from_rows(4, &sine_rows(64, 1.2, 0.5, |i| i as f64 * PI / 3.0))
        .expect("sinusoidal inflow");
    let coarse = mid_solver(ctx);
    let fine = ctx.solver64.clone().expect("criterion 1 fixture (fine solver)");

    let mut cfg_c = SolverConfig::new(MID_H);
    cfg_c.picard_tol = 1e-10;
    let mut cfg_f = SolverConfig::new(FINE_H);
    cfg_f.picard_tol = 1e-10;
    let res_c = coarse.continuation_solve(&bd, f64::INFINITY, &cfg_c).expect("coarse solve");
    let res_f = fine.continuation_solve(&bd, f64::INFINITY, &cfg_f).expect("fine solve");
    assert!(res_c.converged && res_f.converged, "refinement solves must converge");

    let vels = m4_velocities();
    let resid = |rep: &DiagnosticsReport| {
        [
            rep.damped_mass_residual,
            rep.momentum_residual[0],
            rep.momentum_residual[1],
            rep.energy_residual,
        ]
    };
    let scales = |rep: &DiagnosticsReport| {
        let mut s = [rep.inflow_total, 0.0, 0.0, 0.0];
        for (i, v) in vels.iter().enumerate() {
            s[1] += v.x.abs() * rep.inflow[i];
            s[2] += v.y.abs() * rep.inflow[i];
            s[3] += v.norm_sq() * rep.inflow[i];
        }
        s
    };
    let (rc, sc) = (resid(&res_c.diagnostics), scales(&res_c.diagnostics));
    let (rf, sf) = (resid(&res_f.diagnostics), scales(&res_f.diagnostics));
    let names = ["mass", "x-momentum", "y-momentum", "energy"];
    let mut ratios = Vec::new();
    for q in 0..4 {
        assert!(
            rf[q].abs() <= 1e-4 * sf[q],
            "{} residual {:.3e} exceeds 1e-4·scale = {:.3e} on the fine grid",
            names[q],
            rf[q],
            1e-4 * sf[q]
        );
        let floor = 1e-12 * sc[q];
        if rc[q].abs() > floor {
            let ratio = rc[q].abs() / rf[q].abs().max(1e-12 * sf[q]);
            assert!(
                ratio >= 3.0,
                "{} residual shrank only {ratio:.2}× under refinement (need ≥ 3)",
                names[q]
            );
            ratios.push(format!("{} {:.1}×", names[q], ratio));
        } else {
            ratios.push(format!("{} ≈0", names[q]));
        }
    }
    ctx.refined.push(res_c);
    ctx.refined.push(res_f);
    format!("fine residuals ≤ 1e-4·scale; refinement gains: {}", ratios.join(", "))
}

// --- criterion 6 -------------------------------------------------------------
// Along the truncation ladder k ∈ {4, 16, 64, 256} with fixed small inflow,
// the certified bounds — mass, outgoing-flow control, transverse bound — must
// vary by at most 20% and never exceed twice their k = 4 value.
fn c6_uniform_bounds(ctx: &mut Ctx) -> String {
    let solver = mid_solver(ctx);
    let bd = BoundaryData::from_rows(4, &sine_rows(64, 0.22, 0.06, |i| i as f64 * PI / 2.0))
        .expect("small inflow");
    let mut config = SolverConfig::new(MID_H);
    config.k_schedule = vec![4.0, 16.0, 64.0, 256.0];
    let ladder = solver.k_ladder(&bd, &config).expect("ladder");
    for (k, res) in &ladder {
        assert!(res.converged, "rung k={k} did not converge");
    }

    let quantities: [(&str, fn(&DiagnosticsReport) -> f64); 3] = [
        ("mass", |r| r.mass),
        ("outgoing-flow control", |r| r.outgoing_flow_control.abs()),
        ("transverse bound", |r| r.transverse_max),
    ];
    let mut spreads = Vec::new();
    for (name, get) in quantities {
        let vals: Vec<f64> = ladder.iter().map(|(_, res)| get(&res.diagnostics)).collect();
        let base = vals[0];
        let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = vals.iter().cloned().fold(0.0f64, f64::max);
        assert!(mn > 0.0, "{name} must stay positive, got {vals:?}");
        assert!(
            mx - mn <= 0.2 * mn,
            "{name} varies {:.1}% across k (limit 20%): {vals:?}",
            100.0 * (mx - mn) / mn
        );
        for (q, v) in vals.iter().enumerate() {
            assert!(
                *v <= 2.0 * base,
                "{name} at rung {} is {v:.4e}, more than twice the k=4 value {base:.4e}",
                q + 1
            );
        }
        spreads.push(format!("{name} {:.1}%", 100.0 * (mx - mn) / mn));
    }
    ctx.ladder_small = Some(ladder);
    format!("spreads across k: {} (limit 20%)", spreads.join(", "))
}

// --- criterion 7 -------------------------------------------------------------
// Equicontinuity moduli of averaged frequencies, same ladder: for each
// species and direction the modulus must shrink monotonically with the shift,
// and the largest-shift modulus must agree across k to 20%.
fn c7_equicontinuity(ctx: &mut Ctx) -> String {
    let ladder = ctx.ladder_small.as_ref().expect("criterion 6 fixture (small-data ladder)");
    let mut largest: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for (k, res) in ladder {
        let mut groups: BTreeMap<(usize, String), Vec<(f64, f64)>> = BTreeMap::new();
        for e in &res.diagnostics.equicontinuity {
            groups
                .entry((e.species, e.direction.clone()))
                .or_default()
                .push((e.magnitude, e.modulus));
        }
        for ((species, dir), mut mods) in groups {
            mods.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));
            assert_eq!(mods.len(), 3, "expected 3 shift magnitudes per species/direction");
            for w in mods.windows(2) {
                let eps = 1e-12 * (1.0 + w[1].1.abs());
                assert!(
                    w[0].1 <= w[1].1 + eps,
                    "k={k} species {species} {dir}: modulus at shift {:.3e} is {:.6e}, \
                     larger than {:.6e} at shift {:.3e}",
                    w[0].0,
                    w[0].1,
                    w[1].1,
                    w[1].0
                );
            }
            largest.entry((species, dir)).or_default().push(mods[2].1);
        }
    }
    let mut worst = 0.0f64;
    for ((species, dir), vals) in &largest {
        assert_eq!(vals.len(), ladder.len(), "one largest-shift modulus per rung");
        let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = vals.iter().cloned().fold(0.0f64, f64::max);
        assert!(mn > 0.0, "species {species} {dir}: vanishing modulus {vals:?}");
        let spread = (mx - mn) / mn;
        assert!(
            spread <= 0.2,
            "species {species} {dir}: largest-shift modulus varies {:.1}% across k: {vals:?}",
            100.0 * spread
        );
        worst = worst.max(spread);
    }
    format!(
        "moduli monotone in shift on all 4 rungs; worst cross-k spread {:.1}% (limit 20%)",
        100.0 * worst
    )
}

// --- criterion 8 -------------------------------------------------------------
// On a coarse disk (12 cells across the diameter) the Picard solution must
// agree with an independently coded dense damped-Newton solution of the same
// discrete system to 1e-6 in relative L¹.
fn c8_newton_cross_check(ctx: &mut Ctx) -> String {
    let domain = ConvexDomain::unit_disk();
    let h = 1.0 / 6.0;
    let grid = Grid::new(&domain, h, 0.0).expect("coarse grid");

    let knots: Vec<Vec<(f64, f64)>> = (0..4)
        .map(|i| {
            (0..32)
                .map(|j| {
                    let t = j as f64 / 32.0;
                    (t, 0.9 + 0.3 * (TAU * t + 0.7 * i as f64).sin())
                })
                .collect()
        })
        .collect();
    let rows: Vec<(f64, usize, f64)> = knots
        .iter()
        .enumerate()
        .flat_map(|(i, ks)| ks.iter().map(move |&(t, v)| (t, i, v)))
        .collect();
    let bd = BoundaryData::from_rows(4, &rows).expect("inflow");

    let solver = Solver::new(m4_model(), domain, grid.clone()).expect("coarse solver");
    let mut config = SolverConfig::new(h);
    config.alpha_schedule = vec![0.0];
    config.picard_tol = 1e-12;
    config.picard_max_iters = 5000;
    let res = solver.continuation_solve(&bd, f64::INFINITY, &config).expect("Picard solve");
    assert!(res.converged, "Picard did not converge to 1e-12");

    let vels = m4_velocities();
    let sys = newton_oracle::DenseSystem::build(
        grid.clone(),
        [vels[0], vels[1], vels[2], vels[3]],
        1.0,
        &knots,
    );
    let (u, newton_iters, rnorm) = sys.solve();
    let reference = sys.scatter::<f64>(&u);

    let mut num = 0.0;
    let mut den = 0.0;
    for (i, refs) in reference.iter().enumerate() {
        let lib = res.field.species(i);
        for &idx in grid.stored_nodes() {
            let q = idx as usize;
            num += (lib[q] - refs[q]).abs();
            den += refs[q].abs();
        }
    }
    let rel = num / den;
    assert!(rel <= 1e-6, "Picard vs Newton relative L¹ gap {rel:.3e} exceeds 1e-6");

    ctx.picard_ref = Some(res.field);
    format!(
        "{} unknowns; Newton {newton_iters} steps to ‖R‖ = {rnorm:.1e}; \
         Picard agrees to {rel:.1e} in relative L¹ (limit 1e-6)",
        sys.unknown_count()
    )
}

// --- criterion 5 -------------------------------------------------------------
// Entropy production must be nonnegative (≥ −1e-12) on 100 random
// nonnegative fields — including sparse and extreme-scale ones — and on every
// field produced by the solver runs above.
fn c5_entropy_nonnegative(ctx: &Ctx) -> String {
    let model = m4_model();
    let domain = ConvexDomain::unit_disk();
    let grid = Grid::new(&domain, 1.0 / 8.0, 0.0).expect("grid");
    let rng = RefCell::new(ChaCha8Rng::seed_from_u64(0x5eed_cafe));
    let mut min_prod = f64::INFINITY;
    for case in 0..100 {
        let k = match case % 3 {
            0 => 4.0,
            1 => 64.0,
            _ => f64::INFINITY,
        };
        let scale = 10f64.powf(rng.borrow_mut().gen_range(-3.0..3.0));
        let zero_frac = if case % 5 == 0 { 0.5 } else { 0.1 };
        let field = DensityField::from_fn(grid.clone(), 4, |_, _| {
            let mut r = rng.borrow_mut();
            if r.gen::<f64>() < zero_frac {
                0.0
            } else {
                r.gen::<f64>() * scale
            }
        })
        .expect("random field");
        let prod = entropy_production(&model, &field, k);
        assert!(prod >= -1e-12, "case {case}, k={k}: entropy production {prod:.3e} < -1e-12");
        min_prod = min_prod.min(prod);
    }

    let mut outputs: Vec<(&DensityField, f64)> = Vec::new();
    for ladder in [&ctx.ladder_maxwell, &ctx.ladder_small].into_iter().flatten() {
        for (k, res) in ladder {
            for stage in &res.stages {
                outputs.push((&stage.field, *k));
            }
            outputs.push((&res.field, *k));
        }
    }
    if let Some(f) = &ctx.free_field {
        outputs.push((f, f64::INFINITY));
    }
    for (_, res) in &ctx.damped {
        outputs.push((&res.field, f64::INFINITY));
    }
    for res in &ctx.refined {
        outputs.push((&res.field, f64::INFINITY));
    }
    if let Some(f) = &ctx.picard_ref {
        outputs.push((f, f64::INFINITY));
    }
    for (field, k) in &outputs {
        let prod = entropy_production(&model, field, *k);
        assert!(prod >= -1e-12, "solver output at k={k}: entropy production {prod:.3e} < -1e-12");
        min_prod = min_prod.min(prod);
    }
    format!(
        "100 random + {} solver fields; minimum production {min_prod:.1e} ≥ -1e-12",
        outputs.len()
    )
}

// --- criterion 9 -------------------------------------------------------------
// The solve command must produce bitwise-identical artifacts regardless of
// DVM_THREADS.
fn c9_thread_reproducibility() -> String {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    fs::write(
        root.join("model.toml"),
        "velocities = [[2.0, 1.0], [3.0, 2.0], [2.0, 2.0], [3.0, 1.0]]\n\
         reactions = [[1, 2, 3, 4, 1.0]]\n",
    )
    .expect("write model");
    let mut csv = String::from("t,species,value\n");
    for (t, i, v) in sine_rows(32, 1.0, 0.3, |i| 0.5 * i as f64) {
        csv.push_str(&format!("{t},{},{v}\n", i + 1));
    }
    fs::write(root.join("boundary.csv"), csv).expect("write boundary");
    // The residual gate compares each rung against the untruncated mild
    // form, and at k=4 the truncation gap of this non-equilibrium data
    // dominates it; widen the configured threshold so the run exits 0 and
    // the criterion isolates what it is about: bitwise reproducibility.
    fs::write(
        root.join("run.toml"),
        "[model]\npath = \"model.toml\"\n\n\
         [domain]\nkind = \"disk\"\n\n\
         [boundary]\npath = \"boundary.csv\"\n\n\
         [grid]\nh = 0.0625\n\n\
         [solver]\nalpha_schedule = [1e-1, 0.0]\nk_schedule = [4.0, 16.0]\n\n\
         [acceptance]\nmild_residual_rel = 0.05\n",
    )
    .expect("write config");

    let mut listings = Vec::new();
    for (threads, out_name) in [("1", "out1"), ("4", "out4")] {
        let out = root.join(out_name);
        let status = Command::new(env!("CARGO_BIN_EXE_dvm"))
            .args(["solve", "--config"])
            .arg(root.join("run.toml"))
            .arg("--out")
            .arg(&out)
            .env("DVM_THREADS", threads)
            .output()
            .expect("run solve");
        assert!(
            status.status.success(),
            "solve with DVM_THREADS={threads} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files);
        files.sort();
        listings.push((out, files));
    }
    let (out1, files1) = &listings[0];
    let (out4, files4) = &listings[1];
    assert_eq!(files1, files4, "artifact listings differ between thread counts");
    for rel in files1 {
        let a = fs::read(out1.join(rel)).expect("read artifact");
        let b = fs::read(out4.join(rel)).expect("read artifact");
        assert_eq!(a, b, "artifact {} differs between DVM_THREADS=1 and 4", rel.display());
    }
    format!("{} artifacts bitwise identical for DVM_THREADS=1 and 4", files1.len())
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).expect("read dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            out.push(path.strip_prefix(base).expect("prefix").to_path_buf());
        }
    }
}

// --- harness -----------------------------------------------------------------

fn payload_msg(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else if let Some(s) = payload.downcast_ref::<&'static str>() {
        (*s).to_string()
    } else {
        "panic with non-string payload".to_string()
    }
}

fn guard(
    num: usize,
    name: &'static str,
    f: impl FnOnce() -> String,
) -> (usize, &'static str, Result<String, String>) {
    eprintln!("[acceptance] running criterion {num}: {name}");
    (num, name, catch_unwind(AssertUnwindSafe(f)).map_err(payload_msg))
}

#[test]
fn acceptance_criteria() {
    let mut ctx = Ctx::default();
    let mut verdicts = vec![
        guard(1, "regularized ladder on Maxwellian data", || c1_maxwellian_ladder(&mut ctx)),
        guard(2, "collisionless transport identity", || c2_transport_identity(&mut ctx)),
        guard(3, "damped mass balance", || c3_damped_mass_balance(&mut ctx)),
        guard(4, "conservation under refinement", || c4_conservation_refinement(&mut ctx)),
        guard(6, "uniform bounds across truncation levels", || c6_uniform_bounds(&mut ctx)),
        guard(7, "equicontinuity of averaged frequencies", || c7_equicontinuity(&mut ctx)),
        guard(8, "dense Newton cross-check", || c8_newton_cross_check(&mut ctx)),
        guard(5, "entropy production nonnegativity", || c5_entropy_nonnegative(&ctx)),
        guard(9, "thread-count reproducibility", c9_thread_reproducibility),
    ];
    verdicts.sort_by_key(|v| v.0);

    println!();
    let mut failed = Vec::new();
    for (num, name, verdict) in &verdicts {
        match verdict {
            Ok(detail) => println!("criterion {num} ({name}): PASS — {detail}"),
            Err(reason) => {
                println!("criterion {num} ({name}): FAIL — {reason}");
                failed.push(*num);
            }
        }
    }
    assert!(failed.is_empty(), "acceptance criteria failed: {failed:?}");
}
