//! Scenario orchestration behind the command-line interface.
//!
//! Every command writes its artifacts into the output directory and a
//! `<command>.txt` key=value report. Audits that fail still write their
//! report before returning [`CliError::Audit`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cloakopt_core::adjoint::{finite_difference_check, step_sweep, GradientProbe};
use cloakopt_core::analysis::{eigen_decompose, eigen_field, efficiency, efficiency_series, prolongate_controls, spacetime_norm};
use cloakopt_core::forward::{solve_reference_steady, solve_reference_transient, solve_state_steady, solve_transient};
use cloakopt_core::mesh::{build_square_mesh_cells, refine_uniform};
use cloakopt_core::optimizer::{eval_constraints, optimize, IterationRecord};
use cloakopt_core::problem::lambda_min;
use cloakopt_core::region::tag_regions;
use cloakopt_core::{
    CloakProblem, ControlField, Objective, Point, SteadyObjective, TimeGrid, Trajectory, TransientControl,
    TransientObjective,
};

use crate::config::{MeshSource, Regime, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::export::{write_fields, Report};
use crate::meshio::{design_to_string, mesh_to_string, read_design, read_mesh, real, write_text, Design};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Reference,
    Uncloaked,
    Optimize,
    Evaluate,
    Transfer,
    CheckGradient,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Reference => "reference",
            Command::Uncloaked => "uncloaked",
            Command::Optimize => "optimize",
            Command::Evaluate => "evaluate",
            Command::Transfer => "transfer",
            Command::CheckGradient => "check-gradient",
        }
    }
}

/// Per-invocation settings that are not part of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub design: Option<PathBuf>,
    /// Replaces the centre of the probing source.
    pub source: Option<Point>,
    /// Worker threads; `None` uses the configuration value.
    pub threads: Option<usize>,
    /// Print one progress line per optimizer iteration on stderr.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub report_path: PathBuf,
}

struct Context {
    cfg: ScenarioConfig,
    out: PathBuf,
    design: Option<PathBuf>,
    threads: usize,
    progress: bool,
}

pub fn run(command: Command, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(c) = opts.source {
        cfg.set_source_center(c);
    }
    let out = opts.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::write(&out, e))?;
    let threads = opts.threads.unwrap_or(cfg.threads);
    if threads == 0 {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    let ctx = Context { cfg, out, design: opts.design.clone(), threads, progress: opts.progress };
    match command {
        Command::Reference => reference(&ctx),
        Command::Uncloaked => uncloaked(&ctx),
        Command::Optimize => optimize_cmd(&ctx),
        Command::Evaluate => evaluate(&ctx),
        Command::Transfer => transfer(&ctx),
        Command::CheckGradient => check_gradient(&ctx),
    }
}

/// Builds the obstacle problem described by a configuration.
pub fn build_problem(cfg: &ScenarioConfig) -> Result<CloakProblem> {
    let (mesh, tags) = match &cfg.mesh {
        MeshSource::Generate { side, cells } => {
            let mesh = build_square_mesh_cells(*side, *cells)?;
            let tags = tag_regions(&mesh, &cfg.geometry.region_spec())?;
            (mesh, tags)
        }
        MeshSource::File(path) => read_mesh(path)?,
    };
    Ok(CloakProblem::new(mesh, tags, cfg.data.clone())?)
}

fn problem_for_design(cfg: &ScenarioConfig, design: &Design) -> Result<CloakProblem> {
    let p = CloakProblem::new(design.mesh.clone(), design.tags.clone(), cfg.data.clone())?;
    if p.control_reference_nodes() != design.nodes {
        return Err(CliError::Config("design control nodes do not match the cloak of its mesh".into()));
    }
    Ok(p)
}

fn design_for(p: &CloakProblem, slices: Vec<ControlField>) -> Design {
    Design {
        mesh: p.reference_mesh.clone(),
        tags: p.reference_tags.clone(),
        nodes: p.control_reference_nodes(),
        slices,
    }
}

fn load_design(ctx: &Context, command: Command) -> Result<Design> {
    let path = ctx
        .design
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{}` needs --design <path>", command.name())))?;
    read_design(path)
}

/// Number of control slices the configured regime expects.
fn expected_slices(regime: &Regime) -> usize {
    match regime {
        Regime::Steady => 1,
        Regime::Transient { grid, .. } => grid.steps + 1,
    }
}

fn check_slices(ctx: &Context, design: &Design) -> Result<()> {
    let want = expected_slices(&ctx.cfg.regime);
    if design.slices.len() != want {
        return Err(CliError::Config(format!(
            "design has {} control slice(s) but the configured regime needs {want}",
            design.slices.len()
        )));
    }
    Ok(())
}

fn base_report(ctx: &Context, command: Command, p: &CloakProblem) -> Report {
    let mut r = Report::new();
    r.text("command", command.name());
    match ctx.cfg.regime {
        Regime::Steady => {
            r.text("regime", "steady");
        }
        Regime::Transient { grid, theta, include_final } => {
            r.text("regime", "transient")
                .real("T", grid.t_final)
                .int("N", grid.steps)
                .real("dt", grid.dt())
                .real("theta", theta)
                .text("include_final", if include_final { "true" } else { "false" });
        }
    }
    r.int("elements", p.reference_mesh.n_triangles())
        .int("reference_nodes", p.reference_mesh.n_nodes())
        .int("state_nodes", p.n_state())
        .int("control_nodes", p.n_ctrl());
    if let Some(c) = ctx.cfg.source_center() {
        r.real("source_x", c[0]).real("source_y", c[1]);
    }
    r
}

fn finish(ctx: &Context, command: Command, mut report: Report, start: Instant) -> Result<Outcome> {
    report.real("wall_time", start.elapsed().as_secs_f64());
    let name = command.name().replace('-', "_");
    let report_path = ctx.out.join(format!("{name}.txt"));
    report.write(&report_path)?;
    Ok(Outcome { report, report_path })
}

/// Constraint margins over a set of slices: `(min g1, min g2, min λ_min(K))`.
fn margins(slices: &[ControlField], mu: f64, eps: f64) -> (f64, f64, f64) {
    let (mut g1, mut g2, mut lam) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for c in slices {
        let g = eval_constraints(c, mu, eps);
        g1 = g1.min(g.min_g1());
        g2 = g2.min(g.min_g2());
        for k in 0..c.len() {
            lam = lam.min(lambda_min(&c.diffusivity(k, mu)));
        }
    }
    (g1, g2, lam)
}

/// Control and eigen fields extended to every node of the masked mesh; nodes
/// outside the cloak carry zero controls, i.e. `K = μI`.
fn control_fields(p: &CloakProblem, ctrl: &ControlField) -> Vec<(&'static str, Vec<f64>)> {
    let n = p.n_state();
    let mu = p.data.mu;
    let (l0, _, a0, b0) = eigen_decompose(&[[mu, 0.0], [0.0, mu]]);
    let mut out = vec![
        ("u", vec![0.0; n]),
        ("f", vec![0.0; n]),
        ("v", vec![0.0; n]),
        ("lambda1", vec![l0; n]),
        ("lambda2", vec![l0; n]),
        ("angle1", vec![a0; n]),
        ("angle2", vec![b0; n]),
    ];
    let eig = eigen_field(ctrl, mu);
    for (k, &node) in p.tags().cloak_nodes().iter().enumerate() {
        let vals = [ctrl.u[k], ctrl.f[k], ctrl.v[k], eig.lambda1[k], eig.lambda2[k], eig.angle1[k], eig.angle2[k]];
        for ((_, field), v) in out.iter_mut().zip(vals) {
            field[node] = v;
        }
    }
    out
}

fn as_refs<'a>(fields: &'a [(&'a str, Vec<f64>)]) -> Vec<(&'a str, &'a [f64])> {
    fields.iter().map(|(n, v)| (*n, v.as_slice())).collect()
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

struct SteadyMetrics {
    cost: f64,
    mte0: f64,
    mte: f64,
    eta: f64,
    q: Vec<f64>,
    ez: Vec<f64>,
}

fn steady_metrics(p: &CloakProblem, ctrl: &ControlField) -> Result<SteadyMetrics> {
    let z = solve_reference_steady(p)?;
    let mut obj = SteadyObjective::new(p, &z)?;
    let ez = obj.restricted_reference().to_vec();
    let q0 = solve_state_steady(p, &ControlField::zeros(p.n_ctrl()))?;
    let ev = obj.evaluate(ctrl)?;
    let mte0 = p.mte(&q0, &ez)?;
    let mte = p.mte(&ev.state, &ez)?;
    Ok(SteadyMetrics { cost: ev.cost, mte0, mte, eta: efficiency(mte0, mte)?, q: ev.state, ez })
}

struct TransientMetrics {
    cost: f64,
    norm0: f64,
    norm: f64,
    mte_final: f64,
    eta_series: Vec<(f64, f64)>,
    q: Trajectory,
    ez: Trajectory,
}

fn transient_metrics(
    p: &CloakProblem,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
) -> Result<TransientMetrics> {
    let z = solve_reference_transient(p, grid, theta)?;
    let mut obj = TransientObjective::new(p, &z, grid, theta, include_final)?;
    let ez = obj.restricted_reference().clone();
    let q0 = solve_transient(p, &TransientControl::zeros(p.n_ctrl(), grid.steps + 1), grid, theta)?;
    let ev = obj.evaluate(ctrl)?;
    let norm0 = spacetime_norm(&p.obs_mass, &q0, &ez)?;
    let norm = spacetime_norm(&p.obs_mass, &ev.state, &ez)?;
    let mte_final = p.mte(ev.state.last(), ez.last())?;
    let eta_series = efficiency_series(&p.obs_mass, p.obs_area, &q0, &ev.state, &ez)?;
    Ok(TransientMetrics { cost: ev.cost, norm0, norm, mte_final, eta_series, q: ev.state, ez })
}

fn write_series(path: &Path, series: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("t,eta\n");
    for (t, e) in series {
        let _ = writeln!(s, "{},{}", real(*t), real(*e));
    }
    write_text(path, &s)
}

fn write_trajectory(ctx: &Context, stem: &str, p: &CloakProblem, q: &Trajectory, ez: &Trajectory) -> Result<()> {
    for (i, (a, b)) in q.fields.iter().zip(&ez.fields).enumerate() {
        let d = difference(a, b);
        write_fields(&ctx.out, &format!("{stem}_{i:04}"), p.mesh(), Some(p.tags()), &[("q", a), ("Ez", b), ("error", &d)])?;
    }
    Ok(())
}

fn reference(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::Reference;
    let p = build_problem(&ctx.cfg)?;
    let mut r = base_report(ctx, cmd, &p);
    write_text(&ctx.out.join("mesh.txt"), &mesh_to_string(&p.reference_mesh, &p.reference_tags))?;
    let (mesh, tags) = (&p.reference_mesh, Some(&p.reference_tags));
    match ctx.cfg.regime {
        Regime::Steady => {
            let z = solve_reference_steady(&p)?;
            write_fields(&ctx.out, "reference", mesh, tags, &[("z", &z)])?;
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            r.real("z_max", max);
        }
        Regime::Transient { grid, theta, .. } => {
            let z = solve_reference_transient(&p, grid, theta)?;
            for (i, f) in z.fields.iter().enumerate() {
                write_fields(&ctx.out, &format!("reference_{i:04}"), mesh, tags, &[("z", f)])?;
            }
            let max = z.last().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            r.real("z_max_final", max);
        }
    }
    finish(ctx, cmd, r, start)
}

fn uncloaked(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::Uncloaked;
    let p = build_problem(&ctx.cfg)?;
    let mut r = base_report(ctx, cmd, &p);
    match ctx.cfg.regime {
        Regime::Steady => {
            let m = steady_metrics(&p, &ControlField::zeros(p.n_ctrl()))?;
            let d = difference(&m.q, &m.ez);
            write_fields(&ctx.out, "uncloaked", p.mesh(), Some(p.tags()), &[("q", &m.q), ("Ez", &m.ez), ("error", &d)])?;
            r.real("J", m.cost).real("MTE", m.mte0);
        }
        Regime::Transient { grid, theta, include_final } => {
            let zero = TransientControl::zeros(p.n_ctrl(), grid.steps + 1);
            let m = transient_metrics(&p, &zero, grid, theta, include_final)?;
            write_trajectory(ctx, "uncloaked", &p, &m.q, &m.ez)?;
            r.real("J", m.cost).real("spacetime_norm", m.norm0).real("MTE_final", m.mte_final);
        }
    }
    finish(ctx, cmd, r, start)
}

fn progress_line(rec: &IterationRecord) -> String {
    format!(
        "iter={} J={:.9e} grad={:.3e} ming1={:.6e} ming2={:.6e} mu_b={:.1e}",
        rec.iteration, rec.cost, rec.gradient_norm, rec.min_g1, rec.min_g2, rec.mu_b
    )
}

fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut s = String::from("iter,stage,J,phi,grad,ming1,ming2,mu_b\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            h.iteration,
            h.stage,
            real(h.cost),
            real(h.barrier_value),
            real(h.gradient_norm),
            real(h.min_g1),
            real(h.min_g2),
            real(h.mu_b)
        );
    }
    write_text(path, &s)
}

/// Runs the optimizer on `objective`, logging and recording every accepted
/// iterate. Returns the final point and the report entries it produced.
fn run_optimizer<O: Objective>(ctx: &Context, objective: &mut O, r: &mut Report) -> Result<Vec<f64>> {
    let opts = &ctx.cfg.optimizer;
    let init = opts.initial_guess.build(&objective.layout());
    let start = Instant::now();
    let progress = ctx.progress;
    let (x, mut rep) = optimize(objective, &init, opts, |rec| {
        if progress {
            eprintln!("{}", progress_line(rec));
        }
    })?;
    rep.wall_time = Some(start.elapsed().as_secs_f64());
    write_history(&ctx.out.join("history.csv"), &rep.history)?;
    let min_g1 = rep.history.iter().map(|h| h.min_g1).fold(f64::INFINITY, f64::min);
    let min_g2 = rep.history.iter().map(|h| h.min_g2).fold(f64::INFINITY, f64::min);
    let last = rep.final_record().copied();
    r.int("iterations", last.map_or(0, |l| l.iteration))
        .int("accepted_iterates", rep.history.len())
        .int("evaluations", rep.evaluations)
        .text("termination", rep.termination.as_str())
        .real("history_min_g1", min_g1)
        .real("history_min_g2", min_g2)
        .real("optimizer_time", rep.wall_time.unwrap_or(0.0));
    if let Some(last) = last {
        r.real("grad_norm", last.gradient_norm);
    }
    if !(min_g1 > 0.0 && min_g2 > 0.0) {
        return Err(CliError::Audit("an accepted iterate violates the SPD constraints".into()));
    }
    Ok(x)
}

fn check_definite_margin(lambda_min: f64) -> Result<()> {
    if lambda_min > 0.0 {
        Ok(())
    } else {
        Err(CliError::Audit(format!("design is not positive definite (lambda_min {lambda_min:e})")))
    }
}

fn report_margins(r: &mut Report, slices: &[ControlField], mu: f64, eps: f64) -> f64 {
    let (g1, g2, lam) = margins(slices, mu, eps);
    r.real("min_g1", g1).real("min_g2", g2).real("lambda_min", lam);
    lam
}

fn optimize_cmd(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::Optimize;
    let p = build_problem(&ctx.cfg)?;
    let mut r = base_report(ctx, cmd, &p);
    let (mu, eps) = (p.data.mu, p.data.epsilon);
    let slices = match ctx.cfg.regime {
        Regime::Steady => {
            let z = solve_reference_steady(&p)?;
            let mut obj = SteadyObjective::new(&p, &z)?;
            let x = run_optimizer(ctx, &mut obj, &mut r)?;
            let ctrl = ControlField::from_flat(&x);
            let m = steady_metrics(&p, &ctrl)?;
            r.real("J", m.cost).real("MTE", m.mte0).real("MTE_star", m.mte).real("eta", m.eta);
            let d = difference(&m.q, &m.ez);
            let mut fields = vec![("q", m.q.clone()), ("Ez", m.ez.clone()), ("error", d)];
            fields.extend(control_fields(&p, &ctrl));
            write_fields(&ctx.out, "optimized", p.mesh(), Some(p.tags()), &as_refs(&fields))?;
            vec![ctrl]
        }
        Regime::Transient { grid, theta, include_final } => {
            let z = solve_reference_transient(&p, grid, theta)?;
            let mut obj = TransientObjective::new(&p, &z, grid, theta, include_final)?;
            let x = run_optimizer(ctx, &mut obj, &mut r)?;
            let ctrl = TransientControl::from_flat(&x, grid.steps + 1);
            let m = transient_metrics(&p, &ctrl, grid, theta, include_final)?;
            r.real("J", m.cost)
                .real("spacetime_norm_zero", m.norm0)
                .real("spacetime_norm", m.norm)
                .real("norm_ratio", m.norm / m.norm0)
                .real("MTE_final", m.mte_final);
            if let Some((_, e)) = m.eta_series.last() {
                r.real("eta_final", *e);
            }
            write_series(&ctx.out.join("eta_series.csv"), &m.eta_series)?;
            write_trajectory(ctx, "optimized", &p, &m.q, &m.ez)?;
            let last = ctrl.slices.last().cloned().unwrap_or_else(|| ControlField::zeros(p.n_ctrl()));
            let fields = control_fields(&p, &last);
            write_fields(&ctx.out, "controls_final", p.mesh(), Some(p.tags()), &as_refs(&fields))?;
            ctrl.slices
        }
    };
    let lam = report_margins(&mut r, &slices, mu, eps);
    let design_path = ctx.out.join("design.txt");
    write_text(&design_path, &design_to_string(&design_for(&p, slices)))?;
    r.text("design", &design_path.display().to_string());
    let out = finish(ctx, cmd, r, start)?;
    check_definite_margin(lam)?;
    Ok(out)
}

fn evaluate(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::Evaluate;
    let design = load_design(ctx, cmd)?;
    check_slices(ctx, &design)?;
    let p = problem_for_design(&ctx.cfg, &design)?;
    let mut r = base_report(ctx, cmd, &p);
    let lam = report_margins(&mut r, &design.slices, p.data.mu, p.data.epsilon);
    if lam <= 0.0 {
        finish(ctx, cmd, r, start)?;
        return Err(CliError::Audit(format!("design is not positive definite (lambda_min {lam:e})")));
    }
    evaluate_into(ctx, &p, &design.slices, &mut r, "evaluated")?;
    finish(ctx, cmd, r, start)
}

/// Adds the performance metrics of `slices` to `r` and writes the fields.
fn evaluate_into(ctx: &Context, p: &CloakProblem, slices: &[ControlField], r: &mut Report, stem: &str) -> Result<f64> {
    match ctx.cfg.regime {
        Regime::Steady => {
            let ctrl = &slices[0];
            let m = steady_metrics(p, ctrl)?;
            r.real("J", m.cost).real("MTE", m.mte0).real("MTE_star", m.mte).real("eta", m.eta);
            let d = difference(&m.q, &m.ez);
            let mut fields = vec![("q", m.q.clone()), ("Ez", m.ez.clone()), ("error", d)];
            fields.extend(control_fields(p, ctrl));
            write_fields(&ctx.out, stem, p.mesh(), Some(p.tags()), &as_refs(&fields))?;
            Ok(m.eta)
        }
        Regime::Transient { grid, theta, include_final } => {
            let ctrl = TransientControl { slices: slices.to_vec() };
            let m = transient_metrics(p, &ctrl, grid, theta, include_final)?;
            let ratio = m.norm / m.norm0;
            r.real("J", m.cost)
                .real("spacetime_norm_zero", m.norm0)
                .real("spacetime_norm", m.norm)
                .real("norm_ratio", ratio)
                .real("MTE_final", m.mte_final);
            if let Some((_, e)) = m.eta_series.last() {
                r.real("eta_final", *e);
            }
            write_series(&ctx.out.join(format!("{stem}_eta_series.csv")), &m.eta_series)?;
            write_trajectory(ctx, stem, p, &m.q, &m.ez)?;
            Ok(ratio)
        }
    }
}

fn transfer(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::Transfer;
    let design = load_design(ctx, cmd)?;
    check_slices(ctx, &design)?;
    let coarse = problem_for_design(&ctx.cfg, &design)?;
    let (fine_mesh, parents) = refine_uniform(&coarse.reference_mesh)?;
    let fine_tags = coarse.reference_tags.refine(&fine_mesh, &parents)?;
    let fine = CloakProblem::new(fine_mesh, fine_tags, ctx.cfg.data.clone())?;
    let coarse_nodes = coarse.control_reference_nodes();
    let fine_nodes = fine.control_reference_nodes();
    let mut warnings = 0;
    let mut slices = Vec::with_capacity(design.slices.len());
    for c in &design.slices {
        let pr = prolongate_controls(&coarse.reference_mesh, c, &coarse_nodes, &parents, &fine_nodes)?;
        warnings += pr.warnings;
        slices.push(pr.controls);
    }
    let (mu, eps) = (ctx.cfg.data.mu, ctx.cfg.data.epsilon);
    let mut r = base_report(ctx, cmd, &fine);
    let (g1_coarse, _, _) = margins(&design.slices, mu, eps);
    let (g1_fine, g2_fine, lam_fine) = margins(&slices, mu, eps);
    // Fine values are convex combinations of coarse values and, next to the
    // cloak edge, of zero controls, whose g1 is 2μ − ε.
    let floor = g1_coarse.min(2.0 * mu - eps);
    let g1_preserved = g1_fine >= floor - 1e-12 * floor.abs().max(1.0);
    r.int("coarse_elements", coarse.reference_mesh.n_triangles())
        .int("coarse_control_nodes", coarse.n_ctrl())
        .int("fine_control_nodes", fine.n_ctrl())
        .int("prolongation_warnings", warnings)
        .real("min_g1_coarse", g1_coarse)
        .real("min_g1_fine", g1_fine)
        .real("min_g2_fine", g2_fine)
        .real("lambda_min_fine", lam_fine)
        .text("g1_margin_preserved", if g1_preserved { "true" } else { "false" });
    let fine_path = ctx.out.join("design_fine.txt");
    write_text(&fine_path, &design_to_string(&design_for(&fine, slices.clone())))?;
    if !(g1_preserved && lam_fine > 0.0) {
        finish(ctx, cmd, r, start)?;
        return Err(CliError::Audit("prolongated design lost the constraint margins".into()));
    }
    let mut coarse_report = Report::new();
    let coarse_metric = evaluate_into(ctx, &coarse, &design.slices, &mut coarse_report, "coarse")?;
    let fine_metric = evaluate_into(ctx, &fine, &slices, &mut r, "fine")?;
    let key = match ctx.cfg.regime {
        Regime::Steady => "eta",
        Regime::Transient { .. } => "norm_ratio",
    };
    r.real(&format!("{key}_coarse"), coarse_metric)
        .real(&format!("{key}_fine"), fine_metric)
        .real(&format!("{key}_difference"), (fine_metric - coarse_metric).abs());
    finish(ctx, cmd, r, start)
}

/// Steps of the finite-difference sweep, `10⁻¹ … 10⁻¹¹`.
const SWEEP_STEPS: [f64; 11] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10, 1e-11];

/// A V-shaped sweep has its minimum strictly inside the step range, and both
/// ends at least ten times above it.
pub fn is_v_shaped(errors: &[f64]) -> bool {
    if errors.len() < 3 {
        return false;
    }
    let (imin, min) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
    let last = errors.len() - 1;
    imin > 0 && imin < last && errors[0] >= 10.0 * min && errors[last] >= 10.0 * min
}

fn make_objective<'a>(
    regime: &Regime,
    p: &'a CloakProblem,
    z_steady: &Option<Vec<f64>>,
    z_transient: &Option<Trajectory>,
) -> Result<Box<dyn Objective + 'a>> {
    Ok(match (regime, z_steady, z_transient) {
        (Regime::Steady, Some(z), _) => Box::new(SteadyObjective::new(p, z)?),
        (Regime::Transient { grid, theta, include_final }, _, Some(z)) => {
            Box::new(TransientObjective::new(p, z, *grid, *theta, *include_final)?)
        }
        _ => unreachable!("reference field matches the regime"),
    })
}

fn check_gradient(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cmd = Command::CheckGradient;
    let p = build_problem(&ctx.cfg)?;
    let mut r = base_report(ctx, cmd, &p);
    let audit = ctx.cfg.audit;
    let regime = ctx.cfg.regime;
    let (z_steady, z_transient) = match regime {
        Regime::Steady => (Some(solve_reference_steady(&p)?), None),
        Regime::Transient { grid, theta, .. } => (None, Some(solve_reference_transient(&p, grid, theta)?)),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(audit.seed);
    let n = p.n_ctrl();
    let a = audit.amplitude;
    let slices = expected_slices(&regime);
    let mut x = Vec::with_capacity(3 * n * slices);
    for _ in 0..slices {
        x.extend((0..2 * n).map(|_| rng.random_range(-a..a)));
        x.extend((0..n).map(|_| rng.random_range(-0.5 * a..0.5 * a)));
    }
    let g = cloakopt_core::optimizer::eval_constraints_flat(&x, n, p.data.mu, p.data.epsilon);
    if !g.is_strictly_feasible() {
        return Err(CliError::Config(format!("check_amplitude {a} gives an inadmissible audit point")));
    }
    let m = audit.coordinates.min(x.len());
    let mut indices = sample(&mut rng, x.len(), m).into_vec();
    indices.sort_unstable();
    let direction: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (_, grad) = make_objective(&regime, &p, &z_steady, &z_transient)?.value_and_gradient(&x)?;
    let gnorm = grad.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let floor = 1e-2 * gnorm;

    let workers = ctx.threads.clamp(1, indices.len().max(1));
    let chunk = indices.len().div_ceil(workers);
    let probes: Vec<GradientProbe> = std::thread::scope(|scope| -> Result<Vec<GradientProbe>> {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| {
                let (p, x, zs, zt) = (&p, &x, &z_steady, &z_transient);
                scope.spawn(move || -> Result<Vec<GradientProbe>> {
                    let mut obj = make_objective(&regime, p, zs, zt)?;
                    Ok(finite_difference_check(obj.as_mut(), x, part, audit.step)?)
                })
            })
            .collect();
        let mut all = Vec::with_capacity(indices.len());
        for h in handles {
            all.extend(h.join().expect("audit worker panicked")?);
        }
        Ok(all)
    })?;
    let sweep = step_sweep(make_objective(&regime, &p, &z_steady, &z_transient)?.as_mut(), &x, &direction, &SWEEP_STEPS)?;

    let max_err = probes.iter().map(|pr| pr.relative_error(floor)).fold(0.0f64, f64::max);
    let errors: Vec<f64> = sweep.iter().map(|(_, e)| *e).collect();
    let v_shape = is_v_shaped(&errors);
    r.int("dofs", x.len())
        .int("coordinates", probes.len())
        .real("fd_step", audit.step)
        .real("tolerance", audit.tolerance)
        .real("gradient_norm_inf", gnorm)
        .real("error_floor", floor)
        .real("max_relative_error", max_err)
        .text("v_shape", if v_shape { "true" } else { "false" })
        .int("threads", workers);
    for (i, pr) in probes.iter().enumerate() {
        r.int(&format!("probe{i}.index"), pr.index)
            .real(&format!("probe{i}.adjoint"), pr.adjoint)
            .real(&format!("probe{i}.fd"), pr.finite_difference)
            .real(&format!("probe{i}.relative_error"), pr.relative_error(floor));
    }
    let mut csv = String::from("step,relative_error\n");
    for (h, e) in &sweep {
        let _ = writeln!(csv, "{},{}", real(*h), real(*e));
    }
    write_text(&ctx.out.join("step_sweep.csv"), &csv)?;
    let pass = max_err <= audit.tolerance && v_shape && probes.len() >= m;
    r.text("pass", if pass { "true" } else { "false" });
    let out = finish(ctx, cmd, r, start)?;
    if !pass {
        return Err(CliError::Audit(format!(
            "max relative error {max_err:e} (tolerance {:e}), V-shaped sweep: {v_shape}",
            audit.tolerance
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v_shape_detection() {
        assert!(is_v_shaped(&[1e-2, 1e-4, 1e-9, 1e-7, 1e-5]));
        assert!(!is_v_shaped(&[1e-2, 1e-4, 1e-6]));
        assert!(!is_v_shaped(&[1e-9, 1e-4, 1e-2]));
        assert!(!is_v_shaped(&[1e-9, 5e-10, 1e-9]));
    }
}
