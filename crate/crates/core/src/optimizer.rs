//! Log-barrier interior-point solver for the pointwise SPD constraints
//!
//! `g1 = 2μ + u + f − ε ≥ 0` and `g2 = (μ+u)(μ+f) − v² − ε ≥ 0`.
//!
//! Each barrier stage minimizes `Φ = J − μ_b Σ log g1 − μ_b Σ log g2` with
//! limited-memory quasi-Newton directions and an Armijo backtracking search
//! that only accepts strictly feasible points. `μ_b` then shrinks
//! geometrically down to its final value.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::adjoint::GradientTriple;
use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::math::{dot, ln, norm_inf};

/// Shape of a flat control vector: `n_slices` blocks of `[u…, f…, v…]`,
/// each of length `n_ctrl`, plus the constraint data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintLayout {
    pub n_ctrl: usize,
    pub n_slices: usize,
    pub mu: f64,
    pub epsilon: f64,
}

impl ConstraintLayout {
    pub fn len(&self) -> usize {
        3 * self.n_ctrl * self.n_slices
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A differentiable reduced cost over a flat control vector.
pub trait Objective {
    fn layout(&self) -> ConstraintLayout;
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Pointwise constraint values, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl ConstraintValues {
    pub fn min_g1(&self) -> f64 {
        self.g1.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_g2(&self) -> f64 {
        self.g2.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self) -> bool {
        self.min_g1() >= 0.0 && self.min_g2() >= 0.0
    }

    pub fn is_strictly_feasible(&self) -> bool {
        self.min_g1() > 0.0 && self.min_g2() > 0.0
    }
}

fn constraint_pair(u: f64, f: f64, v: f64, mu: f64, eps: f64) -> (f64, f64) {
    (2.0 * mu + u + f - eps, (mu + u) * (mu + f) - v * v - eps)
}

pub fn eval_constraints(ctrl: &ControlField, mu: f64, epsilon: f64) -> ConstraintValues {
    eval_constraints_flat(&ctrl.to_flat(), ctrl.len(), mu, epsilon)
}

/// Constraint values for a flat vector of slices with `n_ctrl` nodes each.
pub fn eval_constraints_flat(x: &[f64], n_ctrl: usize, mu: f64, epsilon: f64) -> ConstraintValues {
    let mut g1 = Vec::with_capacity(x.len() / 3);
    let mut g2 = Vec::with_capacity(x.len() / 3);
    if n_ctrl > 0 {
        for slice in x.chunks(3 * n_ctrl) {
            let (u, rest) = slice.split_at(n_ctrl);
            let (f, v) = rest.split_at(n_ctrl);
            for k in 0..n_ctrl {
                let (a, b) = constraint_pair(u[k], f[k], v[k], mu, epsilon);
                g1.push(a);
                g2.push(b);
            }
        }
    }
    ConstraintValues { g1, g2 }
}

/// Adds the barrier to `(j, grad)` for a flat control vector.
///
/// Fails with [`Error::Domain`] unless every constraint is strictly positive.
pub fn barrier_value_and_gradient_flat(
    x: &[f64],
    layout: &ConstraintLayout,
    j: f64,
    grad: &[f64],
    mu_b: f64,
) -> Result<(f64, Vec<f64>)> {
    check_len(layout.len(), x.len())?;
    check_len(layout.len(), grad.len())?;
    let n = layout.n_ctrl;
    let mut phi = j;
    let mut g = grad.to_vec();
    if mu_b == 0.0 {
        return Ok((phi, g));
    }
    for s in 0..layout.n_slices {
        let base = 3 * n * s;
        for k in 0..n {
            let (iu, i_f, iv) = (base + k, base + n + k, base + 2 * n + k);
            let (u, f, v) = (x[iu], x[i_f], x[iv]);
            let (g1, g2) = constraint_pair(u, f, v, layout.mu, layout.epsilon);
            if !(g1 > 0.0 && g2 > 0.0) {
                return Err(Error::Domain(format!(
                    "barrier evaluated outside the strict interior (slice {s}, node {k}: g1={g1}, g2={g2})"
                )));
            }
            phi -= mu_b * (ln(g1) + ln(g2));
            let (w1, w2) = (mu_b / g1, mu_b / g2);
            g[iu] -= w1 + w2 * (layout.mu + f);
            g[i_f] -= w1 + w2 * (layout.mu + u);
            g[iv] += w2 * 2.0 * v;
        }
    }
    Ok((phi, g))
}

/// Barrier value and gradient for a single steady control field.
pub fn barrier_value_and_gradient(
    ctrl: &ControlField,
    mu: f64,
    epsilon: f64,
    j: f64,
    grad: &GradientTriple,
    mu_b: f64,
) -> Result<(f64, GradientTriple)> {
    let layout = ConstraintLayout { n_ctrl: ctrl.len(), n_slices: 1, mu, epsilon };
    let (phi, g) = barrier_value_and_gradient_flat(&ctrl.to_flat(), &layout, j, &grad.to_flat(), mu_b)?;
    Ok((phi, GradientTriple::from_flat(&g)))
}

/// Starting point of the optimization.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialGuess {
    /// All controls zero: `K = μI`.
    #[default]
    Zeros,
    /// `u = f = c`, `v = 0` everywhere.
    Constant(f64),
}

impl InitialGuess {
    pub fn build(&self, layout: &ConstraintLayout) -> Vec<f64> {
        match *self {
            InitialGuess::Zeros => vec![0.0; layout.len()],
            InitialGuess::Constant(c) => {
                let n = layout.n_ctrl;
                let mut x = vec![0.0; layout.len()];
                for slice in x.chunks_mut(3 * n.max(1)) {
                    slice[..2 * n].fill(c);
                }
                x
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    /// Total cap on accepted iterations over all stages.
    pub max_iterations: usize,
    /// Cap on accepted iterations within one barrier stage.
    pub max_stage_iterations: usize,
    pub barrier_initial: f64,
    pub barrier_shrink: f64,
    pub barrier_final: f64,
    /// A stage ends when `‖∇Φ‖∞` drops below this.
    pub gradient_tolerance: f64,
    /// A stage also ends when the relative decrease of `Φ` stays below this.
    pub relative_decrease_tolerance: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Largest nodal change of the very first trial step.
    pub initial_step: f64,
    /// Number of stored quasi-Newton pairs; 0 drops the curvature model.
    pub memory: usize,
    /// Divide `μ_b` by the number of constrained nodes (all slices), so
    /// the schedule does not depend on the mesh size.
    pub normalize_barrier: bool,
    pub initial_guess: InitialGuess,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            max_stage_iterations: 1000,
            barrier_initial: 1e-2,
            barrier_shrink: 0.1,
            barrier_final: 1e-8,
            gradient_tolerance: 1e-8,
            relative_decrease_tolerance: 1e-9,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
            initial_step: 0.1,
            memory: 10,
            normalize_barrier: true,
            initial_guess: InitialGuess::Zeros,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.barrier_initial > 0.0 && self.barrier_final > 0.0) {
            return bad("barrier parameters must be positive");
        }
        if self.barrier_final > self.barrier_initial {
            return bad("final barrier parameter exceeds the initial one");
        }
        if !(self.barrier_shrink > 0.0 && self.barrier_shrink < 1.0) {
            return bad("barrier shrink factor must lie in (0, 1)");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("Armijo constant must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0) || !(self.gradient_tolerance >= 0.0) {
            return bad("initial step must be positive and tolerance non-negative");
        }
        Ok(())
    }

    /// The decreasing barrier schedule, ending exactly at `barrier_final`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut mu = self.barrier_initial;
        while mu > self.barrier_final * (1.0 + 1e-12) {
            out.push(mu);
            mu *= self.barrier_shrink;
        }
        out.push(self.barrier_final);
        out
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: usize,
    pub cost: f64,
    pub barrier_value: f64,
    /// `‖∇Φ‖∞` at the iterate.
    pub gradient_norm: f64,
    pub min_g1: f64,
    pub min_g2: f64,
    pub mu_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    /// Filled in by callers that have a clock.
    pub wall_time: Option<f64>,
    pub evaluations: usize,
}

impl OptimizeReport {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.history.last()
    }
}

/// Exact Hessian block of `−log g1 − log g2` at one node, in `(u, f, v)`.
/// Both terms are convex on the feasible set, so the block is PSD.
fn barrier_hessian_block(u: f64, f: f64, v: f64, mu: f64, eps: f64) -> [[f64; 3]; 3] {
    let (g1, g2) = constraint_pair(u, f, v, mu, eps);
    let d2 = [mu + f, mu + u, -2.0 * v];
    let mut h = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let d1 = if a < 2 && b < 2 { 1.0 } else { 0.0 };
            h[a][b] = d1 / (g1 * g1) + d2[a] * d2[b] / (g2 * g2);
        }
    }
    // Second derivatives of g2: ∂²/∂u∂f = 1, ∂²/∂v² = −2.
    h[0][1] -= 1.0 / g2;
    h[1][0] -= 1.0 / g2;
    h[2][2] += 2.0 / g2;
    h
}

/// Solves a 3×3 SPD system by Cholesky.
fn solve3(m: &[[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let l00 = crate::math::sqrt(m[0][0]);
    let l10 = m[1][0] / l00;
    let l20 = m[2][0] / l00;
    let l11 = crate::math::sqrt(m[1][1] - l10 * l10);
    let l21 = (m[2][1] - l20 * l10) / l11;
    let l22 = crate::math::sqrt(m[2][2] - l20 * l20 - l21 * l21);
    let y0 = r[0] / l00;
    let y1 = (r[1] - l10 * y0) / l11;
    let y2 = (r[2] - l20 * y0 - l21 * y1) / l22;
    let x2 = y2 / l22;
    let x1 = (y1 - l21 * x2) / l11;
    let x0 = (y0 - l10 * x1 - l20 * x2) / l00;
    [x0, x1, x2]
}

/// Block-diagonal `σI + μ_b ∇²(barrier)`, one 3×3 block per node and slice.
struct BlockDiagonal {
    blocks: Vec<[[f64; 3]; 3]>,
    layout: ConstraintLayout,
}

impl BlockDiagonal {
    fn new(x: &[f64], layout: &ConstraintLayout, sigma: f64, mu_b: f64) -> Self {
        let n = layout.n_ctrl;
        let mut blocks = Vec::with_capacity(n * layout.n_slices);
        for s in 0..layout.n_slices {
            let base = 3 * n * s;
            for k in 0..n {
                let mut h = barrier_hessian_block(x[base + k], x[base + n + k], x[base + 2 * n + k], layout.mu, layout.epsilon);
                for (a, row) in h.iter_mut().enumerate() {
                    for v in row.iter_mut() {
                        *v *= mu_b;
                    }
                    row[a] += sigma;
                }
                blocks.push(h);
            }
        }
        Self { blocks, layout: *layout }
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.layout.n_ctrl;
        let mut out = vec![0.0; r.len()];
        for s in 0..self.layout.n_slices {
            let base = 3 * n * s;
            for k in 0..n {
                let idx = [base + k, base + n + k, base + 2 * n + k];
                let x = solve3(&self.blocks[s * n + k], [r[idx[0]], r[idx[1]], r[idx[2]]]);
                for (i, v) in idx.iter().zip(x) {
                    out[*i] = v;
                }
            }
        }
        out
    }
}

/// Dense solve with partial pivoting; `None` if numerically singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if !(a[p][c].abs() > 1e-300) {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            if m != 0.0 {
                for k in c..n {
                    a[r][k] -= m * a[c][k];
                }
                b[r] -= m * b[c];
            }
        }
    }
    for c in (0..n).rev() {
        let mut v = b[c];
        for k in c + 1..n {
            v -= a[c][k] * b[k];
        }
        b[c] = v / a[c][c];
    }
    b.iter().all(|v| v.is_finite()).then_some(b)
}

/// Limited-memory model of the Hessian of `J` in compact form
/// `B = σI − W N⁻¹ Wᵀ` with `W = [σS, Y]`.
struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Self { memory, pairs: VecDeque::new() }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.memory == 0 {
            return;
        }
        let sy = dot(&s, &y);
        // Skip pairs without positive curvature.
        if !(sy > 1e-10 * crate::math::norm2(&s) * crate::math::norm2(&y)) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    fn sigma(&self) -> Option<f64> {
        let (s, y) = self.pairs.back()?;
        Some(dot(y, y) / dot(s, y))
    }

    /// Solves `(B + H) d = −g` where `P = σI + H` is given block-diagonal.
    fn direction(&self, p: &BlockDiagonal, sigma: f64, g: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let base = p.solve(&rhs);
        let m = self.pairs.len();
        if m == 0 {
            return base;
        }
        // Columns of W and P⁻¹W.
        let mut w: Vec<Vec<f64>> = Vec::with_capacity(2 * m);
        for (s, _) in &self.pairs {
            w.push(s.iter().map(|v| sigma * v).collect());
        }
        for (_, y) in &self.pairs {
            w.push(y.clone());
        }
        let pw: Vec<Vec<f64>> = w.iter().map(|c| p.solve(c)).collect();
        // N − Wᵀ P⁻¹ W
        let mut k = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                let (si, yi) = &self.pairs[i];
                let (sj, yj) = &self.pairs[j];
                k[i][j] = sigma * dot(si, sj);
                if i > j {
                    k[i][m + j] = dot(si, yj);
                    k[m + j][i] = dot(si, yj);
                }
                if i == j {
                    k[m + i][m + j] = -dot(si, yi);
                }
            }
        }
        for i in 0..2 * m {
            for j in 0..2 * m {
                k[i][j] -= dot(&w[i], &pw[j]);
            }
        }
        let wt: Vec<f64> = w.iter().map(|c| dot(c, &base)).collect();
        let Some(c) = solve_dense(k, wt) else {
            return base;
        };
        let mut d = base;
        for (col, ci) in pw.iter().zip(c) {
            for (di, v) in d.iter_mut().zip(col) {
                *di += ci * v;
            }
        }
        d
    }
}

fn is_strictly_feasible(x: &[f64], layout: &ConstraintLayout) -> bool {
    eval_constraints_flat(x, layout.n_ctrl, layout.mu, layout.epsilon).is_strictly_feasible()
}

/// Minimizes `objective` under the SPD constraints; returns the final
/// (strictly feasible) flat control vector and the run report.
///
/// `observer` sees every accepted iterate, including the initial one.
pub fn optimize<O, F>(
    objective: &mut O,
    init: &[f64],
    opts: &OptimizeOptions,
    mut observer: F,
) -> Result<(Vec<f64>, OptimizeReport)>
where
    O: Objective + ?Sized,
    F: FnMut(&IterationRecord),
{
    opts.validate()?;
    let layout = objective.layout();
    check_len(layout.len(), init.len())?;
    if !is_strictly_feasible(init, &layout) {
        return Err(Error::Infeasible("initial guess violates the SPD constraints".into()));
    }

    let mut evaluations = 0usize;
    let mut x = init.to_vec();
    let (mut j, mut grad_j) = objective.value_and_gradient(&x)?;
    evaluations += 1;
    let mut history = Vec::new();
    let mut iteration = 0usize;
    let mut termination = Termination::Converged;
    let mut lbfgs = Lbfgs::new(opts.memory);
    let schedule = opts.schedule();

    let nodes = (layout.n_ctrl * layout.n_slices).max(1) as f64;

    'stages: for (stage, &mu_nominal) in schedule.iter().enumerate() {
        let mu_b = if opts.normalize_barrier { mu_nominal / nodes } else { mu_nominal };
        let (mut phi, mut g) = barrier_value_and_gradient_flat(&x, &layout, j, &grad_j, mu_b)?;
        let record = |iteration, phi, j, g: &[f64], x: &[f64]| {
            let c = eval_constraints_flat(x, layout.n_ctrl, layout.mu, layout.epsilon);
            IterationRecord {
                iteration,
                stage,
                cost: j,
                barrier_value: phi,
                gradient_norm: norm_inf(g),
                min_g1: c.min_g1(),
                min_g2: c.min_g2(),
                mu_b: mu_nominal,
            }
        };
        let rec = record(iteration, phi, j, &g, &x);
        observer(&rec);
        history.push(rec);

        let mut stage_iterations = 0usize;
        let mut stalls = 0usize;
        loop {
            if norm_inf(&g) <= opts.gradient_tolerance {
                break;
            }
            if iteration >= opts.max_iterations {
                termination = Termination::MaxIterations;
                break 'stages;
            }
            if stage_iterations >= opts.max_stage_iterations {
                break;
            }

            let mut accepted = None;
            let mut use_memory = !lbfgs.pairs.is_empty();
            loop {
                let sigma = match lbfgs.sigma() {
                    Some(s) if use_memory => s,
                    _ => norm_inf(&grad_j).max(f64::MIN_POSITIVE) / opts.initial_step,
                };
                let precond = BlockDiagonal::new(&x, &layout, sigma, mu_b);
                let mut d = if use_memory {
                    lbfgs.direction(&precond, sigma, &g)
                } else {
                    precond.solve(&g.iter().map(|v| -v).collect::<Vec<_>>())
                };
                if !(dot(&d, &g) < 0.0) {
                    d = g.iter().map(|v| -v / sigma).collect();
                }
                let slope = dot(&d, &g);
                let mut alpha = 1.0;
                for _ in 0..opts.max_backtracks {
                    let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                    if is_strictly_feasible(&trial, &layout) {
                        evaluations += 1;
                        // A failed solve counts as a rejected trial.
                        if let Ok(jt) = objective.value(&trial) {
                            let (phit, _) = barrier_value_and_gradient_flat(&trial, &layout, jt, &grad_j, mu_b)?;
                            if phit < phi && phit <= phi + opts.armijo_c1 * alpha * slope {
                                accepted = Some(trial);
                                break;
                            }
                        }
                    }
                    alpha *= opts.backtrack_factor;
                }
                if accepted.is_some() || !use_memory {
                    break;
                }
                // Retry once without the curvature memory.
                lbfgs.pairs.clear();
                use_memory = false;
            }

            let Some(trial) = accepted else {
                if stage + 1 == schedule.len() {
                    termination = Termination::LineSearchFailure;
                    break 'stages;
                }
                break;
            };
            let (jt, grad_t) = objective.value_and_gradient(&trial)?;
            evaluations += 1;
            let (phit, gt) = barrier_value_and_gradient_flat(&trial, &layout, jt, &grad_t, mu_b)?;
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad_t.iter().zip(&grad_j).map(|(a, b)| a - b).collect();
            lbfgs.push(s, y);
            let decrease = (phi - phit) / phit.abs().max(f64::MIN_POSITIVE);
            x = trial;
            j = jt;
            grad_j = grad_t;
            phi = phit;
            g = gt;
            iteration += 1;
            stage_iterations += 1;
            let rec = record(iteration, phi, j, &g, &x);
            debug_assert!(rec.min_g1 > 0.0 && rec.min_g2 > 0.0);
            observer(&rec);
            history.push(rec);
            if decrease < opts.relative_decrease_tolerance {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
    }

    Ok((x, OptimizeReport { history, termination, wall_time: None, evaluations }))
}
