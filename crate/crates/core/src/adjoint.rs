//! Discrete cost, adjoint solves and exact discrete gradients.
//!
//! The steady adjoint solves `Sᵀ p = M_obs (q − E z)` with `p = 0` on the
//! obstacle interface. The transient adjoint is the exact transpose of the
//! θ-method recursion, so the gradient matches the discrete cost to solver
//! precision.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::control::{ControlField, TransientControl};
use crate::error::{check_len, Error, Result};
use crate::forward::{self, ThetaStepper, TimeGrid, Trajectory};
use crate::optimizer::{ConstraintLayout, Objective};
use crate::problem::CloakProblem;
use crate::sparse::LdltFactor;

/// Derivatives of the cost with respect to `u`, `f`, `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    pub g_u: Vec<f64>,
    pub g_f: Vec<f64>,
    pub g_v: Vec<f64>,
}

impl GradientTriple {
    pub fn from_flat(x: &[f64]) -> Self {
        let n = x.len() / 3;
        Self { g_u: x[..n].to_vec(), g_f: x[n..2 * n].to_vec(), g_v: x[2 * n..].to_vec() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.g_u.len());
        out.extend_from_slice(&self.g_u);
        out.extend_from_slice(&self.g_f);
        out.extend_from_slice(&self.g_v);
        out
    }

    pub fn norm_inf(&self) -> f64 {
        crate::math::norm_inf(&self.to_flat())
    }
}

/// Steady cost `½‖q − Ez‖²_{Ω_obs} + R(u, f, v)`; `ez` is `E z`.
pub fn eval_cost_steady(problem: &CloakProblem, q: &[f64], ez: &[f64], ctrl: &ControlField) -> Result<f64> {
    check_len(problem.n_state(), q.len())?;
    check_len(problem.n_state(), ez.len())?;
    problem.check_control(ctrl)?;
    Ok(problem.misfit(q, ez) + problem.regularization(ctrl))
}

fn adjoint_rhs(problem: &CloakProblem, q: &[f64], ez: &[f64], scale: f64) -> Vec<f64> {
    let g = problem.misfit_gradient(q, ez);
    problem.split.free().iter().map(|&i| scale * g[i]).collect()
}

/// Steady adjoint on the masked mesh (zero on Dirichlet nodes).
pub fn solve_adjoint_steady(problem: &CloakProblem, q: &[f64], ez: &[f64], ctrl: &ControlField) -> Result<Vec<f64>> {
    check_len(problem.n_state(), q.len())?;
    check_len(problem.n_state(), ez.len())?;
    problem.check_definite(ctrl)?;
    // S is symmetric, so Sᵀ = S.
    let a = problem.system_ff(ctrl, 0.0, 1.0)?;
    let factor = problem.factor_ff(&a)?;
    Ok(adjoint_with_factor(problem, q, ez, &factor))
}

fn adjoint_with_factor(problem: &CloakProblem, q: &[f64], ez: &[f64], factor: &LdltFactor) -> Vec<f64> {
    let mut rhs = adjoint_rhs(problem, q, ez, 1.0);
    factor.solve_in_place(&mut rhs);
    problem.split.expand(&rhs, 0.0)
}

fn add_bilinear(problem: &CloakProblem, p: &[f64], q: &[f64], scale: f64, out: &mut [f64]) {
    let n = problem.n_ctrl();
    for (c, tensor) in problem.tensors.iter().enumerate() {
        tensor.bilinear_gradient_add(p, q, scale, &mut out[c * n..(c + 1) * n]);
    }
}

/// `β M_u u + β_g A_u u − (B_u p) q` and the cyclic `f`, `v` terms.
pub fn eval_gradient_steady(problem: &CloakProblem, q: &[f64], p: &[f64], ctrl: &ControlField) -> Result<GradientTriple> {
    check_len(problem.n_state(), q.len())?;
    check_len(problem.n_state(), p.len())?;
    problem.check_control(ctrl)?;
    let mut g = vec![0.0; 3 * problem.n_ctrl()];
    problem.regularization_gradient_add(ctrl, 1.0, &mut g);
    add_bilinear(problem, p, q, -1.0, &mut g);
    Ok(GradientTriple::from_flat(&g))
}

/// One steady state/adjoint/gradient evaluation.
#[derive(Debug, Clone)]
pub struct SteadyEvaluation {
    pub cost: f64,
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub gradient: GradientTriple,
}

/// Reduced steady cost `ctrl ↦ J(q(ctrl), ctrl)`.
#[derive(Debug, Clone)]
pub struct SteadyObjective<'a> {
    problem: &'a CloakProblem,
    ez: Vec<f64>,
    evaluations: usize,
}

impl<'a> SteadyObjective<'a> {
    /// `z` is the reference field on the reference mesh.
    pub fn new(problem: &'a CloakProblem, z: &[f64]) -> Result<Self> {
        Ok(Self { problem, ez: problem.restrict_reference(z)?, evaluations: 0 })
    }

    pub fn problem(&self) -> &CloakProblem {
        self.problem
    }

    pub fn restricted_reference(&self) -> &[f64] {
        &self.ez
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn cost(&mut self, ctrl: &ControlField) -> Result<f64> {
        self.evaluations += 1;
        let q = forward::solve_state_steady(self.problem, ctrl)?;
        eval_cost_steady(self.problem, &q, &self.ez, ctrl)
    }

    pub fn evaluate(&mut self, ctrl: &ControlField) -> Result<SteadyEvaluation> {
        self.evaluations += 1;
        let (q, factor) = forward::solve_state_steady_factored(self.problem, ctrl)?;
        let cost = eval_cost_steady(self.problem, &q, &self.ez, ctrl)?;
        let p = adjoint_with_factor(self.problem, &q, &self.ez, &factor);
        let gradient = eval_gradient_steady(self.problem, &q, &p, ctrl)?;
        Ok(SteadyEvaluation { cost, state: q, adjoint: p, gradient })
    }
}

impl Objective for SteadyObjective<'_> {
    fn layout(&self) -> ConstraintLayout {
        ConstraintLayout {
            n_ctrl: self.problem.n_ctrl(),
            n_slices: 1,
            mu: self.problem.data.mu,
            epsilon: self.problem.data.epsilon,
        }
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.cost(&ControlField::from_flat(x))
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ev = self.evaluate(&ControlField::from_flat(x))?;
        Ok((ev.cost, ev.gradient.to_flat()))
    }
}

/// Whether time node `i` enters the rectangle-rule cost sum.
/// `include_final` selects nodes `1..=N`, otherwise `0..N`.
pub fn in_cost(i: usize, steps: usize, include_final: bool) -> bool {
    if include_final {
        i >= 1
    } else {
        i < steps
    }
}

/// Transient cost `Δt Σ_{i∈I} [½‖q_i − E z_i‖²_{Ω_obs} + R(c_i)]`.
pub fn eval_cost_transient(
    problem: &CloakProblem,
    q: &Trajectory,
    ez: &Trajectory,
    ctrl: &TransientControl,
    include_final: bool,
) -> Result<f64> {
    check_len(q.len(), ez.len())?;
    check_len(q.len(), ctrl.n_slices())?;
    if q.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
    }
    let steps = q.len() - 1;
    let dt = q.times[1] - q.times[0];
    let mut j = 0.0;
    for i in 0..=steps {
        if in_cost(i, steps, include_final) {
            j += dt * (problem.misfit(&q.fields[i], &ez.fields[i]) + problem.regularization(&ctrl.slices[i]));
        }
    }
    Ok(j)
}

fn adjoint_transient_with(
    problem: &CloakProblem,
    q: &Trajectory,
    ez: &Trajectory,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
    factors: &[Rc<LdltFactor>],
) -> Result<Trajectory> {
    let steps = grid.steps;
    let dt = grid.dt();
    let stepper = ThetaStepper::new(problem, dt, theta)?;
    let split = &problem.split;
    let n = problem.n_state();
    let mut p = vec![vec![0.0; n]; steps + 1];
    for k in (1..=steps).rev() {
        let mut rhs = if in_cost(k, steps, include_final) {
            adjoint_rhs(problem, &q.fields[k], &ez.fields[k], dt)
        } else {
            vec![0.0; split.free().len()]
        };
        if k < steps {
            // Ã_- is symmetric; p vanishes on Dirichlet nodes.
            let back = stepper.explicit_apply(&ctrl.slices[k], &p[k + 1]);
            for (r, &i) in rhs.iter_mut().zip(split.free()) {
                *r += back[i];
            }
        }
        factors[k - 1].solve_in_place(&mut rhs);
        p[k] = split.expand(&rhs, 0.0);
    }
    Ok(Trajectory { times: grid.times(), fields: p })
}

/// Backward adjoint recursion
/// `Ã_+(c_k)ᵀ p_k = Ã_-(c_k)ᵀ p_{k+1} + Δt M_obs (q_k − E z_k)`, `p_{N+1} = 0`.
/// Entry 0 is unused and left at zero.
pub fn solve_adjoint_transient(
    problem: &CloakProblem,
    q: &Trajectory,
    ez: &Trajectory,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
) -> Result<Trajectory> {
    check_len(grid.steps + 1, q.len())?;
    check_len(grid.steps + 1, ez.len())?;
    check_len(grid.steps + 1, ctrl.n_slices())?;
    let mut stepper = ThetaStepper::new(problem, grid.dt(), theta)?;
    let factors = (1..=grid.steps)
        .map(|k| stepper.implicit_factor(&ctrl.slices[k]))
        .collect::<Result<Vec<_>>>()?;
    adjoint_transient_with(problem, q, ez, ctrl, grid, theta, include_final, &factors)
}

/// Gradient with respect to every control slice:
/// `Δt R'(c_k) − θΔt (B p_k) q_k − (1−θ)Δt (B p_{k+1}) q_k`.
pub fn eval_gradient_transient(
    problem: &CloakProblem,
    q: &Trajectory,
    p: &Trajectory,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
) -> Result<Vec<GradientTriple>> {
    Ok(gradient_transient_flat(problem, q, p, ctrl, grid, theta, include_final)?
        .chunks(3 * problem.n_ctrl())
        .map(GradientTriple::from_flat)
        .collect())
}

fn gradient_transient_flat(
    problem: &CloakProblem,
    q: &Trajectory,
    p: &Trajectory,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
) -> Result<Vec<f64>> {
    let steps = grid.steps;
    check_len(steps + 1, q.len())?;
    check_len(steps + 1, p.len())?;
    check_len(steps + 1, ctrl.n_slices())?;
    let dt = grid.dt();
    let per = 3 * problem.n_ctrl();
    let mut g = vec![0.0; per * (steps + 1)];
    for k in 0..=steps {
        let seg = &mut g[k * per..(k + 1) * per];
        if in_cost(k, steps, include_final) {
            problem.regularization_gradient_add(&ctrl.slices[k], dt, seg);
        }
        if k >= 1 && theta != 0.0 {
            add_bilinear(problem, &p.fields[k], &q.fields[k], -theta * dt, seg);
        }
        if k < steps && theta != 1.0 {
            add_bilinear(problem, &p.fields[k + 1], &q.fields[k], -(1.0 - theta) * dt, seg);
        }
    }
    Ok(g)
}

/// One transient forward/adjoint/gradient evaluation.
#[derive(Debug, Clone)]
pub struct TransientEvaluation {
    pub cost: f64,
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub gradient: Vec<GradientTriple>,
}

/// Reduced transient cost over all `(N+1)` control slices.
#[derive(Debug, Clone)]
pub struct TransientObjective<'a> {
    problem: &'a CloakProblem,
    grid: TimeGrid,
    theta: f64,
    include_final: bool,
    ez: Trajectory,
    evaluations: usize,
}

impl<'a> TransientObjective<'a> {
    /// `z` is the reference trajectory on the reference mesh.
    pub fn new(problem: &'a CloakProblem, z: &Trajectory, grid: TimeGrid, theta: f64, include_final: bool) -> Result<Self> {
        check_len(grid.steps + 1, z.len())?;
        let ez = z.map_fields(|x| problem.restrict_reference(x))?;
        Ok(Self { problem, grid, theta, include_final, ez, evaluations: 0 })
    }

    pub fn restricted_reference(&self) -> &Trajectory {
        &self.ez
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn cost(&mut self, ctrl: &TransientControl) -> Result<f64> {
        self.evaluations += 1;
        let q = forward::solve_transient(self.problem, ctrl, self.grid, self.theta)?;
        eval_cost_transient(self.problem, &q, &self.ez, ctrl, self.include_final)
    }

    fn evaluate_flat(&mut self, ctrl: &TransientControl) -> Result<(f64, Trajectory, Trajectory, Vec<f64>)> {
        self.evaluations += 1;
        let (q, factors) = forward::solve_transient_factored(self.problem, ctrl, self.grid, self.theta)?;
        let cost = eval_cost_transient(self.problem, &q, &self.ez, ctrl, self.include_final)?;
        let p = adjoint_transient_with(
            self.problem,
            &q,
            &self.ez,
            ctrl,
            self.grid,
            self.theta,
            self.include_final,
            &factors,
        )?;
        let g = gradient_transient_flat(self.problem, &q, &p, ctrl, self.grid, self.theta, self.include_final)?;
        Ok((cost, q, p, g))
    }

    pub fn evaluate(&mut self, ctrl: &TransientControl) -> Result<TransientEvaluation> {
        let (cost, state, adjoint, g) = self.evaluate_flat(ctrl)?;
        let gradient = g.chunks(3 * self.problem.n_ctrl()).map(GradientTriple::from_flat).collect();
        Ok(TransientEvaluation { cost, state, adjoint, gradient })
    }
}

impl Objective for TransientObjective<'_> {
    fn layout(&self) -> ConstraintLayout {
        ConstraintLayout {
            n_ctrl: self.problem.n_ctrl(),
            n_slices: self.grid.steps + 1,
            mu: self.problem.data.mu,
            epsilon: self.problem.data.epsilon,
        }
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.cost(&TransientControl::from_flat(x, self.grid.steps + 1))
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (cost, _, _, g) = self.evaluate_flat(&TransientControl::from_flat(x, self.grid.steps + 1))?;
        Ok((cost, g))
    }
}

/// One coordinate of a finite-difference audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    pub index: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
}

impl GradientProbe {
    /// `|fd − adj| / max(|adj|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.finite_difference - self.adjoint).abs() / self.adjoint.abs().max(floor)
    }
}

/// Central difference `(J(x + h e_i) − J(x − h e_i)) / 2h`.
pub fn central_difference<O: Objective + ?Sized>(objective: &mut O, x: &[f64], index: usize, step: f64) -> Result<f64> {
    let mut xp = x.to_vec();
    xp[index] += step;
    let jp = objective.value(&xp)?;
    xp[index] = x[index] - step;
    let jm = objective.value(&xp)?;
    Ok((jp - jm) / (2.0 * step))
}

/// Compares the adjoint gradient with central differences at `indices`.
pub fn finite_difference_check<O: Objective + ?Sized>(
    objective: &mut O,
    x: &[f64],
    indices: &[usize],
    step: f64,
) -> Result<Vec<GradientProbe>> {
    let (_, g) = objective.value_and_gradient(x)?;
    indices
        .iter()
        .map(|&i| {
            if i >= x.len() {
                return Err(Error::InvalidArgument(alloc::format!("coordinate {i} out of range")));
            }
            Ok(GradientProbe { index: i, adjoint: g[i], finite_difference: central_difference(objective, x, i, step)? })
        })
        .collect()
}

/// Error of the central difference along `direction` against the adjoint
/// directional derivative, for each step size. Truncation error dominates
/// for large steps and round-off for small ones, which gives a V shape.
pub fn step_sweep<O: Objective + ?Sized>(
    objective: &mut O,
    x: &[f64],
    direction: &[f64],
    steps: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_len(x.len(), direction.len())?;
    let (_, g) = objective.value_and_gradient(x)?;
    let exact = crate::math::dot(&g, direction);
    let shifted = |t: f64| -> Vec<f64> { x.iter().zip(direction).map(|(a, d)| a + t * d).collect() };
    steps
        .iter()
        .map(|&h| {
            let fd = (objective.value(&shifted(h))? - objective.value(&shifted(-h))?) / (2.0 * h);
            Ok((h, (fd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)))
        })
        .collect()
}
