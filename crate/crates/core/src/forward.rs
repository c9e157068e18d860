//! Forward solves: reference and obstacle problems, steady and θ-method.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::control::{ControlField, TransientControl};
use crate::error::{check_len, Error, Result};
use crate::problem::CloakProblem;
use crate::sparse::{CsrMatrix, LdltFactor};

/// Uniform grid `t_i = i·Δt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs T > 0 and N ≥ 1, got T={t_final}, N={steps}"
            )));
        }
        Ok(Self { t_final, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.steps)
            .map(|i| if i == self.steps { self.t_final } else { i as f64 * dt })
            .collect()
    }
}

/// Nodal fields at the time nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.fields.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Applies `f` to every field (e.g. the restriction `E`).
    pub fn map_fields<F>(&self, mut f: F) -> Result<Trajectory>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let fields = self.fields.iter().map(|x| f(x)).collect::<Result<Vec<_>>>()?;
        Ok(Trajectory { times: self.times.clone(), fields })
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok(())
}

/// Steady reference field `(A + A_r) z = F` on the reference mesh.
pub fn solve_reference_steady(problem: &CloakProblem) -> Result<Vec<f64>> {
    let factor = LdltFactor::new(&problem.reference_system)?;
    Ok(factor.solve(&problem.reference_load))
}

/// Steady obstacle problem with controls; the returned field lives on the
/// masked mesh and equals `T_o` on Dirichlet nodes.
pub fn solve_state_steady(problem: &CloakProblem, ctrl: &ControlField) -> Result<Vec<f64>> {
    Ok(solve_state_steady_factored(problem, ctrl)?.0)
}

pub(crate) fn solve_state_steady_factored(
    problem: &CloakProblem,
    ctrl: &ControlField,
) -> Result<(Vec<f64>, LdltFactor)> {
    problem.check_definite(ctrl)?;
    let a = problem.system_ff(ctrl, 0.0, 1.0)?;
    let factor = problem.factor_ff(&a)?;
    let t_o = problem.data.t_obstacle;
    let split = &problem.split;
    let mut rhs = split.restrict(&problem.load);
    if t_o != 0.0 {
        let lifted = problem.apply_system(ctrl, &split.lift(t_o));
        for (r, &i) in rhs.iter_mut().zip(split.free()) {
            *r -= lifted[i];
        }
    }
    factor.solve_in_place(&mut rhs);
    Ok((split.expand(&rhs, t_o), factor))
}

/// Backward-Euler/θ-method reference trajectory on the reference mesh:
/// `(M + θΔt A) z_{i+1} = (M − (1−θ)Δt A) z_i + Δt F`, `z_0 = 0`.
pub fn solve_reference_transient(problem: &CloakProblem, grid: TimeGrid, theta: f64) -> Result<Trajectory> {
    check_theta(theta)?;
    let dt = grid.dt();
    let lhs = problem.reference_mass.add_scaled(&problem.reference_system, theta * dt)?;
    let rhs_op = problem.reference_mass.add_scaled(&problem.reference_system, -(1.0 - theta) * dt)?;
    let factor = LdltFactor::new(&lhs)?;
    let n = problem.reference_mesh.n_nodes();
    let mut fields = Vec::with_capacity(grid.steps + 1);
    fields.push(vec![0.0; n]);
    for i in 0..grid.steps {
        let mut b = rhs_op.mul_vec(&fields[i]);
        for (x, f) in b.iter_mut().zip(&problem.reference_load) {
            *x += dt * f;
        }
        factor.solve_in_place(&mut b);
        fields.push(b);
    }
    Ok(Trajectory { times: grid.times(), fields })
}

/// θ-method stepper for the controlled obstacle problem.
///
/// Solves `Ã_+ q_{i+1} = Ã_- q_i + Δt·(E F + F_o)` with
/// `Ã_+ = M̃ + θΔt S(c_{i+1})`, `Ã_- = M̃ − (1−θ)Δt S(c_i)`. The last
/// factorization is cached and reused while `c_{i+1}` does not change.
#[derive(Debug)]
pub struct ThetaStepper<'a> {
    problem: &'a CloakProblem,
    dt: f64,
    theta: f64,
    cached: Option<(ControlField, Rc<LdltFactor>)>,
    factorizations: usize,
}

impl<'a> ThetaStepper<'a> {
    pub fn new(problem: &'a CloakProblem, dt: f64, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { problem, dt, theta, cached: None, factorizations: 0 })
    }

    /// Number of numeric factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Factorization of the free block of `Ã_+(ctrl)`.
    pub fn implicit_factor(&mut self, ctrl: &ControlField) -> Result<Rc<LdltFactor>> {
        if let Some((c, f)) = &self.cached {
            if c == ctrl {
                return Ok(f.clone());
            }
        }
        let a = self.problem.system_ff(ctrl, 1.0, self.theta * self.dt)?;
        let f = Rc::new(self.problem.factor_ff(&a)?);
        self.factorizations += 1;
        self.cached = Some((ctrl.clone(), f.clone()));
        Ok(f)
    }

    /// `Ã_-(ctrl) x` on the full masked mesh.
    pub fn explicit_apply(&self, ctrl: &ControlField, x: &[f64]) -> Vec<f64> {
        let mut y = self.problem.mass.mul_vec(x);
        let w = (1.0 - self.theta) * self.dt;
        if w != 0.0 {
            for (a, s) in y.iter_mut().zip(self.problem.apply_system(ctrl, x)) {
                *a -= w * s;
            }
        }
        y
    }

    /// `Ã_+(ctrl) x` on the full masked mesh.
    pub fn implicit_apply(&self, ctrl: &ControlField, x: &[f64]) -> Vec<f64> {
        let mut y = self.problem.mass.mul_vec(x);
        let w = self.theta * self.dt;
        for (a, s) in y.iter_mut().zip(self.problem.apply_system(ctrl, x)) {
            *a += w * s;
        }
        y
    }

    pub fn step(&mut self, prev: &[f64], ctrl_prev: &ControlField, ctrl_next: &ControlField) -> Result<Vec<f64>> {
        Ok(self.step_with_factor(prev, ctrl_prev, ctrl_next)?.0)
    }

    pub(crate) fn step_with_factor(
        &mut self,
        prev: &[f64],
        ctrl_prev: &ControlField,
        ctrl_next: &ControlField,
    ) -> Result<(Vec<f64>, Rc<LdltFactor>)> {
        let problem = self.problem;
        check_len(problem.n_state(), prev.len())?;
        problem.check_definite(ctrl_next)?;
        let factor = self.implicit_factor(ctrl_next)?;
        let split = &problem.split;
        let t_o = problem.data.t_obstacle;
        let mut full = self.explicit_apply(ctrl_prev, prev);
        for (x, f) in full.iter_mut().zip(&problem.load) {
            *x += self.dt * f;
        }
        if t_o != 0.0 {
            let lifted = self.implicit_apply(ctrl_next, &split.lift(t_o));
            for (x, l) in full.iter_mut().zip(lifted) {
                *x -= l;
            }
        }
        let mut rhs = split.restrict(&full);
        factor.solve_in_place(&mut rhs);
        Ok((split.expand(&rhs, t_o), factor))
    }
}

/// Initial field: zero, except `T_o` on the obstacle interface.
pub fn initial_state(problem: &CloakProblem) -> Vec<f64> {
    problem.split.lift(problem.data.t_obstacle)
}

/// Controlled transient obstacle problem on `grid`; `ctrl` has one slice per
/// time node.
pub fn solve_transient(
    problem: &CloakProblem,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
) -> Result<Trajectory> {
    Ok(solve_transient_factored(problem, ctrl, grid, theta)?.0)
}

pub(crate) fn solve_transient_factored(
    problem: &CloakProblem,
    ctrl: &TransientControl,
    grid: TimeGrid,
    theta: f64,
) -> Result<(Trajectory, Vec<Rc<LdltFactor>>)> {
    check_len(grid.steps + 1, ctrl.n_slices())?;
    let mut stepper = ThetaStepper::new(problem, grid.dt(), theta)?;
    let mut fields = Vec::with_capacity(grid.steps + 1);
    let mut factors = Vec::with_capacity(grid.steps);
    fields.push(initial_state(problem));
    for i in 0..grid.steps {
        let (next, f) = stepper.step_with_factor(&fields[i], &ctrl.slices[i], &ctrl.slices[i + 1])?;
        fields.push(next);
        factors.push(f);
    }
    Ok((Trajectory { times: grid.times(), fields }, factors))
}

/// Relative residual of the free rows of a steady solve, for diagnostics.
pub fn steady_residual(problem: &CloakProblem, ctrl: &ControlField, q: &[f64]) -> Result<f64> {
    let s: CsrMatrix = problem.system_full(ctrl)?;
    let r = s.mul_vec(q);
    let split = &problem.split;
    let res: Vec<f64> = split.free().iter().map(|&i| r[i] - problem.load[i]).collect();
    let b = split.restrict(&problem.load);
    let nr = crate::math::norm2(&res);
    let nb = crate::math::norm2(&b).max(f64::MIN_POSITIVE);
    Ok(nr / nb)
}
