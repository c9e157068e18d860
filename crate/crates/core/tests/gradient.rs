//! Adjoint gradients against central finite differences.

mod common;

use cloakopt_core::adjoint::{self, finite_difference_check, step_sweep};
use cloakopt_core::forward::{self, ThetaStepper};
use cloakopt_core::optimizer::Objective;
use cloakopt_core::{ControlField, SteadyObjective, TimeGrid, TransientControl, TransientObjective};
use common::{random_control, small_problem, Lcg};

fn max_rel_error<O: Objective>(obj: &mut O, x: &[f64], rng: &mut Lcg, count: usize) -> f64 {
    let (_, g) = obj.value_and_gradient(x).unwrap();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let indices: Vec<usize> = (0..count).map(|_| ((rng.next() + 1.0) * 0.5 * x.len() as f64) as usize % x.len()).collect();
    finite_difference_check(obj, x, &indices, 1e-6)
        .unwrap()
        .iter()
        .map(|p| p.relative_error(1e-2 * scale))
        .fold(0.0, f64::max)
}

#[test]
fn steady_gradient_matches_central_differences() {
    for t_o in [0.0, 3.0] {
        let p = small_problem(t_o);
        assert!(p.n_state() <= 200);
        let z = forward::solve_reference_steady(&p).unwrap();
        let mut obj = SteadyObjective::new(&p, &z).unwrap();
        let mut rng = Lcg(7);
        let x = random_control(p.n_ctrl(), &mut rng).to_flat();
        let err = max_rel_error(&mut obj, &x, &mut rng, 12);
        assert!(err <= 1e-5, "T_o={t_o}: max relative error {err}");
    }
}

#[test]
fn transient_gradient_matches_central_differences() {
    let p = small_problem(0.0);
    let grid = TimeGrid::new(0.8, 4).unwrap();
    for (theta, include_final) in [(1.0, true), (0.5, true), (1.0, false), (0.3, false)] {
        let z = forward::solve_reference_transient(&p, grid, theta).unwrap();
        let mut obj = TransientObjective::new(&p, &z, grid, theta, include_final).unwrap();
        let mut rng = Lcg(11);
        let ctrl = TransientControl {
            slices: (0..=grid.steps).map(|_| random_control(p.n_ctrl(), &mut rng)).collect(),
        };
        let err = max_rel_error(&mut obj, &ctrl.to_flat(), &mut rng, 12);
        assert!(err <= 1e-5, "theta={theta}, final={include_final}: max relative error {err}");
    }
}

#[test]
fn step_sweep_is_v_shaped() {
    let p = small_problem(0.0);
    let z = forward::solve_reference_steady(&p).unwrap();
    let mut obj = SteadyObjective::new(&p, &z).unwrap();
    let mut rng = Lcg(3);
    let x = random_control(p.n_ctrl(), &mut rng).to_flat();
    let dir: Vec<f64> = (0..x.len()).map(|_| rng.next()).collect();
    let steps: Vec<f64> = (1..=12).map(|k| 10f64.powi(-k)).collect();
    let sweep = step_sweep(&mut obj, &x, &dir, &steps).unwrap();
    let (imin, &(_, emin)) = sweep
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    assert!(imin > 0 && imin < sweep.len() - 1, "minimum at an end: {sweep:?}");
    assert!(emin < 1e-7, "best error {emin}");
    assert!(sweep[0].1 > 10.0 * emin && sweep[sweep.len() - 1].1 > 10.0 * emin, "{sweep:?}");
}

/// One backward-Euler step written out by hand: with `q_0 = 0`,
/// `J(c_1) = Δt [½‖q_1 − z_1‖² + R(c_1)]` and `q_1 = (M + Δt S(c_1))⁻¹ Δt F`.
#[test]
fn single_step_gradient_matches_unrolled_formula() {
    let p = small_problem(0.0);
    let grid = TimeGrid::new(0.5, 1).unwrap();
    let dt = grid.dt();
    let z = forward::solve_reference_transient(&p, grid, 1.0).unwrap();
    let ez1 = p.restrict_reference(&z.fields[1]).unwrap();
    let mut rng = Lcg(5);
    let c0 = random_control(p.n_ctrl(), &mut rng);
    let c1 = random_control(p.n_ctrl(), &mut rng);

    let mut stepper = ThetaStepper::new(&p, dt, 1.0).unwrap();
    let q1 = stepper.step(&forward::initial_state(&p), &c0, &c1).unwrap();
    let factor = stepper.implicit_factor(&c1).unwrap();
    let rhs: Vec<f64> = p.split.free().iter().map(|&i| dt * p.misfit_gradient(&q1, &ez1)[i]).collect();
    let p1 = p.split.expand(&factor.solve(&rhs), 0.0);
    let expected = adjoint::eval_gradient_steady(&p, &q1, &p1, &c1).unwrap();

    let ctrl = TransientControl { slices: vec![c0, c1.clone()] };
    let mut obj = TransientObjective::new(&p, &z, grid, 1.0, true).unwrap();
    let ev = obj.evaluate(&ctrl).unwrap();
    // Slice 0 does not enter the cost and does not act on q_1 when θ = 1.
    assert!(ev.gradient[0].to_flat().iter().all(|&v| v == 0.0));
    let got = ev.gradient[1].to_flat();
    for (g, e) in got.iter().zip(expected.to_flat()) {
        assert!((g - dt * e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {}", dt * e);
    }
    let j = dt * (p.misfit(&q1, &ez1) + p.regularization(&c1));
    assert!((ev.cost - j).abs() <= 1e-13 * j);
}

#[test]
fn zero_misfit_leaves_only_regularization_gradient() {
    let p = small_problem(0.0);
    let zero = ControlField::zeros(p.n_ctrl());
    let q = forward::solve_state_steady(&p, &zero).unwrap();
    let pa = adjoint::solve_adjoint_steady(&p, &q, &q, &zero).unwrap();
    assert!(pa.iter().all(|&v| v == 0.0));
    let g = adjoint::eval_gradient_steady(&p, &q, &pa, &zero).unwrap();
    assert!(g.norm_inf() == 0.0);
}
