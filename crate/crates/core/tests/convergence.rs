//! Spatial and temporal convergence of the discretization.

mod common;

use cloakopt_core::assembly::{assemble_boundary_load, assemble_load, assemble_mass, assemble_robin, assemble_stiffness, Diffusivity};
use cloakopt_core::forward::{self, ThetaStepper};
use cloakopt_core::mesh::{build_square_mesh_cells, OUTER_BOUNDARY};
use cloakopt_core::{ControlField, LdltFactor, Point, Shape, TimeGrid, TransientControl, TriMesh};
use common::small_problem;

/// Degree-4 exact rule on the reference triangle (weights sum to 1).
const DUNAVANT4: [(f64, f64, f64); 6] = [
    (0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.091576213509771, 0.091576213509771, 0.109951743655322),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.109951743655322),
];

fn l2_error(mesh: &TriMesh, uh: &[f64], exact: impl Fn(Point) -> f64) -> f64 {
    let mut e2 = 0.0;
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.vertices(e);
        for &(s, t, w) in &DUNAVANT4 {
            let l0 = 1.0 - s - t;
            let x = [l0 * a[0] + s * b[0] + t * c[0], l0 * a[1] + s * b[1] + t * c[1]];
            let val = l0 * uh[tri[0]] + s * uh[tri[1]] + t * uh[tri[2]];
            e2 += w * mesh.area(e) * (val - exact(x)).powi(2);
        }
    }
    e2.sqrt()
}

/// `z* = x² + y²` solves `−μΔz = −4μ` with `μ∂ₙz + αz = g` for the matching `g`.
#[test]
fn manufactured_solution_converges_at_second_order() {
    let (mu, alpha) = (1.3, 0.7);
    let exact = |p: Point| p[0] * p[0] + p[1] * p[1];
    let mut errors = Vec::new();
    for cells in [4, 8, 16, 32] {
        let mesh = build_square_mesh_cells(2.0, cells).unwrap();
        let a = assemble_stiffness(&mesh, &Diffusivity::Scalar(mu))
            .unwrap()
            .add_scaled(&assemble_robin(&mesh, OUTER_BOUNDARY, alpha).unwrap(), 1.0)
            .unwrap();
        let mut f = assemble_load(&mesh, &Shape::All, -4.0 * mu);
        let g = assemble_boundary_load(&mesh, OUTER_BOUNDARY, |p, n| {
            alpha * exact(p) + mu * (2.0 * p[0] * n[0] + 2.0 * p[1] * n[1])
        });
        for (fi, gi) in f.iter_mut().zip(&g) {
            *fi += gi;
        }
        let u = LdltFactor::new(&a).unwrap().solve(&f);
        errors.push(l2_error(&mesh, &u, exact));
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "order {order}, errors {errors:?}");
    }
}

fn final_time_errors(theta: f64, steps: &[usize], reference_steps: usize) -> Vec<f64> {
    let p = small_problem(0.0);
    let ctrl = ControlField::constant(p.n_ctrl(), 0.4, -0.2, 0.1);
    let t_final = 0.5;
    let run = |n: usize| {
        let grid = TimeGrid::new(t_final, n).unwrap();
        forward::solve_transient(&p, &TransientControl::repeat(&ctrl, n + 1), grid, theta)
            .unwrap()
            .last()
            .to_vec()
    };
    let reference = run(reference_steps);
    steps
        .iter()
        .map(|&n| {
            let d: Vec<f64> = run(n).iter().zip(&reference).map(|(a, b)| a - b).collect();
            p.mass.bilinear(&d, &d).sqrt()
        })
        .collect()
}

#[test]
fn backward_euler_is_first_order_in_time() {
    let errors = final_time_errors(1.0, &[4, 8, 16], 4 * 64);
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.8..=1.2).contains(&order), "order {order}, errors {errors:?}");
    }
}

#[test]
fn crank_nicolson_is_second_order_in_time() {
    let errors = final_time_errors(0.5, &[8, 16, 32], 8 * 64);
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.7..=2.3).contains(&order), "order {order}, errors {errors:?}");
    }
}

#[test]
fn unforced_energy_decays_for_theta_at_least_half() {
    let mut p = small_problem(0.0);
    p = p.with_source(cloakopt_core::SourceSpec { support: Shape::Empty, magnitude: 0.0 }).unwrap();
    let ctrl = ControlField::constant(p.n_ctrl(), 2.0, -0.5, 0.3);
    let mut q0: Vec<f64> = p.mesh().nodes().iter().map(|x| (x[0] * 1.7).sin() + x[1] * x[1]).collect();
    for &i in p.split.fixed() {
        q0[i] = 0.0;
    }
    for theta in [0.5, 0.75, 1.0] {
        let mut stepper = ThetaStepper::new(&p, 0.05, theta).unwrap();
        let mut q = q0.clone();
        let mut energy = p.mass.bilinear(&q, &q);
        for _ in 0..20 {
            q = stepper.step(&q, &ctrl, &ctrl).unwrap();
            let e = p.mass.bilinear(&q, &q);
            assert!(e < energy, "theta={theta}: energy grew from {energy} to {e}");
            energy = e;
        }
    }
}

#[test]
fn constant_controls_factor_once() {
    let p = small_problem(2.0);
    let ctrl = ControlField::constant(p.n_ctrl(), 0.5, 0.5, 0.0);
    let mut stepper = ThetaStepper::new(&p, 0.1, 1.0).unwrap();
    let mut q = forward::initial_state(&p);
    for _ in 0..14 {
        q = stepper.step(&q, &ctrl, &ctrl).unwrap();
    }
    assert_eq!(stepper.factorizations(), 1);
}

#[test]
fn implicit_stepping_converges_to_the_steady_state() {
    let p = small_problem(1.5);
    let ctrl = ControlField::constant(p.n_ctrl(), -0.3, 0.6, 0.2);
    let steady = forward::solve_state_steady(&p, &ctrl).unwrap();
    let grid = TimeGrid::new(200.0, 400).unwrap();
    let traj = forward::solve_transient(&p, &TransientControl::repeat(&ctrl, grid.steps + 1), grid, 1.0).unwrap();
    let diff = traj.last().iter().zip(&steady).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = steady.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-8 * scale, "distance to steady state {diff}");
    assert!(forward::steady_residual(&p, &ctrl, &steady).unwrap() < 1e-12);
}

#[test]
fn reference_mass_and_state_mass_agree_on_kept_nodes() {
    let p = small_problem(0.0);
    let m = assemble_mass(&p.reference_mesh).unwrap();
    assert_eq!(p.domain.restriction.restrict_matrix(&m).unwrap(), p.mass);
}
