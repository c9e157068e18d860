//! Post-processing: eigen-structure, efficiency, space-time norms, transfer.

mod common;

use cloakopt_core::analysis::{self, eigen_field, efficiency, prolongate_controls, spacetime_norm};
use cloakopt_core::mesh::refine_uniform;
use cloakopt_core::optimizer::eval_constraints;
use cloakopt_core::problem::lambda_min;
use cloakopt_core::{forward, CloakProblem, ControlField, Error, TimeGrid, TransientControl, Trajectory};
use common::{random_control, small_problem, Lcg};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[test]
fn eigen_examples() {
    let e = eigen_field(&ControlField::zeros(1), 1.0);
    assert_eq!((e.lambda1[0], e.lambda2[0], e.angle1[0]), (1.0, 1.0, 0.0));

    let e = eigen_field(&ControlField::constant(1, 1.0, 0.0, 0.0), 1.0);
    assert!(close(e.lambda1[0], 2.0) && close(e.lambda2[0], 1.0) && close(e.angle1[0], 0.0));
    assert!(close(e.angle2[0], 90.0));

    let e = eigen_field(&ControlField::constant(1, 0.0, 0.0, 0.5), 1.0);
    assert!(close(e.lambda1[0], 1.5) && close(e.lambda2[0], 0.5));
    assert!(close(e.angle1[0], 45.0) && close(e.angle2[0], -45.0));
}

#[test]
fn eigen_decomposition_reconstructs_the_matrix() {
    let mut rng = Lcg(8);
    let ctrl = ControlField::new(
        (0..50).map(|_| 3.0 * rng.next()).collect(),
        (0..50).map(|_| 3.0 * rng.next()).collect(),
        (0..50).map(|_| 3.0 * rng.next()).collect(),
    )
    .unwrap();
    let e = eigen_field(&ctrl, 1.0);
    for k in 0..ctrl.len() {
        let kmat = ctrl.diffusivity(k, 1.0);
        let r = e.reconstruct(k);
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[i][j] - kmat[i][j]).abs() <= 1e-10 * (1.0 + kmat[i][j].abs()));
            }
        }
        assert!(e.lambda1[k] >= e.lambda2[k]);
        let det = kmat[0][0] * kmat[1][1] - kmat[0][1] * kmat[1][0];
        assert!((e.lambda1[k] * e.lambda2[k] - det).abs() <= 1e-10 * (1.0 + det.abs()));
        assert!(e.angle1[k] > -90.0 && e.angle1[k] <= 90.0);
        assert!(e.angle2[k] > -90.0 && e.angle2[k] <= 90.0);
        assert!(((e.angle1[k] - e.angle2[k]).abs() - 90.0).abs() < 1e-9);
        assert!(close(e.lambda2[k], lambda_min(&kmat)));
    }
}

#[test]
fn efficiency_examples() {
    assert_eq!(efficiency(0.4, 0.4).unwrap(), 0.0);
    assert_eq!(efficiency(0.4, 0.0).unwrap(), 1.0);
    assert!(matches!(efficiency(0.0, 0.1), Err(Error::Domain(_))));
}

#[test]
fn spacetime_norm_uses_the_trapezoidal_rule() {
    let p = small_problem(0.0);
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let n = p.n_state();
    let zero = Trajectory { times: grid.times(), fields: vec![vec![0.0; n]; 5] };
    assert_eq!(spacetime_norm(&p.obs_mass, &zero, &zero).unwrap(), 0.0);
    // ‖c(t)‖² = c_i² |Ω_obs| at the nodes, summed with weights Δt/2, Δt, …, Δt/2.
    let c = [0.0, 1.0, 2.0, 1.0, 3.0];
    let traj = Trajectory { times: grid.times(), fields: c.iter().map(|&v| vec![v; n]).collect() };
    let expected = 0.25 * (0.0 / 2.0 + 1.0 + 4.0 + 1.0 + 9.0 / 2.0) * p.obs_area;
    assert!(close(spacetime_norm(&p.obs_mass, &traj, &zero).unwrap(), expected));

    let short = Trajectory { times: vec![0.0, 1.0], fields: vec![vec![0.0; n]; 2] };
    assert!(spacetime_norm(&p.obs_mass, &short, &zero).is_err());
}

#[test]
fn efficiency_series_skips_the_initial_instant() {
    let p = small_problem(0.0);
    let grid = TimeGrid::new(1.0, 3).unwrap();
    let z = forward::solve_reference_transient(&p, grid, 1.0).unwrap();
    let ez = z.map_fields(|x| p.restrict_reference(x)).unwrap();
    let zero = TransientControl::zeros(p.n_ctrl(), 4);
    let q0 = forward::solve_transient(&p, &zero, grid, 1.0).unwrap();
    let series = analysis::efficiency_series(&p.obs_mass, p.obs_area, &q0, &q0, &ez).unwrap();
    assert_eq!(series.len(), 3);
    assert!(series.iter().all(|&(_, eta)| eta == 0.0));
}

fn fine_problem(coarse: &CloakProblem) -> (CloakProblem, cloakopt_core::ParentMap) {
    let (fine, parents) = refine_uniform(&coarse.reference_mesh).unwrap();
    let tags = coarse.reference_tags.refine(&fine, &parents).unwrap();
    (CloakProblem::new(fine, tags, coarse.data.clone()).unwrap(), parents)
}

#[test]
fn prolongation_reproduces_constants() {
    let p = small_problem(0.0);
    let (pf, parents) = fine_problem(&p);
    let c = ControlField::constant(p.n_ctrl(), 0.3, -0.2, 0.1);
    let out = prolongate_controls(&p.reference_mesh, &c, &p.control_reference_nodes(), &parents, &pf.control_reference_nodes()).unwrap();
    assert_eq!(out.warnings, 0);
    assert_eq!(out.controls.len(), pf.n_ctrl());
    for k in 0..pf.n_ctrl() {
        assert!(close(out.controls.u[k], 0.3) && close(out.controls.f[k], -0.2) && close(out.controls.v[k], 0.1));
    }
}

#[test]
fn prolongation_preserves_g1_margin_and_definiteness() {
    let p = small_problem(0.0);
    let (pf, parents) = fine_problem(&p);
    let mut rng = Lcg(31);
    // Near the constraint boundary on purpose.
    let mut c = random_control(p.n_ctrl(), &mut rng);
    for k in 0..c.len() {
        c.u[k] = -0.9 + 0.05 * rng.next();
        c.v[k] = 0.9 * ((1.0 + c.u[k]) * (1.0 + c.f[k]) - 1e-3).max(0.0).sqrt() * rng.next().signum();
    }
    let coarse = eval_constraints(&c, 1.0, 1e-3);
    assert!(coarse.is_strictly_feasible());
    let fine_nodes = pf.control_reference_nodes();
    let out = prolongate_controls(&p.reference_mesh, &c, &p.control_reference_nodes(), &parents, &fine_nodes).unwrap();
    let fine = eval_constraints(&out.controls, 1.0, 1e-3);
    let min_coarse = coarse.min_g1();
    assert!(fine.min_g1() >= min_coarse - 1e-14);
    for k in 0..out.controls.len() {
        assert!(lambda_min(&out.controls.diffusivity(k, 1.0)) > 0.0);
    }
    // Coarse nodes keep their values.
    let coarse_nodes = p.control_reference_nodes();
    for (k, n) in fine_nodes.iter().enumerate() {
        if let Ok(i) = coarse_nodes.binary_search(n) {
            assert_eq!(out.controls.u[k], c.u[i]);
        }
    }
}
