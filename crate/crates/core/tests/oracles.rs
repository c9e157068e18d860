//! Assembled operators against independent element-quadrature oracles.

mod common;

use cloakopt_core::analysis;
use cloakopt_core::assembly::{assemble_mass_on, assemble_stiffness_on, p1_gradients, ControlTensor, Diffusivity, Direction};
use cloakopt_core::mesh::build_square_mesh_cells;
use cloakopt_core::region::tag_regions;
use cloakopt_core::{ControlField, RegionSpec, TriMesh};
use common::{random_control, small_problem, Lcg};

/// `∫ f g` for P1 fields by the edge-midpoint rule, exact for quadratics.
fn l2_inner(mesh: &TriMesh, elems: &[usize], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for &e in elems {
        let [i, j, k] = mesh.triangles()[e];
        let mids = [(i, j), (j, k), (k, i)];
        for (p, q) in mids {
            let fa = 0.5 * (a[p] + a[q]);
            let fb = 0.5 * (b[p] + b[q]);
            s += mesh.area(e) / 3.0 * fa * fb;
        }
    }
    s
}

#[test]
fn observation_mass_matches_midpoint_quadrature() {
    let p = small_problem(0.0);
    let mut rng = Lcg(1);
    let n = p.n_state();
    let a: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let oracle = l2_inner(p.mesh(), p.tags().obs_elems(), &a, &b);
    let got = p.obs_mass.bilinear(&a, &b);
    assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
}

#[test]
fn mte_matches_quadrature_and_constants() {
    let p = small_problem(0.0);
    let mut rng = Lcg(2);
    let n = p.n_state();
    let q: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let d: Vec<f64> = q.iter().zip(&z).map(|(a, b)| a - b).collect();
    let oracle = l2_inner(p.mesh(), p.tags().obs_elems(), &d, &d) / p.obs_area;
    let got = analysis::mte(p.mesh(), p.tags().obs_elems(), &q, &z).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle);
    assert!((p.mte(&q, &z).unwrap() - oracle).abs() <= 1e-12 * oracle);

    assert_eq!(p.mte(&q, &q).unwrap(), 0.0);
    let shifted: Vec<f64> = q.iter().map(|v| v + 0.75).collect();
    assert!((p.mte(&shifted, &q).unwrap() - 0.5625).abs() < 1e-12);
}

#[test]
fn mte_ignores_changes_outside_the_observation_region() {
    let p = small_problem(0.0);
    let mut rng = Lcg(4);
    let n = p.n_state();
    let q: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let mut in_obs = vec![false; n];
    for &e in p.tags().obs_elems() {
        for &i in &p.mesh().triangles()[e] {
            in_obs[i] = true;
        }
    }
    let bump: Vec<f64> = (0..n).map(|i| if in_obs[i] { 0.0 } else { 5.0 * rng.next() }).collect();
    let q2: Vec<f64> = q.iter().zip(&bump).map(|(a, b)| a + b).collect();
    let z2: Vec<f64> = z.iter().zip(&bump).map(|(a, b)| a + b).collect();
    let m1 = p.mte(&q, &z).unwrap();
    assert!((p.mte(&q2, &z2).unwrap() - m1).abs() <= 1e-14 * m1);
}

/// Contracting the tensors equals assembling the stiffness with the
/// element-mean perturbation `ū U + f̄ L + v̄ S` on the cloak.
#[test]
fn tensor_contraction_matches_element_mean_stiffness() {
    let mesh = build_square_mesh_cells(4.0, 10).unwrap();
    let tags = tag_regions(&mesh, &RegionSpec::circular([0.1, 0.0], 0.6, 0.7)).unwrap();
    let mut rng = Lcg(9);
    let ctrl = random_control(tags.cloak_nodes().len(), &mut rng);
    let mut slot = vec![usize::MAX; mesh.n_nodes()];
    for (k, &n) in tags.cloak_nodes().iter().enumerate() {
        slot[n] = k;
    }
    let per_element = (0..mesh.n_triangles())
        .map(|e| {
            if !tags.cloak_elems().contains(&e) {
                return [[1.0, 0.0], [0.0, 1.0]];
            }
            let mean = |c: &[f64]| mesh.triangles()[e].iter().map(|&n| c[slot[n]]).sum::<f64>() / 3.0;
            let (u, f, v) = (mean(&ctrl.u), mean(&ctrl.f), mean(&ctrl.v));
            // Shifted by the identity so the assembler sees an SPD matrix.
            [[1.0 + u, v], [v, 1.0 + f]]
        })
        .collect();
    let oracle = assemble_stiffness_on(&mesh, tags.cloak_elems(), &Diffusivity::PerElement(per_element))
        .unwrap()
        .add_scaled(&assemble_stiffness_on(&mesh, tags.cloak_elems(), &Diffusivity::Scalar(1.0)).unwrap(), -1.0)
        .unwrap();
    let mut sum = None;
    for (dir, c) in Direction::ALL.iter().zip(ctrl.components()) {
        let t = ControlTensor::assemble(&mesh, &tags, *dir).unwrap().contract(c).unwrap();
        sum = Some(match sum {
            None => t,
            Some(s) => t.add_scaled(&s, 1.0).unwrap(),
        });
    }
    let diff = sum.unwrap().add_scaled(&oracle, -1.0).unwrap();
    assert!(diff.max_abs() <= 1e-13 * oracle.max_abs());
}

/// `((B p) q)_k = Σ_ij B[i,j,k] p_i q_j` against the explicit entry list.
#[test]
fn bilinear_gradient_matches_explicit_entries() {
    let p = small_problem(0.0);
    let mut rng = Lcg(12);
    let n = p.n_state();
    let a: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    for t in &p.tensors {
        let mut oracle = vec![0.0; p.n_ctrl()];
        for (i, j, k, v) in t.entries() {
            oracle[k] += v * a[i] * b[j];
        }
        let got = t.bilinear_gradient(&a, &b).unwrap();
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() <= 1e-12 * (1.0 + o.abs()));
        }
    }
}

#[test]
fn control_mass_and_stiffness_match_cloak_quadrature() {
    let p = small_problem(0.0);
    let nodes = p.tags().cloak_nodes();
    let mut rng = Lcg(21);
    let x: Vec<f64> = (0..nodes.len()).map(|_| rng.next()).collect();
    let mut full = vec![0.0; p.n_state()];
    for (k, &n) in nodes.iter().enumerate() {
        full[n] = x[k];
    }
    let elems = p.tags().cloak_elems();
    let m = p.control_mass.bilinear(&x, &x);
    assert!((m - l2_inner(p.mesh(), elems, &full, &full)).abs() <= 1e-12 * m);
    let m2 = assemble_mass_on(p.mesh(), elems).unwrap().bilinear(&full, &full);
    assert!((m - m2).abs() <= 1e-12 * m);

    let mut grad2 = 0.0;
    for &e in elems {
        let (area, g) = p1_gradients(p.mesh().vertices(e)).unwrap();
        let tri = p.mesh().triangles()[e];
        let mut gx = [0.0; 2];
        for k in 0..3 {
            gx[0] += full[tri[k]] * g[k][0];
            gx[1] += full[tri[k]] * g[k][1];
        }
        grad2 += area * (gx[0] * gx[0] + gx[1] * gx[1]);
    }
    let a = p.control_stiffness.bilinear(&x, &x);
    assert!((a - grad2).abs() <= 1e-12 * grad2);
}

#[test]
fn regularization_uses_both_seminorms() {
    let p = small_problem(0.0);
    let n = p.n_ctrl();
    let c = ControlField::constant(n, 2.0, 0.0, 0.0);
    // A constant has no gradient, so only the L² part remains.
    let area: f64 = p.tags().cloak_elems().iter().map(|&e| p.mesh().area(e)).sum();
    let expected = 0.5 * p.data.weights.beta * 4.0 * area;
    assert!((p.regularization(&c) - expected).abs() <= 1e-12 * expected);
}
