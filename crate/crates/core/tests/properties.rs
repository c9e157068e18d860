//! Randomized structural properties.

mod common;

use cloakopt_core::analysis::{eigen_field, prolongate_controls};
use cloakopt_core::mesh::{build_square_mesh_cells, refine_uniform};
use cloakopt_core::problem::lambda_min;
use cloakopt_core::region::tag_regions;
use cloakopt_core::{CloakProblem, ControlField, ProblemData, RegionSpec, RestrictionMap, Shape, SourceSpec};
use proptest::prelude::*;

fn problem() -> CloakProblem {
    let mesh = build_square_mesh_cells(4.0, 8).unwrap();
    let tags = tag_regions(&mesh, &RegionSpec::circular([0.0, 0.0], 0.55, 0.65)).unwrap();
    let data = ProblemData::with_source(SourceSpec { support: Shape::Disk { center: [1.5, 0.0], radius: 0.6 }, magnitude: 100.0 });
    CloakProblem::new(mesh, tags, data).unwrap()
}

/// A feasible `(u, f, v)` triple: `v` is a fraction of the largest admissible value.
fn feasible_node() -> impl Strategy<Value = (f64, f64, f64)> {
    (-0.99f64..3.0, -0.99f64..3.0, -0.999f64..0.999)
        .prop_map(|(u, f, t)| (u, f, t * ((1.0 + u) * (1.0 + f)).sqrt()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contraction_is_linear(a in proptest::collection::vec(-1.0f64..1.0, 28), b in proptest::collection::vec(-1.0f64..1.0, 28), s in -3.0f64..3.0) {
        let p = problem();
        prop_assume!(p.n_ctrl() == 28);
        let t = &p.tensors[2];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let lhs = t.contract(&mix).unwrap();
        let rhs = t.contract(&a).unwrap().add_scaled(&t.contract(&b).unwrap(), s).unwrap();
        prop_assert!(lhs.add_scaled(&rhs, -1.0).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn restriction_times_extension_is_identity(keep in proptest::collection::btree_set(0usize..60, 1..40)) {
        let kept: Vec<usize> = keep.into_iter().collect();
        let e = RestrictionMap::new(kept.clone(), 60).unwrap();
        let em = e.to_matrix();
        let eet = em.matmul(&em.transpose());
        prop_assert_eq!(eet, cloakopt_core::CsrMatrix::identity(kept.len()));
        let y: Vec<f64> = (0..kept.len()).map(|i| i as f64 + 0.5).collect();
        prop_assert_eq!(e.restrict(&e.extend(&y).unwrap()).unwrap(), y);
    }

    #[test]
    fn prolongation_of_feasible_fields_is_definite(nodes in proptest::collection::vec(feasible_node(), 28)) {
        let p = problem();
        prop_assume!(p.n_ctrl() == nodes.len());
        let c = ControlField::new(
            nodes.iter().map(|n| n.0).collect(),
            nodes.iter().map(|n| n.1).collect(),
            nodes.iter().map(|n| n.2).collect(),
        ).unwrap();
        let (fine, parents) = refine_uniform(&p.reference_mesh).unwrap();
        let ftags = p.reference_tags.refine(&fine, &parents).unwrap();
        let pf = CloakProblem::new(fine, ftags, p.data.clone()).unwrap();
        let out = prolongate_controls(&p.reference_mesh, &c, &p.control_reference_nodes(), &parents, &pf.control_reference_nodes()).unwrap();
        for k in 0..out.controls.len() {
            prop_assert!(lambda_min(&out.controls.diffusivity(k, 1.0)) > 0.0);
        }
    }

    #[test]
    fn eigenvalues_match_trace_and_determinant((u, f, v) in feasible_node(), mu in 0.1f64..5.0) {
        let c = ControlField::constant(1, u, f, v);
        let e = eigen_field(&c, mu);
        let k = c.diffusivity(0, mu);
        let tr = k[0][0] + k[1][1];
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        prop_assert!((e.lambda1[0] + e.lambda2[0] - tr).abs() <= 1e-10 * tr.abs().max(1.0));
        prop_assert!((e.lambda1[0] * e.lambda2[0] - det).abs() <= 1e-10 * det.abs().max(1.0));
    }
}
