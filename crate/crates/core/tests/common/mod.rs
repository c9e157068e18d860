#![allow(dead_code)]

use cloakopt_core::mesh::build_square_mesh_cells;
use cloakopt_core::region::tag_regions;
use cloakopt_core::{CloakProblem, ControlField, ProblemData, RegionSpec, Shape, SourceSpec};

/// Desk-scale circular layout: 81 nodes, a handful of control nodes.
pub fn small_problem(t_obstacle: f64) -> CloakProblem {
    let mesh = build_square_mesh_cells(4.0, 8).unwrap();
    let tags = tag_regions(&mesh, &RegionSpec::circular([0.0, 0.0], 0.55, 0.65)).unwrap();
    let mut data = ProblemData::with_source(SourceSpec {
        support: Shape::Disk { center: [1.5, 0.25], radius: 0.6 },
        magnitude: 100.0,
    });
    data.t_obstacle = t_obstacle;
    CloakProblem::new(mesh, tags, data).unwrap()
}

/// Deterministic pseudo-random numbers in `[-1, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

/// A strictly feasible, non-trivial control field.
pub fn random_control(n: usize, rng: &mut Lcg) -> ControlField {
    let mut c = ControlField::zeros(n);
    for k in 0..n {
        c.u[k] = 0.3 * rng.next();
        c.f[k] = 0.3 * rng.next();
        c.v[k] = 0.2 * rng.next();
    }
    c
}
