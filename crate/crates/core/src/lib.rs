//! Passive thermal cloak design by bilinear optimal control of the heat equation.
//!
//! The crate is `no_std` (it needs `alloc`). It covers the numerical pipeline:
//! triangular meshes and region tagging ([`mesh`]), P1 assembly of the
//! matrices and rank-3 control tensors ([`assembly`]), a profile LDLᵀ solver
//! ([`sparse`]), steady and θ-method forward solves ([`forward`]), the
//! discrete adjoint and gradient ([`adjoint`]), a log-barrier interior-point
//! optimizer for the pointwise SPD constraints ([`optimizer`]) and
//! post-processing ([`analysis`]). File formats and the command line live in
//! the `cloakopt` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod adjoint;
pub mod analysis;
pub mod assembly;
pub mod control;
pub mod forward;
pub mod mesh;
pub mod optimizer;
pub mod problem;
pub mod region;
pub mod sparse;

pub use error::{Error, Result};

pub use adjoint::{GradientTriple, SteadyObjective, TransientObjective};
pub use control::{ControlField, TransientControl};
pub use forward::{TimeGrid, Trajectory};
pub use mesh::{BoundaryEdge, ParentMap, Point, RestrictionMap, TriMesh};
pub use optimizer::{Objective, OptimizeOptions, OptimizeReport};
pub use problem::{CloakProblem, ProblemData, RobinSign, SourceSpec, Weights};
pub use region::{MaskedDomain, Region, RegionSpec, RegionTags, Shape};
pub use sparse::{CsrMatrix, LdltFactor};
