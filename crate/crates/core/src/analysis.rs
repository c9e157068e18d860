//! Post-processing of designs: eigen-structure of the diffusivity, tracking
//! errors, cloaking efficiency and coarse-to-fine control transfer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{assemble_mass_on, Mat2};
use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::forward::Trajectory;
use crate::math::{atan2, hypot};
use crate::mesh::{ParentMap, TriMesh};
use crate::sparse::CsrMatrix;

/// Below this, `|u − f|` and `|v|` count as an isotropic node.
const ISOTROPY_TOL: f64 = 1e-12;

/// Eigen-decomposition of `K = [[μ+u, v], [v, μ+f]]` at each control node.
/// Angles are in degrees from the horizontal axis, in `(−90, 90]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EigenField {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub angle1: Vec<f64>,
    pub angle2: Vec<f64>,
}

impl EigenField {
    pub fn len(&self) -> usize {
        self.lambda1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda1.is_empty()
    }

    /// Rebuilds `K` at node `k` from the eigenpairs.
    pub fn reconstruct(&self, k: usize) -> Mat2 {
        let t = self.angle1[k].to_radians();
        let (s, c) = (libm::sin(t), libm::cos(t));
        let (l1, l2) = (self.lambda1[k], self.lambda2[k]);
        [
            [l1 * c * c + l2 * s * s, (l1 - l2) * s * c],
            [(l1 - l2) * s * c, l1 * s * s + l2 * c * c],
        ]
    }
}

/// `(λ1, λ2, angle1, angle2)` of a symmetric 2×2 matrix, `λ1 ≥ λ2`.
pub fn eigen_decompose(k: &Mat2) -> (f64, f64, f64, f64) {
    let (a, b, c) = (k[0][0], k[0][1], k[1][1]);
    let m = 0.5 * (a + c);
    let r = hypot(0.5 * (a - c), b);
    let angle1 = if b.abs() < ISOTROPY_TOL && (a - c).abs() < ISOTROPY_TOL {
        0.0
    } else {
        let mut t = 0.5 * atan2(2.0 * b, a - c).to_degrees();
        if t <= -90.0 {
            t += 180.0;
        }
        t
    };
    let angle2 = if angle1 > 0.0 { angle1 - 90.0 } else { angle1 + 90.0 };
    (m + r, m - r, angle1, angle2)
}

pub fn eigen_field(ctrl: &ControlField, mu: f64) -> EigenField {
    let mut out = EigenField::default();
    for k in 0..ctrl.len() {
        let (l1, l2, a1, a2) = eigen_decompose(&ctrl.diffusivity(k, mu));
        out.lambda1.push(l1);
        out.lambda2.push(l2);
        out.angle1.push(a1);
        out.angle2.push(a2);
    }
    out
}

/// Mean tracking error `(q−z)ᵀ M_obs (q−z) / |Ω_obs|` from a precomputed
/// observation mass matrix.
pub fn mte_with(obs_mass: &CsrMatrix, obs_area: f64, q: &[f64], z: &[f64]) -> Result<f64> {
    check_len(obs_mass.nrows(), q.len())?;
    check_len(obs_mass.nrows(), z.len())?;
    if !(obs_area > 0.0) {
        return Err(Error::Domain("observation region has zero area".into()));
    }
    let d: Vec<f64> = q.iter().zip(z).map(|(a, b)| a - b).collect();
    Ok(obs_mass.bilinear(&d, &d) / obs_area)
}

/// Mean tracking error over the elements `obs_elems` of `mesh`.
pub fn mte(mesh: &TriMesh, obs_elems: &[usize], q: &[f64], z: &[f64]) -> Result<f64> {
    let m = assemble_mass_on(mesh, obs_elems)?;
    let area: f64 = obs_elems.iter().map(|&e| mesh.area(e)).sum();
    mte_with(&m, area, q, z)
}

/// Cloaking efficiency `η = |MTE − MTE*| / MTE`.
pub fn efficiency(mte_uncontrolled: f64, mte_optimal: f64) -> Result<f64> {
    if !(mte_uncontrolled > 0.0) {
        return Err(Error::Domain(format!(
            "efficiency undefined for uncontrolled MTE {mte_uncontrolled}"
        )));
    }
    Ok((mte_uncontrolled - mte_optimal).abs() / mte_uncontrolled)
}

fn check_aligned(a: &Trajectory, b: &Trajectory) -> Result<()> {
    check_len(a.len(), b.len())?;
    let aligned = a.times.len() == b.times.len()
        && a.times.iter().zip(&b.times).all(|(s, t)| (s - t).abs() <= 1e-12 * s.abs().max(1.0));
    if !aligned {
        return Err(Error::InvalidArgument("trajectories live on different time grids".into()));
    }
    Ok(())
}

/// Trapezoidal approximation of `∫ ‖a(t) − b(t)‖²_{L²(Ω_obs)} dt`.
pub fn spacetime_norm(obs_mass: &CsrMatrix, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_aligned(a, b)?;
    let mut values = Vec::with_capacity(a.len());
    for (x, y) in a.fields.iter().zip(&b.fields) {
        check_len(obs_mass.nrows(), x.len())?;
        check_len(obs_mass.nrows(), y.len())?;
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        values.push(obs_mass.bilinear(&d, &d));
    }
    let mut total = 0.0;
    for i in 1..values.len() {
        total += 0.5 * (a.times[i] - a.times[i - 1]) * (values[i] + values[i - 1]);
    }
    Ok(total)
}

/// Instantaneous efficiency `η(t_i)` from the MTEs of an uncontrolled and a
/// controlled trajectory against the same reference. Instants where the
/// uncontrolled MTE vanishes (e.g. `t = 0`) are skipped.
pub fn efficiency_series(
    obs_mass: &CsrMatrix,
    obs_area: f64,
    uncontrolled: &Trajectory,
    controlled: &Trajectory,
    reference: &Trajectory,
) -> Result<Vec<(f64, f64)>> {
    check_aligned(uncontrolled, reference)?;
    check_aligned(controlled, reference)?;
    let mut out = Vec::new();
    for i in 0..reference.len() {
        let m0 = mte_with(obs_mass, obs_area, &uncontrolled.fields[i], &reference.fields[i])?;
        if m0 > 0.0 {
            let m1 = mte_with(obs_mass, obs_area, &controlled.fields[i], &reference.fields[i])?;
            out.push((reference.times[i], efficiency(m0, m1)?));
        }
    }
    Ok(out)
}

/// Result of a coarse-to-fine control transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Prolongation {
    pub controls: ControlField,
    /// Fine control nodes that needed values from outside the coarse cloak;
    /// those contributions are taken as zero.
    pub warnings: usize,
}

/// P1 interpolation of nodal controls onto the fine control nodes.
///
/// `coarse_nodes` and `fine_nodes` give the mesh node of each control entry;
/// `parents` comes from refining the coarse mesh.
pub fn prolongate_controls(
    coarse_mesh: &TriMesh,
    coarse: &ControlField,
    coarse_nodes: &[usize],
    parents: &ParentMap,
    fine_nodes: &[usize],
) -> Result<Prolongation> {
    check_len(coarse.len(), coarse_nodes.len())?;
    check_len(coarse_mesh.n_nodes(), parents.n_coarse_nodes)?;
    let mut slot = vec![None; coarse_mesh.n_nodes()];
    for (k, &n) in coarse_nodes.iter().enumerate() {
        let s = slot
            .get_mut(n)
            .ok_or_else(|| Error::InvalidArgument(format!("coarse control node {n} is not a mesh node")))?;
        *s = Some(k);
    }
    let mut out = ControlField::zeros(fine_nodes.len());
    let mut warnings = 0;
    for (i, &node) in fine_nodes.iter().enumerate() {
        let p = parents
            .nodes
            .get(node)
            .ok_or_else(|| Error::InvalidArgument(format!("fine control node {node} has no parent")))?;
        let tri = coarse_mesh.triangles()[p.element];
        let mut outside = false;
        for (w, &c) in p.barycentric.iter().zip(&tri) {
            if *w == 0.0 {
                continue;
            }
            match slot[c] {
                Some(k) => {
                    out.u[i] += w * coarse.u[k];
                    out.f[i] += w * coarse.f[k];
                    out.v[i] += w * coarse.v[k];
                }
                None => outside = true,
            }
        }
        if outside {
            warnings += 1;
        }
    }
    Ok(Prolongation { controls: out, warnings })
}
