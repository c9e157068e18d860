//! Problem parameters and the assembled cloak problem.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{
    assemble_load, assemble_mass, assemble_mass_on, assemble_robin, assemble_stiffness,
    assemble_stiffness_on, ControlTensor, DirichletSplit, Diffusivity, Direction,
};
use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::math;
use crate::mesh::TriMesh;
use crate::region::{mask_obstacle, MaskedDomain, RegionTags, Shape};
use crate::sparse::{CsrMatrix, LdltFactor, ProfileSymbolic, TripletBuilder};

/// Regularization weights `(β, β_g)` for `u`, `(ξ, ξ_g)` for `f`, `(γ, γ_g)`
/// for `v`: L² and gradient-seminorm terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub beta: f64,
    pub beta_g: f64,
    pub xi: f64,
    pub xi_g: f64,
    pub gamma: f64,
    pub gamma_g: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { beta: 1e-9, beta_g: 7e-6, xi: 1e-9, xi_g: 7e-6, gamma: 1e-9, gamma_g: 5e-5 }
    }
}

impl Weights {
    /// `(L², gradient)` pairs in `u, f, v` order.
    pub fn pairs(&self) -> [(f64, f64); 3] {
        [(self.beta, self.beta_g), (self.xi, self.xi_g), (self.gamma, self.gamma_g)]
    }
}

/// Sign in front of the Robin boundary mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RobinSign {
    /// Absorbing condition `μ∇q·n + αq = 0`; always coercive.
    #[default]
    Plus,
    /// Literal negative boundary matrix.
    Minus,
}

impl RobinSign {
    pub fn value(self) -> f64 {
        match self {
            RobinSign::Plus => 1.0,
            RobinSign::Minus => -1.0,
        }
    }
}

/// Element-wise constant heat source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub support: Shape,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    /// Background diffusivity (m²/s).
    pub mu: f64,
    pub source: SourceSpec,
    /// Obstacle temperature.
    pub t_obstacle: f64,
    pub alpha: f64,
    pub robin_sign: RobinSign,
    /// Tolerance in the SPD constraints.
    pub epsilon: f64,
    pub weights: Weights,
}

impl ProblemData {
    pub fn with_source(source: SourceSpec) -> Self {
        Self {
            mu: 1.0,
            source,
            t_obstacle: 0.0,
            alpha: 1.0,
            robin_sign: RobinSign::Plus,
            epsilon: 1e-3,
            weights: Weights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let w = self.weights;
        if [w.beta, w.beta_g, w.xi, w.xi_g, w.gamma, w.gamma_g].iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("regularization weights must be non-negative".into()));
        }
        if !self.alpha.is_finite() || !self.t_obstacle.is_finite() || !self.source.magnitude.is_finite() {
            return Err(Error::Config("alpha, obstacle temperature and source must be finite".into()));
        }
        Ok(())
    }
}

/// Slot indices of a cloak element's local 3×3 block in the free-free system
/// pattern; `usize::MAX` where a Dirichlet node is involved.
type BlockSlots = [[usize; 3]; 3];

/// Everything assembled once for a given mesh, region layout and data set.
///
/// Node numbering: the reference mesh for `z`, the masked mesh (restricted
/// numbering) for `q`, `p`, and the control numbering (positions in the
/// cloak node list) for `u, f, v`.
#[derive(Debug, Clone)]
pub struct CloakProblem {
    pub data: ProblemData,
    pub reference_mesh: TriMesh,
    pub reference_tags: RegionTags,
    pub domain: MaskedDomain,
    /// `A + A_r` on the reference mesh.
    pub reference_system: CsrMatrix,
    pub reference_mass: CsrMatrix,
    pub reference_load: Vec<f64>,
    /// `E (A + A_r) Eᵀ`
    pub base_system: CsrMatrix,
    /// `E M Eᵀ`
    pub mass: CsrMatrix,
    /// `E F`
    pub load: Vec<f64>,
    pub obs_mass: CsrMatrix,
    pub obs_area: f64,
    pub control_mass: CsrMatrix,
    pub control_stiffness: CsrMatrix,
    pub tensors: [ControlTensor; 3],
    pub split: DirichletSplit,
    pattern_ff: CsrMatrix,
    base_ff: Vec<f64>,
    mass_ff: Vec<f64>,
    tensor_slots: Vec<BlockSlots>,
    symbolic_ff: ProfileSymbolic,
}

impl CloakProblem {
    pub fn new(mesh: TriMesh, tags: RegionTags, data: ProblemData) -> Result<Self> {
        data.validate()?;
        let domain = mask_obstacle(&mesh, &tags)?;
        let robin_coeff = data.robin_sign.value() * data.alpha;
        let stiff = assemble_stiffness(&mesh, &Diffusivity::Scalar(data.mu))?;
        let reference_system = stiff.add_scaled(&assemble_robin(&mesh, tags.robin_label, robin_coeff)?, 1.0)?;
        let reference_mass = assemble_mass(&mesh)?;
        let reference_load = assemble_load(&mesh, &data.source.support, data.source.magnitude);

        let e = &domain.restriction;
        let base_system = e.restrict_matrix(&reference_system)?;
        let mass = e.restrict_matrix(&reference_mass)?;
        let load = e.restrict(&reference_load)?;

        let sub = &domain.mesh;
        let dtags = &domain.tags;
        let obs_mass = assemble_mass_on(sub, dtags.obs_elems())?;
        let obs_area: f64 = dtags.obs_elems().iter().map(|&k| sub.area(k)).sum();
        let cloak_nodes = dtags.cloak_nodes();
        let control_mass = assemble_mass_on(sub, dtags.cloak_elems())?.submatrix(cloak_nodes, cloak_nodes);
        let control_stiffness = assemble_stiffness_on(sub, dtags.cloak_elems(), &Diffusivity::Scalar(1.0))?
            .submatrix(cloak_nodes, cloak_nodes);
        let tensors = [
            ControlTensor::assemble(sub, dtags, Direction::U)?,
            ControlTensor::assemble(sub, dtags, Direction::L)?,
            ControlTensor::assemble(sub, dtags, Direction::S)?,
        ];
        let split = DirichletSplit::new(sub.n_nodes(), &domain.dirichlet_nodes)?;
        if split.free().is_empty() {
            return Err(Error::Config("no free degrees of freedom".into()));
        }

        // Free-free pattern covering base, mass and every tensor block.
        let n = sub.n_nodes();
        let mut b = TripletBuilder::new(n, n);
        for (i, j, _) in base_system.triplets().chain(mass.triplets()) {
            b.push(i, j, 0.0);
        }
        for el in tensors[0].elements() {
            for a in 0..3 {
                for c in 0..3 {
                    b.push(el.state[a], el.state[c], 0.0);
                }
            }
        }
        let pattern_ff = b.build().submatrix(split.free(), split.free());
        let gather = |m: &CsrMatrix| -> Vec<f64> {
            let mut vals = vec![0.0; pattern_ff.nnz()];
            for (i, j, v) in m.triplets() {
                if let (Some(p), Some(q)) = (split.free_position(i), split.free_position(j)) {
                    vals[pattern_ff.slot(p, q).expect("pattern covers matrix")] += v;
                }
            }
            vals
        };
        let base_ff = gather(&base_system);
        let mass_ff = gather(&mass);
        let tensor_slots = tensors[0]
            .elements()
            .iter()
            .map(|el| {
                let mut s = [[usize::MAX; 3]; 3];
                for a in 0..3 {
                    for c in 0..3 {
                        if let (Some(p), Some(q)) =
                            (split.free_position(el.state[a]), split.free_position(el.state[c]))
                        {
                            s[a][c] = pattern_ff.slot(p, q).expect("pattern covers tensor");
                        }
                    }
                }
                s
            })
            .collect();
        let symbolic_ff = ProfileSymbolic::analyze(&pattern_ff)?;

        Ok(Self {
            data,
            reference_mesh: mesh,
            reference_tags: tags,
            domain,
            reference_system,
            reference_mass,
            reference_load,
            base_system,
            mass,
            load,
            obs_mass,
            obs_area,
            control_mass,
            control_stiffness,
            tensors,
            split,
            pattern_ff,
            base_ff,
            mass_ff,
            tensor_slots,
            symbolic_ff,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.domain.mesh
    }

    pub fn tags(&self) -> &RegionTags {
        &self.domain.tags
    }

    pub fn n_state(&self) -> usize {
        self.domain.mesh.n_nodes()
    }

    pub fn n_ctrl(&self) -> usize {
        self.domain.tags.cloak_nodes().len()
    }

    /// Reference-mesh node of every control degree of freedom.
    pub fn control_reference_nodes(&self) -> Vec<usize> {
        let kept = self.domain.restriction.kept_nodes();
        self.domain.tags.cloak_nodes().iter().map(|&n| kept[n]).collect()
    }

    pub fn check_control(&self, ctrl: &ControlField) -> Result<()> {
        check_len(self.n_ctrl(), ctrl.u.len())?;
        check_len(self.n_ctrl(), ctrl.f.len())?;
        check_len(self.n_ctrl(), ctrl.v.len())?;
        Ok(())
    }

    /// Refuses control fields whose diffusivity is not positive definite at
    /// some node.
    pub fn check_definite(&self, ctrl: &ControlField) -> Result<()> {
        self.check_control(ctrl)?;
        let mu = self.data.mu;
        for k in 0..ctrl.len() {
            let a = mu + ctrl.u[k];
            let c = mu + ctrl.f[k];
            let det = a * c - ctrl.v[k] * ctrl.v[k];
            if !(a + c > 0.0 && det > 0.0) {
                return Err(Error::Infeasible(format!(
                    "diffusivity at control node {k} is not positive definite (trace {}, det {det})",
                    a + c
                )));
            }
        }
        Ok(())
    }

    /// Free-free block of `mass_coeff·M̃ + stiff_coeff·S(ctrl)` where
    /// `S(c) = E(A + A_r)Eᵀ + B_u u + B_f f + B_v v`.
    pub fn system_ff(&self, ctrl: &ControlField, mass_coeff: f64, stiff_coeff: f64) -> Result<CsrMatrix> {
        self.check_control(ctrl)?;
        let mut m = self.pattern_ff.clone();
        let vals = m.values_mut();
        for ((v, b), s) in vals.iter_mut().zip(&self.base_ff).zip(&self.mass_ff) {
            *v = stiff_coeff * b + mass_coeff * s;
        }
        for (tensor, c) in self.tensors.iter().zip(ctrl.components()) {
            for (el, slots) in tensor.elements().iter().zip(&self.tensor_slots) {
                let w = stiff_coeff * (c[el.ctrl[0]] + c[el.ctrl[1]] + c[el.ctrl[2]]);
                if w == 0.0 {
                    continue;
                }
                for a in 0..3 {
                    for b in 0..3 {
                        let s = slots[a][b];
                        if s != usize::MAX {
                            vals[s] += w * el.local[a][b];
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    /// Full masked-mesh system matrix `S(ctrl)`, Dirichlet rows included.
    pub fn system_full(&self, ctrl: &ControlField) -> Result<CsrMatrix> {
        let mut s = self.base_system.clone();
        for (tensor, c) in self.tensors.iter().zip(ctrl.components()) {
            s = s.add_scaled(&tensor.contract(c)?, 1.0)?;
        }
        Ok(s)
    }

    /// `y = S(ctrl) x` on the masked mesh.
    pub fn apply_system(&self, ctrl: &ControlField, x: &[f64]) -> Vec<f64> {
        let mut y = self.base_system.mul_vec(x);
        for (tensor, c) in self.tensors.iter().zip(ctrl.components()) {
            tensor.contract_mul_add(c, x, &mut y);
        }
        y
    }

    /// Factorization sharing the precomputed ordering.
    pub fn factor_ff(&self, m: &CsrMatrix) -> Result<LdltFactor> {
        LdltFactor::with_symbolic(self.symbolic_ff.clone(), m)
    }

    /// `½ Σ (w xᵀ M_u x + w_g xᵀ A_u x)` over the three controls.
    pub fn regularization(&self, ctrl: &ControlField) -> f64 {
        let mut r = 0.0;
        for ((w, wg), x) in self.data.weights.pairs().iter().zip(ctrl.components()) {
            if *w != 0.0 {
                r += 0.5 * w * self.control_mass.bilinear(x, x);
            }
            if *wg != 0.0 {
                r += 0.5 * wg * self.control_stiffness.bilinear(x, x);
            }
        }
        r
    }

    /// Gradient of [`Self::regularization`] scaled by `scale`, added to `out`.
    pub fn regularization_gradient_add(&self, ctrl: &ControlField, scale: f64, out: &mut [f64]) {
        let n = self.n_ctrl();
        for (c, ((w, wg), x)) in self.data.weights.pairs().iter().zip(ctrl.components()).enumerate() {
            let seg = &mut out[c * n..(c + 1) * n];
            if *w != 0.0 {
                for (o, y) in seg.iter_mut().zip(self.control_mass.mul_vec(x)) {
                    *o += scale * w * y;
                }
            }
            if *wg != 0.0 {
                for (o, y) in seg.iter_mut().zip(self.control_stiffness.mul_vec(x)) {
                    *o += scale * wg * y;
                }
            }
        }
    }

    /// `½ (q − E z)ᵀ M_obs (q − E z)` with `ez = E z` already restricted.
    pub fn misfit(&self, q: &[f64], ez: &[f64]) -> f64 {
        let d: Vec<f64> = q.iter().zip(ez).map(|(a, b)| a - b).collect();
        0.5 * self.obs_mass.bilinear(&d, &d)
    }

    /// `M_obs (q − E z)`
    pub fn misfit_gradient(&self, q: &[f64], ez: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = q.iter().zip(ez).map(|(a, b)| a - b).collect();
        self.obs_mass.mul_vec(&d)
    }

    /// Mean tracking error on the observation region.
    pub fn mte(&self, q: &[f64], ez: &[f64]) -> Result<f64> {
        check_len(self.n_state(), q.len())?;
        check_len(self.n_state(), ez.len())?;
        if !(self.obs_area > 0.0) {
            return Err(Error::Domain("observation region has zero area".into()));
        }
        Ok(2.0 * self.misfit(q, ez) / self.obs_area)
    }

    pub fn restrict_reference(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.domain.restriction.restrict(z)
    }

    /// Same geometry and matrices with another source (off-design probing).
    pub fn with_source(&self, source: SourceSpec) -> Result<Self> {
        let mut data = self.data.clone();
        data.source = source;
        Self::new(self.reference_mesh.clone(), self.reference_tags.clone(), data)
    }
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn lambda_min(k: &crate::assembly::Mat2) -> f64 {
    let m = 0.5 * (k[0][0] + k[1][1]);
    let r = math::hypot(0.5 * (k[0][0] - k[1][1]), k[0][1]);
    m - r
}
