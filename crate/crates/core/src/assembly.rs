//! P1 assembly: mass, stiffness, Robin and load terms, rank-3 control
//! tensors, and symmetric Dirichlet elimination.
//!
//! Gradients of P1 basis functions are constant per element, so every
//! integral here is evaluated in closed form.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math;
use crate::mesh::{edge_key, Point, TriMesh};
use crate::region::{RegionTags, Shape};
use crate::sparse::{CsrMatrix, TripletBuilder};

pub type Mat2 = [[f64; 2]; 2];

/// Area and basis gradients of a triangle.
pub fn p1_gradients(v: [Point; 3]) -> Result<(f64, [[f64; 2]; 3])> {
    let area = crate::mesh::signed_area(v[0], v[1], v[2]);
    if !(area > 0.0) {
        return Err(Error::Assembly(format!("degenerate triangle with area {area:e}")));
    }
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(v[j][1] - v[k][1]) * inv, (v[k][0] - v[j][0]) * inv];
    }
    Ok((area, g))
}

/// `(area/12)(1 + δ_ij)`
pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

/// `area · ∇φ_iᵀ K ∇φ_j`
pub fn local_stiffness(area: f64, grads: &[[f64; 2]; 3], k: &Mat2) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        let kg = [
            k[0][0] * grads[i][0] + k[0][1] * grads[i][1],
            k[1][0] * grads[i][0] + k[1][1] * grads[i][1],
        ];
        for j in 0..3 {
            a[j][i] = area * (kg[0] * grads[j][0] + kg[1] * grads[j][1]);
        }
    }
    a
}

fn scatter(b: &mut TripletBuilder, tri: [usize; 3], local: &[[f64; 3]; 3]) {
    for a in 0..3 {
        for c in 0..3 {
            b.push(tri[a], tri[c], local[a][c]);
        }
    }
}

pub fn assemble_mass(mesh: &TriMesh) -> Result<CsrMatrix> {
    let all: Vec<usize> = (0..mesh.n_triangles()).collect();
    assemble_mass_on(mesh, &all)
}

/// Mass matrix restricted to the listed elements (full node numbering).
pub fn assemble_mass_on(mesh: &TriMesh, elems: &[usize]) -> Result<CsrMatrix> {
    let n = mesh.n_nodes();
    let mut b = TripletBuilder::with_capacity(n, n, 9 * elems.len());
    for &e in elems {
        let (area, _) = p1_gradients(mesh.vertices(e))?;
        scatter(&mut b, mesh.triangles()[e], &local_mass(area));
    }
    Ok(b.build())
}

/// Diffusivity used by [`assemble_stiffness`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusivity {
    Scalar(f64),
    /// One symmetric positive definite 2×2 matrix per element.
    PerElement(Vec<Mat2>),
}

pub fn is_spd(k: &Mat2) -> bool {
    let sym = (k[0][1] - k[1][0]).abs() <= 1e-12 * (k[0][1].abs() + k[1][0].abs()).max(1.0);
    sym && k[0][0] > 0.0 && k[0][0] * k[1][1] - k[0][1] * k[1][0] > 0.0
}

pub fn assemble_stiffness(mesh: &TriMesh, diffusivity: &Diffusivity) -> Result<CsrMatrix> {
    let all: Vec<usize> = (0..mesh.n_triangles()).collect();
    assemble_stiffness_on(mesh, &all, diffusivity)
}

/// Stiffness matrix over a subset of elements. A per-element diffusivity is
/// indexed by element number, not by position in `elems`.
pub fn assemble_stiffness_on(
    mesh: &TriMesh,
    elems: &[usize],
    diffusivity: &Diffusivity,
) -> Result<CsrMatrix> {
    if let Diffusivity::PerElement(k) = diffusivity {
        check_len(mesh.n_triangles(), k.len())?;
    }
    let n = mesh.n_nodes();
    let mut b = TripletBuilder::with_capacity(n, n, 9 * elems.len());
    for &e in elems {
        let k = match diffusivity {
            Diffusivity::Scalar(mu) => {
                if !(*mu > 0.0) {
                    return Err(Error::Assembly(format!("diffusivity {mu} is not positive")));
                }
                [[*mu, 0.0], [0.0, *mu]]
            }
            Diffusivity::PerElement(k) => {
                if !is_spd(&k[e]) {
                    return Err(Error::Assembly(format!("diffusivity of element {e} is not SPD")));
                }
                k[e]
            }
        };
        let (area, g) = p1_gradients(mesh.vertices(e))?;
        scatter(&mut b, mesh.triangles()[e], &local_stiffness(area, &g, &k));
    }
    Ok(b.build())
}

/// `coefficient · ∫_Γ φ_i φ_j` over edges carrying `label`.
pub fn assemble_robin(mesh: &TriMesh, label: u32, coefficient: f64) -> Result<CsrMatrix> {
    let n = mesh.n_nodes();
    let mut b = TripletBuilder::new(n, n);
    let mut any = false;
    for edge in mesh.boundary_edges().iter().filter(|e| e.label == label) {
        any = true;
        let [i, j] = edge.nodes;
        let (p, q) = (mesh.nodes()[i], mesh.nodes()[j]);
        let len = math::hypot(q[0] - p[0], q[1] - p[1]);
        let d = coefficient * len / 3.0;
        let o = coefficient * len / 6.0;
        b.push(i, i, d);
        b.push(j, j, d);
        b.push(i, j, o);
        b.push(j, i, o);
    }
    if !any {
        return Err(Error::Config(format!("no boundary edge carries label {label}")));
    }
    Ok(b.build())
}

/// Load of an element-wise constant source: `s` on elements whose centroid
/// lies in `support`, distributed with the one-third rule.
pub fn assemble_load(mesh: &TriMesh, support: &Shape, magnitude: f64) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_nodes()];
    if magnitude == 0.0 {
        return f;
    }
    for e in 0..mesh.n_triangles() {
        if support.contains(mesh.centroid(e)) {
            let share = magnitude * mesh.area(e) / 3.0;
            for &n in &mesh.triangles()[e] {
                f[n] += share;
            }
        }
    }
    f
}

/// Area of the elements whose centroid lies in `support`.
pub fn support_area(mesh: &TriMesh, support: &Shape) -> f64 {
    (0..mesh.n_triangles())
        .filter(|&e| support.contains(mesh.centroid(e)))
        .map(|e| mesh.area(e))
        .sum()
}

/// `∫_Γ g φ_i` over edges with `label`, three-point Gauss rule per edge.
/// `g` receives the point and the outward unit normal.
pub fn assemble_boundary_load<G>(mesh: &TriMesh, label: u32, g: G) -> Vec<f64>
where
    G: Fn(Point, Point) -> f64,
{
    let mut third: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for tri in mesh.triangles() {
        for k in 0..3 {
            third.insert(edge_key(tri[k], tri[(k + 1) % 3]), tri[(k + 2) % 3]);
        }
    }
    let gauss = [
        (0.5 - 0.5 * math::sqrt(0.6), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + 0.5 * math::sqrt(0.6), 5.0 / 18.0),
    ];
    let mut f = vec![0.0; mesh.n_nodes()];
    for edge in mesh.boundary_edges().iter().filter(|e| e.label == label) {
        let [i, j] = edge.nodes;
        let (p, q) = (mesh.nodes()[i], mesh.nodes()[j]);
        let len = math::hypot(q[0] - p[0], q[1] - p[1]);
        let mut normal = [(q[1] - p[1]) / len, -(q[0] - p[0]) / len];
        if let Some(&k) = third.get(&edge_key(i, j)) {
            let r = mesh.nodes()[k];
            let inward = [r[0] - p[0], r[1] - p[1]];
            if normal[0] * inward[0] + normal[1] * inward[1] > 0.0 {
                normal = [-normal[0], -normal[1]];
            }
        }
        for (t, w) in gauss {
            let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let val = w * len * g(x, normal);
            f[i] += val * (1.0 - t);
            f[j] += val * t;
        }
    }
    f
}

/// Direction matrix multiplying a control in the diffusivity tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `[[1,0],[0,0]]`, multiplies `u`
    U,
    /// `[[0,0],[0,1]]`, multiplies `f`
    L,
    /// `[[0,1],[1,0]]`, multiplies `v`
    S,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::U, Direction::L, Direction::S];

    pub fn matrix(self) -> Mat2 {
        match self {
            Direction::U => [[1.0, 0.0], [0.0, 0.0]],
            Direction::L => [[0.0, 0.0], [0.0, 1.0]],
            Direction::S => [[0.0, 1.0], [1.0, 0.0]],
        }
    }
}

/// One cloak element's contribution to a control tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorElement {
    pub state: [usize; 3],
    pub ctrl: [usize; 3],
    /// `(area/3) ∇φ_aᵀ D ∇φ_b`; `B[i,j,k]` sums this over elements holding
    /// `k` among their control nodes.
    pub local: [[f64; 3]; 3],
}

/// Rank-3 tensor `B[i,j,k] = ∫_{Ω_c} φ_k (D ∇φ_j)·∇φ_i`.
///
/// Stored element by element: each cloak element contributes the same local
/// slice to each of its three control nodes, so contraction and the
/// `((B p) q)_k` gradient product are single passes over the elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTensor {
    direction: Direction,
    n_state: usize,
    n_ctrl: usize,
    elements: Vec<TensorElement>,
}

impl ControlTensor {
    /// State indices are mesh nodes; control index `k` is the position of the
    /// node in `tags.cloak_nodes()`.
    pub fn assemble(mesh: &TriMesh, tags: &RegionTags, direction: Direction) -> Result<Self> {
        let cloak = tags.cloak_nodes();
        let mut ctrl_of = vec![usize::MAX; mesh.n_nodes()];
        for (k, &n) in cloak.iter().enumerate() {
            ctrl_of[n] = k;
        }
        let d = direction.matrix();
        let mut elements = Vec::with_capacity(tags.cloak_elems().len());
        for &e in tags.cloak_elems() {
            let tri = mesh.triangles()[e];
            let (area, g) = p1_gradients(mesh.vertices(e))?;
            let local = local_stiffness(area / 3.0, &g, &d);
            let ctrl = [ctrl_of[tri[0]], ctrl_of[tri[1]], ctrl_of[tri[2]]];
            elements.push(TensorElement { state: tri, ctrl, local });
        }
        Ok(Self { direction, n_state: mesh.n_nodes(), n_ctrl: cloak.len(), elements })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn elements(&self) -> &[TensorElement] {
        &self.elements
    }

    /// `Σ_k ctrl_k B[:,:,k]`
    pub fn contract(&self, ctrl: &[f64]) -> Result<CsrMatrix> {
        check_len(self.n_ctrl, ctrl.len())?;
        let mut b = TripletBuilder::with_capacity(self.n_state, self.n_state, 9 * self.elements.len());
        for el in &self.elements {
            let w = ctrl[el.ctrl[0]] + ctrl[el.ctrl[1]] + ctrl[el.ctrl[2]];
            for a in 0..3 {
                for c in 0..3 {
                    b.push(el.state[a], el.state[c], w * el.local[a][c]);
                }
            }
        }
        Ok(b.build())
    }

    /// `y += (Σ_k ctrl_k B[:,:,k]) x`
    pub fn contract_mul_add(&self, ctrl: &[f64], x: &[f64], y: &mut [f64]) {
        for el in &self.elements {
            let w = ctrl[el.ctrl[0]] + ctrl[el.ctrl[1]] + ctrl[el.ctrl[2]];
            if w == 0.0 {
                continue;
            }
            for a in 0..3 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += el.local[a][c] * x[el.state[c]];
                }
                y[el.state[a]] += w * s;
            }
        }
    }

    /// `((B p) q)_k = Σ_{i,j} B[i,j,k] p_i q_j`, accumulated with `scale`.
    pub fn bilinear_gradient_add(&self, p: &[f64], q: &[f64], scale: f64, out: &mut [f64]) {
        for el in &self.elements {
            let mut s = 0.0;
            for a in 0..3 {
                let pa = p[el.state[a]];
                if pa == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    s += pa * el.local[a][c] * q[el.state[c]];
                }
            }
            let s = scale * s;
            for &k in &el.ctrl {
                out[k] += s;
            }
        }
    }

    pub fn bilinear_gradient(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_state, p.len())?;
        check_len(self.n_state, q.len())?;
        let mut out = vec![0.0; self.n_ctrl];
        self.bilinear_gradient_add(p, q, 1.0, &mut out);
        Ok(out)
    }

    /// Explicit `(i, j, k, value)` entries grouped by `k`, then `(i, j)`.
    pub fn entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for el in &self.elements {
            for &k in &el.ctrl {
                for a in 0..3 {
                    for c in 0..3 {
                        *acc.entry((k, el.state[a], el.state[c])).or_insert(0.0) += el.local[a][c];
                    }
                }
            }
        }
        acc.into_iter().map(|((k, i, j), v)| (i, j, k, v)).collect()
    }
}

/// Split of the node set into free and Dirichlet nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirichletSplit {
    n: usize,
    free: Vec<usize>,
    fixed: Vec<usize>,
    free_pos: Vec<usize>,
}

impl DirichletSplit {
    pub fn new(n: usize, fixed: &[usize]) -> Result<Self> {
        let mut is_fixed = vec![false; n];
        for &i in fixed {
            if i >= n {
                return Err(Error::InvalidArgument(format!("Dirichlet node {i} out of range")));
            }
            is_fixed[i] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
        let fixed: Vec<usize> = (0..n).filter(|&i| is_fixed[i]).collect();
        let mut free_pos = vec![usize::MAX; n];
        for (p, &i) in free.iter().enumerate() {
            free_pos[i] = p;
        }
        Ok(Self { n, free, fixed, free_pos })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    /// Position of a node among the free nodes.
    pub fn free_position(&self, i: usize) -> Option<usize> {
        let p = self.free_pos[i];
        (p != usize::MAX).then_some(p)
    }

    /// Full vector with `value` on Dirichlet nodes and zero elsewhere.
    pub fn lift(&self, value: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for &i in &self.fixed {
            x[i] = value;
        }
        x
    }

    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }

    /// Re-expands a free-node solution with `value` on Dirichlet nodes.
    pub fn expand(&self, x_free: &[f64], value: f64) -> Vec<f64> {
        let mut x = self.lift(value);
        for (&i, &v) in self.free.iter().zip(x_free) {
            x[i] = v;
        }
        x
    }

    /// `F_o = −A[free, fixed] · value`
    pub fn lifting_rhs(&self, a: &CsrMatrix, value: f64) -> Vec<f64> {
        if value == 0.0 || self.fixed.is_empty() {
            return vec![0.0; self.free.len()];
        }
        let lifted = a.mul_vec(&self.lift(value));
        self.free.iter().map(|&i| -lifted[i]).collect()
    }
}

/// Symmetric elimination: returns `A_ff`, `rhs_f + F_o`, and the split.
pub fn apply_dirichlet(
    a: &CsrMatrix,
    rhs: &[f64],
    nodes: &[usize],
    value: f64,
) -> Result<(CsrMatrix, Vec<f64>, DirichletSplit)> {
    check_len(a.nrows(), rhs.len())?;
    let split = DirichletSplit::new(a.nrows(), nodes)?;
    let a_ff = a.submatrix(split.free(), split.free());
    let f_o = split.lifting_rhs(a, value);
    let b: Vec<f64> = split.free().iter().zip(&f_o).map(|(&i, fo)| rhs[i] + fo).collect();
    Ok((a_ff, b, split))
}
