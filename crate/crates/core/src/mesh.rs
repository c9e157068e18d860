//! Triangular meshes, the structured square generator, uniform refinement and
//! the node restriction operator used after obstacle masking.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::sparse::{CsrMatrix, TripletBuilder};

pub type Point = [f64; 2];

/// Label of edges on the outer boundary (Robin condition).
pub const OUTER_BOUNDARY: u32 = 1;
/// Label of edges on the obstacle interface (Dirichlet condition).
pub const OBSTACLE_BOUNDARY: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub label: u32,
}

/// Conforming P1 triangulation. Triangles are stored counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn signed_area(p: Point, q: Point, r: Point) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl TriMesh {
    /// Builds a mesh and checks its invariants: indices in range, positive
    /// signed areas, and every boundary edge owned by exactly one triangle.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let n = nodes.len();
        for (e, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("triangle {e} has a node index out of range")));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {e} has non-positive signed area {area:e}"
                )));
            }
        }
        let counts = edge_counts(&triangles);
        for (b, edge) in boundary_edges.iter().enumerate() {
            let [i, j] = edge.nodes;
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidMesh(format!("boundary edge {b} has invalid nodes")));
            }
            if counts.get(&edge_key(i, j)).copied() != Some(1) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {b} ({i}, {j}) does not belong to exactly one triangle"
                )));
            }
        }
        Ok(Self { nodes, triangles, boundary_edges })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, e: usize) -> [Point; 3] {
        let t = self.triangles[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [p, q, r] = self.vertices(e);
        signed_area(p, q, r)
    }

    pub fn centroid(&self, e: usize) -> Point {
        let [p, q, r] = self.vertices(e);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|e| self.area(e)).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                let p = self.nodes[tri[k]];
                let q = self.nodes[tri[(k + 1) % 3]];
                h = h.max(math::hypot(q[0] - p[0], q[1] - p[1]));
            }
        }
        h
    }

    /// Nodes touched by boundary edges carrying `label`, sorted.
    pub fn nodes_with_label(&self, label: u32) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.label == label)
            .flat_map(|e| e.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Element adjacency through shared edges, `None` on the boundary.
    pub fn element_neighbors(&self) -> Vec<[Option<usize>; 3]> {
        let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut out = vec![[None; 3]; self.triangles.len()];
        for (e, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                if let Some(&other) = owner.get(&key) {
                    out[e][k] = Some(other);
                    let otri = self.triangles[other];
                    for m in 0..3 {
                        if edge_key(otri[m], otri[(m + 1) % 3]) == key {
                            out[other][m] = Some(e);
                        }
                    }
                } else {
                    owner.insert(key, e);
                }
            }
        }
        out
    }
}

fn edge_counts(triangles: &[[usize; 3]]) -> BTreeMap<(usize, usize), usize> {
    let mut counts = BTreeMap::new();
    for tri in triangles {
        for k in 0..3 {
            *counts.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0usize) += 1;
        }
    }
    counts
}

/// Structured right-triangle mesh of `[-side/2, side/2]²`.
///
/// `h_max` is the target cell spacing: the square is cut into
/// `ceil(side / h_max)` cells per direction and each cell is split along its
/// rising diagonal. Boundary edges are labelled [`OUTER_BOUNDARY`].
pub fn build_square_mesh(side: f64, h_max: f64) -> Result<TriMesh> {
    if !(side > 0.0) || !(h_max > 0.0) || !side.is_finite() || !h_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "side and h_max must be positive, got side={side}, h_max={h_max}"
        )));
    }
    // Guard against 2.0/1.0000000000000002 rounding up.
    let cells = math::ceil(side / h_max - 1e-9).max(1.0) as usize;
    build_square_mesh_cells(side, cells)
}

/// Same as [`build_square_mesh`] with an explicit number of cells per side.
pub fn build_square_mesh_cells(side: f64, cells: usize) -> Result<TriMesh> {
    if !(side > 0.0) || cells == 0 {
        return Err(Error::InvalidArgument(format!(
            "side must be positive and cells non-zero, got side={side}, cells={cells}"
        )));
    }
    let n = cells;
    let h = side / n as f64;
    let x0 = -0.5 * side;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // Snap the last row/column exactly onto the boundary.
            let x = if i == n { -x0 } else { x0 + h * i as f64 };
            let y = if j == n { -x0 } else { x0 + h * j as f64 };
            nodes.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        edges.push(BoundaryEdge { nodes: [id(i, 0), id(i + 1, 0)], label: OUTER_BOUNDARY });
        edges.push(BoundaryEdge { nodes: [id(n, i), id(n, i + 1)], label: OUTER_BOUNDARY });
        edges.push(BoundaryEdge { nodes: [id(i + 1, n), id(i, n)], label: OUTER_BOUNDARY });
        edges.push(BoundaryEdge { nodes: [id(0, i + 1), id(0, i)], label: OUTER_BOUNDARY });
    }
    TriMesh::new(nodes, triangles, edges)
}

/// Location of a fine node inside the coarse mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeParent {
    pub element: usize,
    pub barycentric: [f64; 3],
}

/// Fine-to-coarse correspondence produced by [`refine_uniform`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParentMap {
    /// One entry per fine node.
    pub nodes: Vec<NodeParent>,
    /// Coarse parent of every fine element.
    pub elements: Vec<usize>,
    /// Number of coarse nodes; fine nodes `0..n_coarse` coincide with them.
    pub n_coarse_nodes: usize,
}

impl ParentMap {
    /// P1 interpolation of a coarse nodal field onto the fine nodes.
    pub fn interpolate(&self, coarse: &TriMesh, field: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len(coarse.n_nodes(), field.len())?;
        Ok(self
            .nodes
            .iter()
            .map(|p| {
                let tri = coarse.triangles()[p.element];
                (0..3).map(|k| p.barycentric[k] * field[tri[k]]).sum()
            })
            .collect())
    }
}

/// Splits every triangle into four through its edge midpoints.
///
/// Coarse nodes keep their indices; midpoint nodes are appended. Boundary
/// edges are halved and keep their labels.
pub fn refine_uniform(mesh: &TriMesh) -> Result<(TriMesh, ParentMap)> {
    let n0 = mesh.n_nodes();
    let mut nodes = mesh.nodes.clone();
    let mut parents: Vec<NodeParent> = Vec::with_capacity(n0 * 4);
    let mut node_seen = vec![false; n0];
    parents.resize(n0, NodeParent { element: 0, barycentric: [0.0; 3] });
    let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    let mut elements = Vec::with_capacity(4 * mesh.n_triangles());

    for (e, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            if !node_seen[tri[k]] {
                node_seen[tri[k]] = true;
                let mut bary = [0.0; 3];
                bary[k] = 1.0;
                parents[tri[k]] = NodeParent { element: e, barycentric: bary };
            }
        }
        let mut mid = [0usize; 3];
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = edge_key(a, b);
            mid[k] = *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                let mut bary = [0.0; 3];
                bary[k] = 0.5;
                bary[(k + 1) % 3] = 0.5;
                parents.push(NodeParent { element: e, barycentric: bary });
                nodes.len() - 1
            });
        }
        let [a, b, c] = *tri;
        let [mab, mbc, mca] = mid;
        triangles.push([a, mab, mca]);
        triangles.push([mab, b, mbc]);
        triangles.push([mca, mbc, c]);
        triangles.push([mab, mbc, mca]);
        elements.extend_from_slice(&[e; 4]);
    }
    if node_seen.iter().any(|s| !s) {
        return Err(Error::InvalidMesh("mesh has nodes not used by any triangle".into()));
    }

    let mut edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for edge in &mesh.boundary_edges {
        let [a, b] = edge.nodes;
        let m = midpoint[&edge_key(a, b)];
        edges.push(BoundaryEdge { nodes: [a, m], label: edge.label });
        edges.push(BoundaryEdge { nodes: [m, b], label: edge.label });
    }
    let fine = TriMesh::new(nodes, triangles, edges)?;
    Ok((fine, ParentMap { nodes: parents, elements, n_coarse_nodes: n0 }))
}

/// Selection operator `E` from reference-mesh nodes to the retained nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictionMap {
    kept_nodes: Vec<usize>,
    n_ref: usize,
    position: Vec<Option<usize>>,
}

impl RestrictionMap {
    pub fn new(mut kept_nodes: Vec<usize>, n_ref: usize) -> Result<Self> {
        kept_nodes.sort_unstable();
        let before = kept_nodes.len();
        kept_nodes.dedup();
        if kept_nodes.len() != before {
            return Err(Error::InvalidArgument("restriction has repeated nodes".into()));
        }
        if kept_nodes.last().is_some_and(|&k| k >= n_ref) {
            return Err(Error::InvalidArgument("restriction node out of range".into()));
        }
        let mut position = vec![None; n_ref];
        for (i, &k) in kept_nodes.iter().enumerate() {
            position[k] = Some(i);
        }
        Ok(Self { kept_nodes, n_ref, position })
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect(), n).expect("identity restriction")
    }

    pub fn kept_nodes(&self) -> &[usize] {
        &self.kept_nodes
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn n_ocp(&self) -> usize {
        self.kept_nodes.len()
    }

    /// Position of a reference node in the restricted numbering.
    pub fn position(&self, reference_node: usize) -> Option<usize> {
        self.position.get(reference_node).copied().flatten()
    }

    /// `E x`
    pub fn restrict(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len(self.n_ref, x.len())?;
        Ok(self.kept_nodes.iter().map(|&k| x[k]).collect())
    }

    /// `Eᵀ y`, zero on dropped nodes.
    pub fn extend(&self, y: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len(self.n_ocp(), y.len())?;
        let mut out = vec![0.0; self.n_ref];
        for (&k, &v) in self.kept_nodes.iter().zip(y) {
            out[k] = v;
        }
        Ok(out)
    }

    /// `E A Eᵀ`
    pub fn restrict_matrix(&self, a: &CsrMatrix) -> Result<CsrMatrix> {
        crate::error::check_len(self.n_ref, a.nrows())?;
        crate::error::check_len(self.n_ref, a.ncols())?;
        let mut b = TripletBuilder::new(self.n_ocp(), self.n_ocp());
        for (i, &r) in self.kept_nodes.iter().enumerate() {
            for (c, v) in a.row(r) {
                if let Some(j) = self.position[c] {
                    b.push(i, j, v);
                }
            }
        }
        Ok(b.build())
    }

    /// The selection matrix itself, `n_ocp × n_ref`.
    pub fn to_matrix(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n_ocp(), self.n_ref);
        for (i, &k) in self.kept_nodes.iter().enumerate() {
            b.push(i, k, 1.0);
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_square() {
        let m = build_square_mesh(2.0, 2.0).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.boundary_edges().len(), 4);
        assert!((m.total_area() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn one_refinement_of_square() {
        let m = build_square_mesh(2.0, 1.05).unwrap();
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.n_nodes(), 9);
    }

    #[test]
    fn coarse_layout_element_count() {
        let m = build_square_mesh(4.0, 0.1232).unwrap();
        let n = m.n_triangles() as f64;
        assert!((2320.0 / 2.0..=2320.0 * 2.0).contains(&n), "{n}");
    }

    #[test]
    fn rejects_non_positive_arguments() {
        assert!(matches!(build_square_mesh(0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_square_mesh(1.0, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_clockwise_triangle() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(TriMesh::new(nodes.clone(), vec![[0, 2, 1]], vec![]).is_err());
        assert!(TriMesh::new(nodes, vec![[0, 1, 3]], vec![]).is_err());
    }

    #[test]
    fn rejects_interior_edge_marked_as_boundary() {
        let m = build_square_mesh(2.0, 2.0).unwrap();
        let diag = BoundaryEdge { nodes: [0, 3], label: OUTER_BOUNDARY };
        let mut edges = m.boundary_edges().to_vec();
        edges.push(diag);
        assert!(TriMesh::new(m.nodes().to_vec(), m.triangles().to_vec(), edges).is_err());
    }

    #[test]
    fn refine_two_triangles() {
        let m = build_square_mesh(2.0, 2.0).unwrap();
        let (f, map) = refine_uniform(&m).unwrap();
        assert_eq!(f.n_triangles(), 8);
        assert_eq!(f.n_nodes(), 9);
        assert_eq!(f.boundary_edges().len(), 8);
        assert_eq!(map.elements.len(), 8);
        assert!((f.max_edge_length() - 0.5 * m.max_edge_length()).abs() < 1e-14);
    }

    #[test]
    fn refinement_reproduces_linears() {
        let m = build_square_mesh(3.0, 0.7).unwrap();
        let (f, map) = refine_uniform(&m).unwrap();
        let lin = |p: &Point| 2.0 * p[0] - 0.5 * p[1] + 1.25;
        let coarse: Vec<f64> = m.nodes().iter().map(lin).collect();
        let fine = map.interpolate(&m, &coarse).unwrap();
        for (p, v) in f.nodes().iter().zip(&fine) {
            assert!((lin(p) - v).abs() < 1e-13);
        }
    }

    #[test]
    fn restriction_identities() {
        let e = RestrictionMap::new(vec![4, 0, 2], 6).unwrap();
        assert_eq!(e.kept_nodes(), &[0, 2, 4]);
        let y = [1.0, 2.0, 3.0];
        assert_eq!(e.restrict(&e.extend(&y).unwrap()).unwrap(), y.to_vec());
        let em = e.to_matrix();
        let eet = em.matmul(&em.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(eet.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(RestrictionMap::new(vec![1, 1], 3).is_err());
        assert!(RestrictionMap::new(vec![3], 3).is_err());
    }
}
