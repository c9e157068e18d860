//! Region classification (obstacle, cloak, observation) and obstacle masking.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mesh::{edge_key, BoundaryEdge, ParentMap, Point, RestrictionMap, TriMesh};
use crate::mesh::{OBSTACLE_BOUNDARY, OUTER_BOUNDARY};

/// Element tag. The discriminants are the tags of the ASCII mesh format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Region {
    Exterior = 0,
    Obstacle = 1,
    Cloak = 2,
    Observation = 3,
}

impl Region {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Exterior),
            1 => Some(Self::Obstacle),
            2 => Some(Self::Cloak),
            3 => Some(Self::Observation),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

/// Planar point-set predicate evaluated at element centroids.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Empty,
    All,
    /// `|x − c| ≤ r`
    Disk { center: Point, radius: f64 },
    /// `inner < |x − c| ≤ outer`
    Annulus { center: Point, inner: f64, outer: f64 },
    /// Closed axis-aligned box.
    Rect { min: Point, max: Point },
    /// Simple polygon, even-odd rule.
    Polygon(Vec<Point>),
    /// Points outside the polygon within `width` of its boundary.
    Offset { polygon: Vec<Point>, width: f64 },
    Not(Box<Shape>),
    And(Vec<Shape>),
    Or(Vec<Shape>),
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    math::hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy)
}

/// Distance from `p` to the boundary of a closed polygon.
pub fn distance_to_polygon(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| distance_to_segment(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

impl Shape {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Shape::Empty => false,
            Shape::All => true,
            Shape::Disk { center, radius } => {
                math::hypot(p[0] - center[0], p[1] - center[1]) <= *radius
            }
            Shape::Annulus { center, inner, outer } => {
                let r = math::hypot(p[0] - center[0], p[1] - center[1]);
                r > *inner && r <= *outer
            }
            Shape::Rect { min, max } => {
                p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1]
            }
            Shape::Polygon(poly) => point_in_polygon(p, poly),
            Shape::Offset { polygon, width } => {
                !point_in_polygon(p, polygon) && distance_to_polygon(p, polygon) <= *width
            }
            Shape::Not(s) => !s.contains(p),
            Shape::And(v) => v.iter().all(|s| s.contains(p)),
            Shape::Or(v) => v.iter().any(|s| s.contains(p)),
        }
    }
}

/// Predicates for the three tagged regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub obstacle: Shape,
    pub cloak: Shape,
    pub observation: Shape,
}

impl RegionSpec {
    /// Disk obstacle, annular cloak of thickness `cloak_thickness`, and
    /// observation everywhere outside the cloak.
    pub fn circular(center: Point, obstacle_radius: f64, cloak_thickness: f64) -> Self {
        let outer = obstacle_radius + cloak_thickness;
        Self {
            obstacle: Shape::Disk { center, radius: obstacle_radius },
            cloak: Shape::Annulus { center, inner: obstacle_radius, outer },
            observation: Shape::Not(Box::new(Shape::Disk { center, radius: outer })),
        }
    }

    /// Polygonal obstacle, cloak in a band of `width` around it, observation
    /// outside the band.
    pub fn polygon_offset(polygon: Vec<Point>, width: f64) -> Self {
        Self {
            obstacle: Shape::Polygon(polygon.clone()),
            cloak: Shape::Offset { polygon: polygon.clone(), width },
            observation: Shape::And(vec![
                Shape::Not(Box::new(Shape::Polygon(polygon.clone()))),
                Shape::Not(Box::new(Shape::Offset { polygon, width })),
            ]),
        }
    }
}

/// Element classification plus the derived sets used by assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTags {
    element_tags: Vec<Region>,
    obstacle_elems: Vec<usize>,
    cloak_elems: Vec<usize>,
    obs_elems: Vec<usize>,
    cloak_nodes: Vec<usize>,
    pub dirichlet_label: u32,
    pub robin_label: u32,
}

impl RegionTags {
    /// Builds the tag sets from per-element tags. Cloak and observation sets
    /// must be non-empty.
    pub fn from_element_tags(mesh: &TriMesh, element_tags: Vec<Region>) -> Result<Self> {
        let tags = Self::from_element_tags_unchecked(mesh, element_tags)?;
        if tags.cloak_elems.is_empty() {
            return Err(Error::Config("cloak region contains no element".into()));
        }
        if tags.obs_elems.is_empty() {
            return Err(Error::Config("observation region contains no element".into()));
        }
        Ok(tags)
    }

    fn from_element_tags_unchecked(mesh: &TriMesh, element_tags: Vec<Region>) -> Result<Self> {
        crate::error::check_len(mesh.n_triangles(), element_tags.len())?;
        let pick = |r: Region| -> Vec<usize> {
            element_tags
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == r)
                .map(|(e, _)| e)
                .collect()
        };
        let obstacle_elems = pick(Region::Obstacle);
        let cloak_elems = pick(Region::Cloak);
        let obs_elems = pick(Region::Observation);
        let mut cloak_nodes: Vec<usize> = cloak_elems
            .iter()
            .flat_map(|&e| mesh.triangles()[e])
            .collect();
        cloak_nodes.sort_unstable();
        cloak_nodes.dedup();
        Ok(Self {
            element_tags,
            obstacle_elems,
            cloak_elems,
            obs_elems,
            cloak_nodes,
            dirichlet_label: OBSTACLE_BOUNDARY,
            robin_label: OUTER_BOUNDARY,
        })
    }

    pub fn element_tags(&self) -> &[Region] {
        &self.element_tags
    }

    pub fn tag(&self, e: usize) -> Region {
        self.element_tags[e]
    }

    pub fn obstacle_elems(&self) -> &[usize] {
        &self.obstacle_elems
    }

    pub fn cloak_elems(&self) -> &[usize] {
        &self.cloak_elems
    }

    pub fn obs_elems(&self) -> &[usize] {
        &self.obs_elems
    }

    /// Control degrees of freedom: every node of a cloak element, sorted.
    pub fn cloak_nodes(&self) -> &[usize] {
        &self.cloak_nodes
    }

    /// Tags of the uniformly refined mesh; children inherit the parent tag.
    pub fn refine(&self, fine: &TriMesh, parents: &ParentMap) -> Result<Self> {
        let tags = parents.elements.iter().map(|&p| self.element_tags[p]).collect();
        let mut out = Self::from_element_tags_unchecked(fine, tags)?;
        out.dirichlet_label = self.dirichlet_label;
        out.robin_label = self.robin_label;
        Ok(out)
    }

    /// Whether the cloak elements form one edge-connected component.
    pub fn cloak_is_connected(&self, mesh: &TriMesh) -> bool {
        is_edge_connected(mesh, &self.cloak_elems)
    }
}

/// Breadth-first search over elements sharing an edge.
pub fn is_edge_connected(mesh: &TriMesh, elems: &[usize]) -> bool {
    let Some(&start) = elems.first() else {
        return false;
    };
    let member: BTreeSet<usize> = elems.iter().copied().collect();
    let nbrs = mesh.element_neighbors();
    let mut seen = BTreeSet::new();
    seen.insert(start);
    let mut queue = VecDeque::from([start]);
    while let Some(e) = queue.pop_front() {
        for n in nbrs[e].iter().flatten() {
            if member.contains(n) && seen.insert(*n) {
                queue.push_back(*n);
            }
        }
    }
    seen.len() == member.len()
}

/// Classifies every element by its centroid.
pub fn tag_regions(mesh: &TriMesh, spec: &RegionSpec) -> Result<RegionTags> {
    let mut tags = Vec::with_capacity(mesh.n_triangles());
    for e in 0..mesh.n_triangles() {
        let c = mesh.centroid(e);
        let hits = [
            (Region::Obstacle, spec.obstacle.contains(c)),
            (Region::Cloak, spec.cloak.contains(c)),
            (Region::Observation, spec.observation.contains(c)),
        ];
        let mut chosen = Region::Exterior;
        for (r, hit) in hits {
            if hit {
                if chosen != Region::Exterior {
                    return Err(Error::Config(format!(
                        "region predicates overlap at element {e} (centroid {c:?}): {chosen:?} and {r:?}"
                    )));
                }
                chosen = r;
            }
        }
        tags.push(chosen);
    }
    RegionTags::from_element_tags(mesh, tags)
}

/// The computational domain `Ω = Ω_un \ Θ` with its numbering.
#[derive(Debug, Clone)]
pub struct MaskedDomain {
    pub mesh: TriMesh,
    pub restriction: RestrictionMap,
    /// Tags on the masked mesh (no obstacle elements left).
    pub tags: RegionTags,
    /// Reference element of every masked element.
    pub element_map: Vec<usize>,
    /// Masked-mesh nodes on the obstacle interface, sorted.
    pub dirichlet_nodes: Vec<usize>,
}

/// Removes obstacle elements and strictly interior obstacle nodes. Interface
/// nodes are kept and become Dirichlet nodes; interface edges get the
/// Dirichlet label.
pub fn mask_obstacle(mesh: &TriMesh, tags: &RegionTags) -> Result<MaskedDomain> {
    crate::error::check_len(mesh.n_triangles(), tags.element_tags.len())?;
    let is_obstacle = |e: usize| tags.element_tags[e] == Region::Obstacle;

    let outer: BTreeSet<usize> = mesh
        .boundary_edges()
        .iter()
        .filter(|e| e.label != tags.dirichlet_label)
        .flat_map(|e| e.nodes)
        .collect();
    for &e in &tags.obstacle_elems {
        if mesh.triangles()[e].iter().any(|n| outer.contains(n)) {
            return Err(Error::UnsupportedTopology(format!(
                "obstacle element {e} touches the outer boundary"
            )));
        }
    }

    let n_ref = mesh.n_nodes();
    let mut kept = vec![false; n_ref];
    let mut touches_obstacle = vec![false; n_ref];
    for (e, tri) in mesh.triangles().iter().enumerate() {
        for &n in tri {
            if is_obstacle(e) {
                touches_obstacle[n] = true;
            } else {
                kept[n] = true;
            }
        }
    }
    let kept_nodes: Vec<usize> = (0..n_ref).filter(|&n| kept[n]).collect();
    let restriction = RestrictionMap::new(kept_nodes, n_ref)?;
    let pos = |n: usize| restriction.position(n).expect("kept node");

    let mut triangles = Vec::new();
    let mut element_map = Vec::new();
    let mut sub_tags = Vec::new();
    let mut edge_owner: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (e, tri) in mesh.triangles().iter().enumerate() {
        if is_obstacle(e) {
            continue;
        }
        for k in 0..3 {
            edge_owner.insert(edge_key(tri[k], tri[(k + 1) % 3]), (tri[k], tri[(k + 1) % 3]));
        }
        triangles.push([pos(tri[0]), pos(tri[1]), pos(tri[2])]);
        element_map.push(e);
        sub_tags.push(tags.element_tags[e]);
    }

    let mut edges: Vec<BoundaryEdge> = mesh
        .boundary_edges()
        .iter()
        .filter(|e| e.label != tags.dirichlet_label)
        .map(|e| BoundaryEdge { nodes: [pos(e.nodes[0]), pos(e.nodes[1])], label: e.label })
        .collect();
    let mut interface = BTreeSet::new();
    for &e in &tags.obstacle_elems {
        let tri = mesh.triangles()[e];
        for k in 0..3 {
            let key = edge_key(tri[k], tri[(k + 1) % 3]);
            if let Some(&(a, b)) = edge_owner.get(&key) {
                if interface.insert(key) {
                    edges.push(BoundaryEdge { nodes: [pos(a), pos(b)], label: tags.dirichlet_label });
                }
            }
        }
    }
    let sub = TriMesh::new(restriction.kept_nodes().iter().map(|&n| mesh.nodes()[n]).collect(), triangles, edges)?;
    let dirichlet_nodes: Vec<usize> = restriction
        .kept_nodes()
        .iter()
        .enumerate()
        .filter(|(_, &n)| touches_obstacle[n])
        .map(|(i, _)| i)
        .collect();
    let mut sub_region = RegionTags::from_element_tags_unchecked(&sub, sub_tags)?;
    sub_region.dirichlet_label = tags.dirichlet_label;
    sub_region.robin_label = tags.robin_label;
    Ok(MaskedDomain { mesh: sub, restriction, tags: sub_region, element_map, dirichlet_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_square_mesh, build_square_mesh_cells};

    #[test]
    fn disk_and_annulus_membership() {
        let spec = RegionSpec::circular([0.0, 0.0], 0.3, 0.2);
        assert!(spec.obstacle.contains([0.1, 0.1]));
        assert!(spec.cloak.contains([0.4, 0.0]));
        assert!(!spec.cloak.contains([0.3, 0.0]));
        assert!(spec.cloak.contains([0.5, 0.0]));
        assert!(spec.observation.contains([0.6, 0.0]));
        assert!(!spec.observation.contains([0.5, 0.0]));
    }

    #[test]
    fn empty_cloak_is_a_config_error() {
        let m = build_square_mesh(4.0, 0.5).unwrap();
        let spec = RegionSpec {
            obstacle: Shape::Empty,
            cloak: Shape::Empty,
            observation: Shape::All,
        };
        assert!(matches!(tag_regions(&m, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_predicates_rejected() {
        let m = build_square_mesh(4.0, 0.5).unwrap();
        let spec = RegionSpec {
            obstacle: Shape::Empty,
            cloak: Shape::All,
            observation: Shape::All,
        };
        assert!(matches!(tag_regions(&m, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn empty_obstacle_masks_nothing() {
        let m = build_square_mesh(4.0, 0.5).unwrap();
        let spec = RegionSpec {
            obstacle: Shape::Empty,
            cloak: Shape::Disk { center: [0.0, 0.0], radius: 0.8 },
            observation: Shape::Not(Box::new(Shape::Disk { center: [0.0, 0.0], radius: 0.8 })),
        };
        let tags = tag_regions(&m, &spec).unwrap();
        let d = mask_obstacle(&m, &tags).unwrap();
        assert_eq!(d.mesh, m);
        assert_eq!(d.restriction, RestrictionMap::identity(m.n_nodes()));
        assert!(d.dirichlet_nodes.is_empty());
    }

    #[test]
    fn obstacle_touching_outer_boundary_is_unsupported() {
        // On the 2×2-cell square every element touches the outer boundary.
        let m = build_square_mesh(2.0, 1.05).unwrap();
        let mut t = vec![Region::Observation; m.n_triangles()];
        t[0] = Region::Obstacle;
        t[1] = Region::Cloak;
        let tags = RegionTags::from_element_tags(&m, t).unwrap();
        assert!(matches!(mask_obstacle(&m, &tags), Err(Error::UnsupportedTopology(_))));
    }

    #[test]
    fn node_star_obstacle_drops_only_the_centre() {
        let m = build_square_mesh_cells(4.0, 4).unwrap();
        let centre = m.nodes().iter().position(|p| p[0] == 0.0 && p[1] == 0.0).unwrap();
        let t: Vec<Region> = (0..m.n_triangles())
            .map(|e| {
                if m.triangles()[e].contains(&centre) {
                    Region::Obstacle
                } else if m.centroid(e)[0] > 0.0 {
                    Region::Cloak
                } else {
                    Region::Observation
                }
            })
            .collect();
        let tags = RegionTags::from_element_tags(&m, t).unwrap();
        let d = mask_obstacle(&m, &tags).unwrap();
        assert_eq!(d.restriction.n_ocp(), m.n_nodes() - 1);
        assert_eq!(d.dirichlet_nodes.len(), 6);
        assert_eq!(d.mesh.n_triangles(), m.n_triangles() - 6);
        assert_eq!(d.mesh.nodes_with_label(OBSTACLE_BOUNDARY).len(), 6);
        assert!((d.mesh.total_area() - (16.0 - 6.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn polygon_predicates() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(Shape::Polygon(sq.clone()).contains([0.5, 0.5]));
        assert!(!Shape::Polygon(sq.clone()).contains([1.5, 0.5]));
        let band = Shape::Offset { polygon: sq, width: 0.2 };
        assert!(band.contains([1.1, 0.5]));
        assert!(!band.contains([0.9, 0.5]));
        assert!(!band.contains([1.3, 0.5]));
    }
}
