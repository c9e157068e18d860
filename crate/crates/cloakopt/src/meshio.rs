//! ASCII mesh and design files.
//!
//! A mesh file is
//!
//! ```text
//! cloakopt-mesh 1
//! nodes <n>
//! <x> <y>                  (n lines)
//! triangles <m>
//! <i> <j> <k> <tag>        (m lines; 0 exterior, 1 obstacle, 2 cloak, 3 observation)
//! edges <b>
//! <i> <j> <label>          (b lines)
//! ```
//!
//! with 0-based indices. A design file starts with `cloakopt-design 1`,
//! repeats the three mesh sections and appends
//!
//! ```text
//! controls <n_ctrl> <n_slices>
//! <node> <u> <f> <v>       (n_ctrl lines per slice, slice after slice)
//! ```
//!
//! Reals are written with 17 significant digits, so a write/read cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use cloakopt_core::{BoundaryEdge, ControlField, Region, RegionTags, TriMesh};

use crate::error::{CliError, ParseError, Result};

pub const MESH_HEADER: &str = "cloakopt-mesh 1";
pub const DESIGN_HEADER: &str = "cloakopt-design 1";

/// Formats a real so that parsing it back yields the same bits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Stored control design: the tagged reference mesh, the mesh node carrying
/// each control entry, and one control field per time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub mesh: TriMesh,
    pub tags: RegionTags,
    pub nodes: Vec<usize>,
    pub slices: Vec<ControlField>,
}

fn write_mesh_sections(out: &mut String, mesh: &TriMesh, tags: &RegionTags) {
    let _ = writeln!(out, "nodes {}", mesh.n_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(out, "{} {}", real(p[0]), real(p[1]));
    }
    let _ = writeln!(out, "triangles {}", mesh.n_triangles());
    for (t, r) in mesh.triangles().iter().zip(tags.element_tags()) {
        let _ = writeln!(out, "{} {} {} {}", t[0], t[1], t[2], r.tag());
    }
    let _ = writeln!(out, "edges {}", mesh.boundary_edges().len());
    for e in mesh.boundary_edges() {
        let _ = writeln!(out, "{} {} {}", e.nodes[0], e.nodes[1], e.label);
    }
}

pub fn mesh_to_string(mesh: &TriMesh, tags: &RegionTags) -> String {
    let mut out = format!("{MESH_HEADER}\n");
    write_mesh_sections(&mut out, mesh, tags);
    out
}

pub fn design_to_string(design: &Design) -> String {
    let mut out = format!("{DESIGN_HEADER}\n");
    write_mesh_sections(&mut out, &design.mesh, &design.tags);
    let n = design.nodes.len();
    let _ = writeln!(out, "controls {} {}", n, design.slices.len());
    for slice in &design.slices {
        for (k, node) in design.nodes.iter().enumerate() {
            let _ = writeln!(out, "{} {} {} {}", node, real(slice.u[k]), real(slice.f[k]), real(slice.v[k]));
        }
    }
    out
}

/// Line cursor that skips blank lines and tracks 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    fn next_fields(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), ParseError> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if !fields.is_empty() {
                return Ok((i + 1, fields));
            }
        }
        Err(ParseError::at(self.last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn header(&mut self, expected: &str) -> Result<(), ParseError> {
        let (line, fields) = self.next_fields("a header")?;
        if fields.join(" ") != expected {
            return Err(ParseError::at(line, format!("expected header `{expected}`")));
        }
        Ok(())
    }

    /// `<name> <count>...` section line; returns the counts.
    fn section(&mut self, name: &str, arity: usize) -> Result<Vec<usize>, ParseError> {
        let (line, f) = self.next_fields(name)?;
        if f.len() != arity + 1 || f[0] != name {
            return Err(ParseError::at(line, format!("expected `{name}` followed by {arity} count(s)")));
        }
        f[1..].iter().map(|s| number(line, s)).collect()
    }

    fn row<T: std::str::FromStr>(&mut self, what: &str, len: usize) -> Result<(usize, Vec<T>), ParseError> {
        let (line, f) = self.next_fields(what)?;
        if f.len() != len {
            return Err(ParseError::at(line, format!("expected {len} values for {what}, found {}", f.len())));
        }
        let vals = f.iter().map(|s| number(line, s)).collect::<Result<Vec<T>, _>>()?;
        Ok((line, vals))
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.next_fields("nothing") {
            Ok((line, _)) => Err(ParseError::at(line, "unexpected trailing content")),
            Err(_) => Ok(()),
        }
    }
}

fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, ParseError> {
    s.parse().map_err(|_| ParseError::at(line, format!("invalid number `{s}`")))
}

fn read_mesh_sections(lines: &mut Lines<'_>) -> Result<(TriMesh, RegionTags), ParseError> {
    let n = lines.section("nodes", 1)?[0];
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, v) = lines.row::<f64>("a node", 2)?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(ParseError::at(line, "node coordinates must be finite"));
        }
        nodes.push([v[0], v[1]]);
    }
    let m = lines.section("triangles", 1)?[0];
    let mut tris = Vec::with_capacity(m);
    let mut regions = Vec::with_capacity(m);
    for _ in 0..m {
        let (line, v) = lines.row::<usize>("a triangle", 4)?;
        let tag = u8::try_from(v[3]).ok().and_then(Region::from_tag);
        let region = tag.ok_or_else(|| ParseError::at(line, format!("unknown region tag {}", v[3])))?;
        tris.push([v[0], v[1], v[2]]);
        regions.push(region);
    }
    let b = lines.section("edges", 1)?[0];
    let mut edges = Vec::with_capacity(b);
    for _ in 0..b {
        let (line, v) = lines.row::<usize>("an edge", 3)?;
        let label = u32::try_from(v[2]).map_err(|_| ParseError::at(line, "edge label out of range"))?;
        edges.push(BoundaryEdge { nodes: [v[0], v[1]], label });
    }
    let at = lines.last;
    let mesh = TriMesh::new(nodes, tris, edges).map_err(|e| ParseError::at(at, e.to_string()))?;
    let tags = RegionTags::from_element_tags(&mesh, regions).map_err(|e| ParseError::at(at, e.to_string()))?;
    Ok((mesh, tags))
}

pub fn parse_mesh(text: &str) -> Result<(TriMesh, RegionTags), ParseError> {
    let mut lines = Lines::new(text);
    lines.header(MESH_HEADER)?;
    let out = read_mesh_sections(&mut lines)?;
    lines.finish()?;
    Ok(out)
}

pub fn parse_design(text: &str) -> Result<Design, ParseError> {
    let mut lines = Lines::new(text);
    lines.header(DESIGN_HEADER)?;
    let (mesh, tags) = read_mesh_sections(&mut lines)?;
    let counts = lines.section("controls", 2)?;
    let (n, s) = (counts[0], counts[1]);
    if s == 0 {
        return Err(ParseError::at(lines.last, "a design needs at least one control slice"));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut slices = Vec::with_capacity(s);
    for j in 0..s {
        let mut c = ControlField::zeros(n);
        for k in 0..n {
            let (line, f) = lines.next_fields("a control row")?;
            if f.len() != 4 {
                return Err(ParseError::at(line, "expected `node u f v`"));
            }
            let node: usize = number(line, f[0])?;
            if node >= mesh.n_nodes() {
                return Err(ParseError::at(line, format!("control node {node} is not a mesh node")));
            }
            if j == 0 {
                nodes.push(node);
            } else if nodes[k] != node {
                return Err(ParseError::at(line, format!("slice {j} lists node {node} where {} was expected", nodes[k])));
            }
            let vals: [f64; 3] = [number(line, f[1])?, number(line, f[2])?, number(line, f[3])?];
            if !vals.iter().all(|x| x.is_finite()) {
                return Err(ParseError::at(line, "control values must be finite"));
            }
            (c.u[k], c.f[k], c.v[k]) = (vals[0], vals[1], vals[2]);
        }
        slices.push(c);
    }
    lines.finish()?;
    Ok(Design { mesh, tags, nodes, slices })
}

pub fn read_mesh(path: &Path) -> Result<(TriMesh, RegionTags)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_mesh(&text).map_err(|e| CliError::parse(path, e))
}

pub fn read_design(path: &Path) -> Result<Design> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_design(&text).map_err(|e| CliError::parse(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}
