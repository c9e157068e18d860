//! Field and report writers: legacy ASCII VTK, flat CSV and key=value text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cloakopt_core::{RegionTags, TriMesh};

use crate::error::Result;
use crate::meshio::{real, write_text};

/// VTK cell type of a linear triangle.
const VTK_TRIANGLE: u8 = 5;

/// Legacy ASCII VTK unstructured grid with one scalar point array per field
/// and, when `tags` is given, the region tag as cell data.
pub fn vtk_string(title: &str, mesh: &TriMesh, tags: Option<&RegionTags>, fields: &[(&str, &[f64])]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", real(p[0]), real(p[1]));
    }
    let m = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {} {}", m, 4 * m);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "{VTK_TRIANGLE}");
    }
    if let Some(tags) = tags {
        let _ = writeln!(s, "CELL_DATA {m}");
        let _ = writeln!(s, "SCALARS region int 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for r in tags.element_tags() {
            let _ = writeln!(s, "{}", r.tag());
        }
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
        for (name, values) in fields {
            assert_eq!(values.len(), mesh.n_nodes(), "field `{name}` does not match the mesh");
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in *values {
                let _ = writeln!(s, "{}", real(*v));
            }
        }
    }
    s
}

/// `node,x,y,value` rows for one nodal field.
pub fn csv_string(mesh: &TriMesh, values: &[f64]) -> String {
    let mut s = String::from("node,x,y,value\n");
    for (i, (p, v)) in mesh.nodes().iter().zip(values).enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", real(p[0]), real(p[1]), real(*v));
    }
    s
}

/// Writes `<stem>.vtk` with every field and `<stem>_<name>.csv` per field.
/// Returns the paths written.
pub fn write_fields(
    dir: &Path,
    stem: &str,
    mesh: &TriMesh,
    tags: Option<&RegionTags>,
    fields: &[(&str, &[f64])],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(fields.len() + 1);
    let vtk = dir.join(format!("{stem}.vtk"));
    write_text(&vtk, &vtk_string(stem, mesh, tags, fields))?;
    written.push(vtk);
    for (name, values) in fields {
        let csv = dir.join(format!("{stem}_{name}.csv"));
        write_text(&csv, &csv_string(mesh, values))?;
        written.push(csv);
    }
    Ok(written)
}

/// Ordered `key=value` report. Reals use 17 significant digits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn real(&mut self, key: &str, value: f64) -> &mut Self {
        self.text(key, &real(value))
    }

    pub fn int(&mut self, key: &str, value: usize) -> &mut Self {
        self.text(key, &value.to_string())
    }

    pub fn text(&mut self, key: &str, value: &str) -> &mut Self {
        debug_assert!(!key.contains('=') && !value.contains('\n'));
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Self { entries }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_string())
    }
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloakopt_core::mesh::build_square_mesh_cells;

    #[test]
    fn vtk_layout() {
        let mesh = build_square_mesh_cells(1.0, 1).unwrap();
        let x: Vec<f64> = mesh.nodes().iter().map(|p| p[0]).collect();
        let s = vtk_string("unit", &mesh, None, &[("x", &x)]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[4], format!("POINTS {} double", mesh.n_nodes()));
        let m = mesh.n_triangles();
        assert!(s.contains(&format!("CELLS {m} {}", 4 * m)));
        assert!(s.contains(&format!("POINT_DATA {}", mesh.n_nodes())));
        let types = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
        assert!(lines[types + 1..types + 1 + m].iter().all(|l| *l == "5"));
    }

    #[test]
    fn csv_rows() {
        let mesh = build_square_mesh_cells(2.0, 1).unwrap();
        let v: Vec<f64> = (0..mesh.n_nodes()).map(|i| i as f64 * 0.5).collect();
        let s = csv_string(&mesh, &v);
        assert_eq!(s.lines().count(), mesh.n_nodes() + 1);
        let row: Vec<&str> = s.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::new();
        r.real("eta", 0.1 + 0.2).int("iterations", 42).text("termination", "converged");
        let back = Report::parse(&r.to_string());
        assert_eq!(back, r);
        assert_eq!(back.get_f64("eta").unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
    }
}
