//! Legacy ASCII VTK unstructured-grid files.
//!
//! A mesh is stored as two files: the volume grid (hexahedra, cell type 12)
//! and a boundary-surface grid (quads, cell type 9) next to it carrying the
//! surface tags as CELL_DATA. Node fields are POINT_DATA arrays appended to
//! a volume grid. Coordinates are written with 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Mesh, SurfaceTag, Vec3};
use crate::error::{Error, Result};

const HEXAHEDRON: i64 = 12;
const QUAD: i64 = 9;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Scalar(Vec<f64>),
    Vector(Vec<Vec3>),
}

impl FieldData {
    pub fn len(&self) -> usize {
        match self {
            FieldData::Scalar(v) => v.len(),
            FieldData::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `heart.vtk` -> `heart.surface.vtk`.
pub fn surface_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.surface.vtk"))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn header(out: &mut String, title: &str) {
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title);
    out.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
}

fn points(out: &mut String, nodes: &[Vec3]) {
    let _ = writeln!(out, "POINTS {} double", nodes.len());
    for p in nodes {
        let _ = writeln!(out, "{} {} {}", num(p.x), num(p.y), num(p.z));
    }
}

fn volume_text(mesh: &Mesh) -> String {
    let mut out = String::new();
    header(&mut out, &format!("hexahedral mesh h={}", num(mesh.characteristic_size())));
    points(&mut out, mesh.nodes());
    let ne = mesh.element_count();
    let _ = writeln!(out, "CELLS {ne} {}", ne * 9);
    for e in mesh.elements() {
        let _ = writeln!(
            out,
            "8 {}",
            e.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
        );
    }
    let _ = writeln!(out, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(out, "{HEXAHEDRON}");
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    write_file(path, &volume_text(mesh))?;

    let mut out = String::new();
    header(&mut out, "boundary surface");
    points(&mut out, mesh.nodes());
    let nf = mesh.boundary().len();
    let _ = writeln!(out, "CELLS {nf} {}", nf * 5);
    for f in mesh.boundary() {
        let _ = writeln!(out, "4 {} {} {} {}", f.nodes[0], f.nodes[1], f.nodes[2], f.nodes[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nf}");
    for _ in 0..nf {
        let _ = writeln!(out, "{QUAD}");
    }
    let _ = writeln!(out, "CELL_DATA {nf}");
    out.push_str("SCALARS surface_tag int 1\nLOOKUP_TABLE default\n");
    for f in mesh.boundary() {
        let _ = writeln!(out, "{}", f.tag.code());
    }
    write_file(&surface_path(path), &out)
}

/// Writes the volume grid with the given POINT_DATA arrays.
pub fn write_fields(path: &Path, mesh: &Mesh, fields: &[(&str, FieldData)]) -> Result<()> {
    let mut out = volume_text(mesh);
    let n = mesh.node_count();
    let _ = writeln!(out, "POINT_DATA {n}");
    for (name, data) in fields {
        if data.len() != n {
            return Err(Error::invalid(format!(
                "field {name} has {} values for {n} nodes",
                data.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("field name {name:?} must be a single word")));
        }
        match data {
            FieldData::Scalar(v) => {
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(out, "{}", num(*x));
                }
            }
            FieldData::Vector(v) => {
                let _ = writeln!(out, "VECTORS {name} double");
                for p in v {
                    let _ = writeln!(out, "{} {} {}", num(p.x), num(p.y), num(p.z));
                }
            }
        }
    }
    write_file(path, &out)
}

struct Tokens<'a> {
    path: &'a Path,
    items: Vec<(&'a str, usize)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                items.push((tok, i + 1));
            }
        }
        Tokens { path, items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map(|t| t.1)
            .unwrap_or(1)
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<(&'a str, usize)> {
        let t = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.line(), "unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.0)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (tok, line) = self.next()?;
        if tok.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(self.err(line, format!("expected {word}, found {tok:?}")))
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (tok, line) = self.next()?;
        tok.parse()
            .map_err(|_| self.err(line, format!("expected {what}, found {tok:?}")))
    }
}

#[derive(Debug, Default)]
struct Document {
    title: String,
    points: Vec<Vec3>,
    cells: Vec<Vec<usize>>,
    cell_types: Vec<i64>,
    cells_line: usize,
    point_data: Vec<(String, FieldData)>,
    cell_data: Vec<(String, Vec<f64>)>,
}

fn parse_document(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if !first.starts_with("# vtk DataFile") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing '# vtk DataFile' header".into(),
        });
    }
    let title = lines.next().unwrap_or("").to_string();
    let body_start = text
        .match_indices('\n')
        .nth(1)
        .map(|(i, _)| i + 1)
        .unwrap_or(text.len());
    let mut toks = Tokens::new(path, &text[body_start..]);
    for item in &mut toks.items {
        item.1 += 2;
    }
    toks.expect("ASCII")?;
    toks.expect("DATASET")?;
    toks.expect("UNSTRUCTURED_GRID")?;
    let mut doc = Document {
        title,
        ..Default::default()
    };
    let mut count_for_data = 0usize;
    let mut in_point_data = true;
    while let Some(word) = toks.peek() {
        let (_, line) = toks.next()?;
        match word.to_ascii_uppercase().as_str() {
            "POINTS" => {
                let n: usize = toks.parse("point count")?;
                let _ty = toks.next()?;
                doc.points.reserve(n);
                for _ in 0..n {
                    let x = toks.parse("coordinate")?;
                    let y = toks.parse("coordinate")?;
                    let z = toks.parse("coordinate")?;
                    doc.points.push(Vec3::new(x, y, z));
                }
            }
            "CELLS" => {
                doc.cells_line = line;
                let n: usize = toks.parse("cell count")?;
                let _size: usize = toks.parse("cell list size")?;
                for _ in 0..n {
                    let k: usize = toks.parse("cell node count")?;
                    let mut cell = Vec::with_capacity(k);
                    for _ in 0..k {
                        cell.push(toks.parse("node index")?);
                    }
                    doc.cells.push(cell);
                }
            }
            "CELL_TYPES" => {
                let n: usize = toks.parse("cell type count")?;
                for _ in 0..n {
                    doc.cell_types.push(toks.parse("cell type")?);
                }
            }
            "POINT_DATA" => {
                count_for_data = toks.parse("point data count")?;
                in_point_data = true;
            }
            "CELL_DATA" => {
                count_for_data = toks.parse("cell data count")?;
                in_point_data = false;
            }
            "SCALARS" => {
                let name = toks.next()?.0.to_string();
                let _ty = toks.next()?;
                if toks.peek().is_some_and(|t| t.parse::<usize>().is_ok()) {
                    let (c, l) = toks.next()?;
                    if c != "1" {
                        return Err(toks.err(l, "only single-component SCALARS are supported"));
                    }
                }
                if toks.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                    toks.next()?;
                    toks.next()?;
                }
                let mut v = Vec::with_capacity(count_for_data);
                for _ in 0..count_for_data {
                    v.push(toks.parse("scalar value")?);
                }
                if in_point_data {
                    doc.point_data.push((name, FieldData::Scalar(v)));
                } else {
                    doc.cell_data.push((name, v));
                }
            }
            "VECTORS" => {
                let name = toks.next()?.0.to_string();
                let _ty = toks.next()?;
                let mut v = Vec::with_capacity(count_for_data);
                for _ in 0..count_for_data {
                    let x = toks.parse("vector component")?;
                    let y = toks.parse("vector component")?;
                    let z = toks.parse("vector component")?;
                    v.push(Vec3::new(x, y, z));
                }
                if !in_point_data {
                    return Err(toks.err(line, "VECTORS are only supported as POINT_DATA"));
                }
                doc.point_data.push((name, FieldData::Vector(v)));
            }
            other => return Err(toks.err(line, format!("unsupported section {other}"))),
        }
    }
    Ok(doc)
}

fn cells_of_kind<const K: usize>(path: &Path, doc: &Document, vtk_type: i64, kind: &str) -> Result<Vec<[usize; K]>> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: doc.cells_line,
        message,
    };
    if doc.cell_types.len() != doc.cells.len() {
        return Err(err(format!(
            "{} cells but {} cell types",
            doc.cells.len(),
            doc.cell_types.len()
        )));
    }
    let mut out = Vec::with_capacity(doc.cells.len());
    for (i, (cell, ty)) in doc.cells.iter().zip(&doc.cell_types).enumerate() {
        if *ty != vtk_type || cell.len() != K {
            return Err(err(format!(
                "cell {i} has {} nodes and type {ty}; a {kind} needs {K} nodes and type {vtk_type}",
                cell.len()
            )));
        }
        if let Some(bad) = cell.iter().find(|&&n| n >= doc.points.len()) {
            return Err(err(format!("cell {i} references node {bad} of {}", doc.points.len())));
        }
        let mut a = [0usize; K];
        a.copy_from_slice(cell);
        out.push(a);
    }
    Ok(out)
}

fn characteristic_size(title: &str, nodes: &[Vec3], elements: &[[usize; 8]]) -> f64 {
    if let Some(h) = title
        .split_whitespace()
        .find_map(|w| w.strip_prefix("h="))
        .and_then(|v| v.parse::<f64>().ok())
    {
        return h;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for e in elements {
        for [a, b] in super::hex::EDGES {
            total += (nodes[e[a]] - nodes[e[b]]).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let doc = parse_document(path)?;
    let elements = cells_of_kind::<8>(path, &doc, HEXAHEDRON, "hexahedron")?;
    let spath = surface_path(path);
    let sdoc = parse_document(&spath)?;
    let quads = cells_of_kind::<4>(&spath, &sdoc, QUAD, "quad")?;
    let tags = sdoc
        .cell_data
        .iter()
        .find(|(n, _)| n == "surface_tag")
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Parse {
            path: spath.clone(),
            line: 1,
            message: "missing CELL_DATA array surface_tag".into(),
        })?;
    if tags.len() != quads.len() {
        return Err(Error::Parse {
            path: spath.clone(),
            line: 1,
            message: format!("{} tags for {} quads", tags.len(), quads.len()),
        });
    }
    let mut tagged = Vec::with_capacity(quads.len());
    for (i, (q, code)) in quads.iter().zip(tags).enumerate() {
        let tag = SurfaceTag::from_code(*code as i32).ok_or_else(|| Error::Parse {
            path: spath.clone(),
            line: 1,
            message: format!("quad {i} has unknown surface tag {code}"),
        })?;
        tagged.push((*q, tag));
    }
    let h = characteristic_size(&doc.title, &doc.points, &elements);
    let mesh = Mesh::with_tagged_faces(doc.points, elements, h, &tagged)?;
    mesh.audit()?;
    Ok(mesh)
}

/// All POINT_DATA arrays of a field file, in file order.
pub fn read_fields(path: &Path) -> Result<Vec<(String, FieldData)>> {
    Ok(parse_document(path)?.point_data)
}

pub fn read_scalar_field(path: &Path, name: &str) -> Result<Vec<f64>> {
    match read_fields(path)?.into_iter().find(|(n, _)| n == name) {
        Some((_, FieldData::Scalar(v))) => Ok(v),
        Some(_) => Err(Error::invalid(format!("{}: field {name} is not scalar", path.display()))),
        None => Err(Error::invalid(format!("{}: no field named {name}", path.display()))),
    }
}

pub fn read_vector_field(path: &Path, name: &str) -> Result<Vec<Vec3>> {
    match read_fields(path)?.into_iter().find(|(n, _)| n == name) {
        Some((_, FieldData::Vector(v))) => Ok(v),
        Some(_) => Err(Error::invalid(format!("{}: field {name} is not a vector", path.display()))),
        None => Err(Error::invalid(format!("{}: no field named {name}", path.display()))),
    }
}
