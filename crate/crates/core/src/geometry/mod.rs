//! Hexahedral meshes with tagged boundary surfaces.
//!
//! Units: lengths in cm throughout.

pub mod geodesic;
pub mod hex;
mod lv;
mod slab;
pub mod vtk;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use geodesic::surface_geodesic_distance;
pub use hex::Vec3;
pub use lv::{build_lv_mesh, LvGeometry};
pub use slab::build_slab_mesh;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceTag {
    Endo,
    Epi,
    Base,
    Other,
}

impl SurfaceTag {
    pub const ALL: [SurfaceTag; 4] = [
        SurfaceTag::Endo,
        SurfaceTag::Epi,
        SurfaceTag::Base,
        SurfaceTag::Other,
    ];

    /// Integer code used in the boundary-surface file.
    pub fn code(self) -> i32 {
        match self {
            SurfaceTag::Endo => 1,
            SurfaceTag::Epi => 2,
            SurfaceTag::Base => 3,
            SurfaceTag::Other => 0,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }
}

impl fmt::Display for SurfaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SurfaceTag::Endo => "endo",
            SurfaceTag::Epi => "epi",
            SurfaceTag::Base => "base",
            SurfaceTag::Other => "other",
        };
        f.write_str(s)
    }
}

/// A boundary quad, oriented with outward normal, belonging to one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub nodes: [usize; 4],
    pub element: usize,
    pub tag: SurfaceTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Vec3>,
    elements: Vec<[usize; 8]>,
    boundary: Vec<BoundaryFace>,
    characteristic_size: f64,
}

fn face_key(nodes: &[usize; 4]) -> [usize; 4] {
    let mut k = *nodes;
    k.sort_unstable();
    k
}

/// Faces that appear in exactly one element, in element-then-local-face order.
fn exterior_faces(elements: &[[usize; 8]]) -> Vec<([usize; 4], usize)> {
    let mut count: HashMap<[usize; 4], u32> = HashMap::with_capacity(elements.len() * 3);
    for e in elements {
        for f in hex::FACES {
            let nodes = f.map(|i| e[i]);
            *count.entry(face_key(&nodes)).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for (ei, e) in elements.iter().enumerate() {
        for f in hex::FACES {
            let nodes = f.map(|i| e[i]);
            if count[&face_key(&nodes)] == 1 {
                out.push((nodes, ei));
            }
        }
    }
    out
}

impl Mesh {
    /// Builds a mesh and tags its boundary faces with `tagger`.
    pub fn from_elements(
        nodes: Vec<Vec3>,
        elements: Vec<[usize; 8]>,
        characteristic_size: f64,
        mut tagger: impl FnMut(&[Vec3], &[usize; 4]) -> SurfaceTag,
    ) -> Self {
        let boundary = exterior_faces(&elements)
            .into_iter()
            .map(|(face, element)| BoundaryFace {
                nodes: face,
                element,
                tag: tagger(&nodes, &face),
            })
            .collect();
        Mesh {
            nodes,
            elements,
            boundary,
            characteristic_size,
        }
    }

    /// Builds a mesh from explicitly tagged boundary quads (as read from a
    /// file). Every exterior face must be covered by exactly one tagged quad.
    pub fn with_tagged_faces(
        nodes: Vec<Vec3>,
        elements: Vec<[usize; 8]>,
        characteristic_size: f64,
        tagged: &[([usize; 4], SurfaceTag)],
    ) -> Result<Self> {
        let mut tags: HashMap<[usize; 4], SurfaceTag> = HashMap::with_capacity(tagged.len());
        for (i, (face, tag)) in tagged.iter().enumerate() {
            if tags.insert(face_key(face), *tag).is_some() {
                return Err(Error::invalid(format!("boundary quad {i} is listed twice")));
            }
        }
        let exterior = exterior_faces(&elements);
        if exterior.len() != tags.len() {
            return Err(Error::invalid(format!(
                "{} tagged boundary quads for {} exterior faces",
                tags.len(),
                exterior.len()
            )));
        }
        let mut boundary = Vec::with_capacity(exterior.len());
        for (face, element) in exterior {
            let tag = *tags.get(&face_key(&face)).ok_or_else(|| {
                Error::invalid(format!("exterior face {face:?} of element {element} carries no tag"))
            })?;
            boundary.push(BoundaryFace {
                nodes: face,
                element,
                tag,
            });
        }
        Ok(Mesh {
            nodes,
            elements,
            boundary,
            characteristic_size,
        })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    pub fn boundary(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    pub fn characteristic_size(&self) -> f64 {
        self.characteristic_size
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn element_coords(&self, e: usize) -> [Vec3; 8] {
        self.elements[e].map(|i| self.nodes[i])
    }

    pub fn element_centroid(&self, e: usize) -> Vec3 {
        self.elements[e].iter().map(|&i| self.nodes[i]).sum::<Vec3>() / 8.0
    }

    /// Nodes lying on a boundary face carrying one of `tags`, ascending.
    pub fn surface_nodes(&self, tags: &[SurfaceTag]) -> Vec<usize> {
        let mut mark = vec![false; self.nodes.len()];
        for f in &self.boundary {
            if tags.contains(&f.tag) {
                for &n in &f.nodes {
                    mark[n] = true;
                }
            }
        }
        (0..self.nodes.len()).filter(|&i| mark[i]).collect()
    }

    pub fn boundary_node_mask(&self) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for f in &self.boundary {
            for &n in &f.nodes {
                mark[n] = true;
            }
        }
        mark
    }

    pub fn has_tag(&self, tag: SurfaceTag) -> bool {
        self.boundary.iter().any(|f| f.tag == tag)
    }

    /// Node-to-node adjacency through shared elements, each list ascending.
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.elements {
            for &a in e {
                for &b in e {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn nearest_node(&self, p: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.nodes.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn volume(&self) -> f64 {
        let rule = crate::fem::QuadratureRule::gauss(2);
        (0..self.elements.len())
            .map(|e| {
                let x = self.element_coords(e);
                rule.points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(xi, w)| hex::jacobian(&x, &hex::shape_derivatives(*xi)).determinant() * w)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Exhaustive validity audit: connectivity, orientation, tag coverage and
    /// closure of the boundary surface.
    pub fn audit(&self) -> Result<()> {
        let n = self.nodes.len();
        for (i, p) in self.nodes.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!("node {i} has non-finite coordinates")));
            }
        }
        for (ei, e) in self.elements.iter().enumerate() {
            for (k, &a) in e.iter().enumerate() {
                if a >= n {
                    return Err(Error::invalid(format!("element {ei} references node {a} of {n}")));
                }
                if e[..k].contains(&a) {
                    return Err(Error::invalid(format!("element {ei} repeats node {a}")));
                }
            }
            let dets = hex::corner_jacobians(&self.element_coords(ei));
            if let Some((c, d)) = dets.iter().enumerate().find(|(_, d)| **d <= 0.0) {
                return Err(Error::invalid(format!(
                    "element {ei} has non-positive Jacobian {d:e} at corner {c}"
                )));
            }
        }
        let exterior = exterior_faces(&self.elements);
        if exterior.len() != self.boundary.len() {
            return Err(Error::invalid(format!(
                "{} boundary faces stored, {} exterior faces found",
                self.boundary.len(),
                exterior.len()
            )));
        }
        let mut stored: HashMap<[usize; 4], usize> = HashMap::with_capacity(self.boundary.len());
        for f in &self.boundary {
            *stored.entry(face_key(&f.nodes)).or_insert(0) += 1;
        }
        for (face, element) in &exterior {
            match stored.get(&face_key(face)) {
                Some(1) => {}
                Some(c) => {
                    return Err(Error::invalid(format!(
                        "exterior face of element {element} tagged {c} times"
                    )))
                }
                None => {
                    return Err(Error::invalid(format!(
                        "exterior face of element {element} carries no tag"
                    )))
                }
            }
        }
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.boundary {
            for k in 0..4 {
                let (a, b) = (f.nodes[k], f.nodes[(k + 1) % 4]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        if let Some((e, c)) = edges.iter().find(|(_, c)| **c != 2) {
            return Err(Error::invalid(format!(
                "boundary edge {e:?} shared by {c} boundary faces; surface is not closed"
            )));
        }
        Ok(())
    }
}

/// One value per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField<V> {
    values: Vec<V>,
}

pub type ScalarField = NodeField<f64>;
pub type VectorField = NodeField<Vec3>;

impl<V> NodeField<V> {
    pub fn new(mesh: &Mesh, values: Vec<V>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values for {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(NodeField { values })
    }

    pub fn from_values(values: Vec<V>) -> Self {
        NodeField { values }
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<V> std::ops::Index<usize> for NodeField<V> {
    type Output = V;
    fn index(&self, i: usize) -> &V {
        &self.values[i]
    }
}

/// Trilinear interpolation of a nodal field at an arbitrary point. Returns
/// `None` when the point lies outside every element.
pub fn interpolate_scalar(mesh: &Mesh, field: &[f64], p: &Vec3) -> Option<f64> {
    const SLACK: f64 = 1e-9;
    for e in 0..mesh.element_count() {
        let x = mesh.element_coords(e);
        let (mut lo, mut hi) = (x[0], x[0]);
        for q in &x[1..] {
            lo = lo.inf(q);
            hi = hi.sup(q);
        }
        if (0..3).any(|k| p[k] < lo[k] - SLACK || p[k] > hi[k] + SLACK) {
            continue;
        }
        let Some(xi) = hex::inverse_map(&x, p) else {
            continue;
        };
        if xi.iter().all(|c| c.abs() <= 1.0 + 1e-9) {
            let n = hex::shape(xi);
            return Some(
                mesh.elements()[e]
                    .iter()
                    .zip(n.iter())
                    .map(|(&i, w)| field[i] * w)
                    .sum(),
            );
        }
    }
    None
}
