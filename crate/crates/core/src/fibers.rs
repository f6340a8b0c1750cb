//! Rule-based myocardial fibers from two Laplace coordinates.
//!
//! `φ` runs from 0 on the epicardium to 1 on the endocardium, `ψ` from 0 at
//! the apex to 1 at the base. At every node the gradients give a local frame
//! (transmural, apicobasal, circumferential) which is rotated by the fiber
//! angle about the transmural axis and by the sheet angle about the fiber.

use std::path::Path;

use log::{debug, warn};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, cg_solve, nodal_gradient, SparseMatrix};
use crate::geometry::{vtk, Mesh, ScalarField, SurfaceTag, Vec3};

/// Fiber and sheet angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberAngles {
    pub alpha_endo: f64,
    pub alpha_epi: f64,
    pub beta_endo: f64,
    pub beta_epi: f64,
}

impl Default for FiberAngles {
    fn default() -> Self {
        FiberAngles {
            alpha_endo: 60.0,
            alpha_epi: -60.0,
            beta_endo: -20.0,
            beta_epi: 20.0,
        }
    }
}

impl FiberAngles {
    /// `±alpha` fibers (endo positive) with the default sheets.
    pub fn symmetric(alpha: f64) -> Self {
        FiberAngles {
            alpha_endo: alpha,
            alpha_epi: -alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_endo", self.alpha_endo),
            ("alpha_epi", self.alpha_epi),
            ("beta_endo", self.beta_endo),
            ("beta_epi", self.beta_epi),
        ] {
            if !(a > -90.0 && a < 90.0) {
                return Err(Error::invalid(format!("{name} = {a}° outside (-90°, 90°)")));
            }
        }
        Ok(())
    }
}

/// One orthonormal `(f, s, n)` triple per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberField {
    pub f: Vec<Vec3>,
    pub s: Vec<Vec3>,
    pub n: Vec<Vec3>,
    /// Nodes whose triple was copied from the nearest regular node.
    pub singular: Vec<bool>,
}

impl FiberField {
    /// Same triple everywhere.
    pub fn uniform(nodes: usize, f: Vec3, n: Vec3) -> Result<Self> {
        let f = f.normalize();
        let n = n.normalize();
        if f.dot(&n).abs() > 1e-12 {
            return Err(Error::invalid("fiber and normal directions must be orthogonal"));
        }
        let s = n.cross(&f);
        Ok(FiberField {
            f: vec![f; nodes],
            s: vec![s; nodes],
            n: vec![n; nodes],
            singular: vec![false; nodes],
        })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Worst deviation from orthonormality over all nodes.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            let (f, s, n) = (self.f[i], self.s[i], self.n[i]);
            for d in [
                f.dot(&s),
                f.dot(&n),
                s.dot(&n),
                f.norm() - 1.0,
                s.norm() - 1.0,
                n.norm() - 1.0,
            ] {
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn write_vtk(&self, path: &Path, mesh: &Mesh) -> Result<()> {
        vtk::write_fields(
            path,
            mesh,
            &[
                ("fiber", vtk::FieldData::Vector(self.f.clone())),
                ("sheet", vtk::FieldData::Vector(self.s.clone())),
                ("normal", vtk::FieldData::Vector(self.n.clone())),
            ],
        )
    }

    pub fn read_vtk(path: &Path) -> Result<Self> {
        let f = vtk::read_vector_field(path, "fiber")?;
        let s = vtk::read_vector_field(path, "sheet")?;
        let n = vtk::read_vector_field(path, "normal")?;
        let singular = vec![false; f.len()];
        Ok(FiberField { f, s, n, singular })
    }
}

/// Harmonic field with Dirichlet values on `fixed` and zero flux elsewhere.
fn solve_laplace(mesh: &Mesh, fixed: &[(usize, f64)]) -> Result<Vec<f64>> {
    let n = mesh.node_count();
    let k = assemble_stiffness(mesh, &vec![Matrix3::identity(); mesh.element_count()])?;
    let mut value = vec![f64::NAN; n];
    for &(i, v) in fixed {
        value[i] = v;
    }
    let mut index = vec![usize::MAX; n];
    let mut free = Vec::new();
    for i in 0..n {
        if value[i].is_nan() {
            index[i] = free.len();
            free.push(i);
        }
    }
    let mut triplets = Vec::with_capacity(k.nnz());
    let mut rhs = vec![0.0; free.len()];
    for (fi, &i) in free.iter().enumerate() {
        for (j, kij) in k.row(i) {
            if index[j] != usize::MAX {
                triplets.push((fi, index[j], kij));
            } else {
                rhs[fi] -= kij * value[j];
            }
        }
    }
    let reduced = SparseMatrix::from_triplets(free.len(), &triplets)?;
    let mut x = vec![0.5; free.len()];
    if !free.is_empty() {
        let report = cg_solve(&reduced, &rhs, &mut x, 1e-13, 20 * free.len() + 100)?;
        debug!("Laplace solve: {} unknowns, {} CG iterations", free.len(), report.iterations);
    }
    for (fi, &i) in free.iter().enumerate() {
        value[i] = x[fi];
    }
    Ok(value)
}

fn tagged_nodes(mesh: &Mesh, tag: SurfaceTag) -> Result<Vec<usize>> {
    let nodes = mesh.surface_nodes(&[tag]);
    if nodes.is_empty() {
        return Err(Error::invalid(format!("mesh has no {tag} surface")));
    }
    Ok(nodes)
}

/// `φ = 1` on ENDO, `φ = 0` on EPI.
pub fn solve_transmural(mesh: &Mesh) -> Result<ScalarField> {
    let endo = tagged_nodes(mesh, SurfaceTag::Endo)?;
    let epi = tagged_nodes(mesh, SurfaceTag::Epi)?;
    let mut fixed: Vec<(usize, f64)> = epi.iter().map(|&i| (i, 0.0)).collect();
    fixed.extend(endo.iter().map(|&i| (i, 1.0)));
    ScalarField::new(mesh, solve_laplace(mesh, &fixed)?)
}

/// `ψ = 1` on BASE and `ψ = 0` on the boundary nodes within one mesh size
/// of the lowest point. Without a BASE surface (slabs) `ψ = (y − y_min)/L_y`.
pub fn solve_apicobasal(mesh: &Mesh) -> Result<ScalarField> {
    if !mesh.has_tag(SurfaceTag::Base) {
        let (lo, hi) = mesh.bounding_box();
        let ly = hi.y - lo.y;
        if !(ly > 0.0) {
            return Err(Error::invalid("mesh has no extent along y"));
        }
        let psi = mesh.nodes().iter().map(|p| (p.y - lo.y) / ly).collect();
        return ScalarField::new(mesh, psi);
    }
    let base = tagged_nodes(mesh, SurfaceTag::Base)?;
    let on_boundary = mesh.boundary_node_mask();
    let z_min = mesh.bounding_box().0.z;
    let reach = z_min + mesh.characteristic_size();
    let mut fixed: Vec<(usize, f64)> = (0..mesh.node_count())
        .filter(|&i| on_boundary[i] && mesh.nodes()[i].z <= reach)
        .map(|i| (i, 0.0))
        .collect();
    if fixed.is_empty() {
        return Err(Error::invalid("no apex nodes found"));
    }
    fixed.extend(base.iter().map(|&i| (i, 1.0)));
    ScalarField::new(mesh, solve_laplace(mesh, &fixed)?)
}

/// Builds the triple at one node; `None` where the frame degenerates.
fn local_triple(grad_phi: Vec3, grad_psi: Vec3, phi: f64, angles: &FiberAngles) -> Option<(Vec3, Vec3, Vec3)> {
    let gn = grad_phi.norm();
    if gn < 1e-8 {
        return None;
    }
    let e_t = grad_phi / gn;
    let ab = grad_psi - e_t * grad_psi.dot(&e_t);
    let an = ab.norm();
    if an < 1e-8 * grad_psi.norm().max(1e-300) || an == 0.0 {
        return None;
    }
    let e_ab = ab / an;
    let e_c = e_t.cross(&e_ab);
    let alpha = (angles.alpha_endo * phi + angles.alpha_epi * (1.0 - phi)).to_radians();
    let beta = (angles.beta_endo * phi + angles.beta_epi * (1.0 - phi)).to_radians();
    let f = e_c * alpha.cos() + e_ab * alpha.sin();
    let n = e_t * beta.cos() + e_t.cross(&f) * beta.sin();
    let s = n.cross(&f);
    Some((f, s, n))
}

pub fn generate_fibers(mesh: &Mesh, phi: &ScalarField, psi: &ScalarField, angles: &FiberAngles) -> Result<FiberField> {
    angles.validate()?;
    let n = mesh.node_count();
    if phi.len() != n || psi.len() != n {
        return Err(Error::invalid("φ and ψ must be defined on every mesh node"));
    }
    let gphi = nodal_gradient(mesh, phi.values())?;
    let gpsi = nodal_gradient(mesh, psi.values())?;
    let mut field = FiberField {
        f: vec![Vec3::zeros(); n],
        s: vec![Vec3::zeros(); n],
        n: vec![Vec3::zeros(); n],
        singular: vec![false; n],
    };
    for i in 0..n {
        match local_triple(gphi[i], gpsi[i], phi[i].clamp(0.0, 1.0), angles) {
            Some((f, s, nn)) => {
                field.f[i] = f;
                field.s[i] = s;
                field.n[i] = nn;
            }
            None => field.singular[i] = true,
        }
    }
    let singular: Vec<usize> = (0..n).filter(|&i| field.singular[i]).collect();
    if singular.len() == n {
        return Err(Error::Degenerate("fiber frame is singular at every node".into()));
    }
    if !singular.is_empty() {
        warn!("{} singular fiber nodes inherit their nearest regular neighbour", singular.len());
    }
    let nodes = mesh.nodes();
    for &i in &singular {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (0..n).filter(|&j| !field.singular[j]) {
            let d = (nodes[j] - nodes[i]).norm_squared();
            if d < best.0 {
                best = (d, j);
            }
        }
        field.f[i] = field.f[best.1];
        field.s[i] = field.s[best.1];
        field.n[i] = field.n[best.1];
    }
    Ok(field)
}

/// Transmural and apicobasal solves followed by the rule.
pub fn fibers_for_mesh(mesh: &Mesh, angles: &FiberAngles) -> Result<FiberField> {
    let phi = solve_transmural(mesh)?;
    let psi = solve_apicobasal(mesh)?;
    generate_fibers(mesh, &phi, &psi, angles)
}
