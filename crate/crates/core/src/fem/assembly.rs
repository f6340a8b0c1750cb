//! Q1 mass and stiffness assembly on hexahedral meshes.
//!
//! Element contributions are accumulated in element order into the slots of
//! a fixed node-connectivity pattern, so repeated assembly is bitwise
//! reproducible.

use nalgebra::Matrix3;

use super::quadrature::QuadratureRule;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};
use crate::geometry::{hex, Mesh};

/// CSR structure of the node graph plus, per element, the slot of every
/// local (a, b) pair.
#[derive(Debug, Clone)]
pub struct MeshPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<[u32; 64]>,
    diag: Vec<usize>,
}

/// Per-element quadrature data: weights times |J| and physical gradients.
struct ElementQuadrature {
    weights: Vec<f64>,
    shapes: Vec<[f64; 8]>,
    gradients: Vec<[[f64; 3]; 8]>,
}

fn element_quadrature(mesh: &Mesh, e: usize, rule: &QuadratureRule) -> Result<ElementQuadrature> {
    let x = mesh.element_coords(e);
    let mut q = ElementQuadrature {
        weights: Vec::with_capacity(rule.len()),
        shapes: Vec::with_capacity(rule.len()),
        gradients: Vec::with_capacity(rule.len()),
    };
    for (xi, w) in rule.points.iter().zip(&rule.weights) {
        let d = hex::shape_derivatives(*xi);
        let j = hex::jacobian(&x, &d);
        let det = j.determinant();
        if !(det > 0.0) {
            return Err(Error::Assembly {
                element: e,
                message: format!("inverted or degenerate element (Jacobian determinant {det:e})"),
            });
        }
        let jinv_t = j
            .try_inverse()
            .ok_or(Error::Assembly {
                element: e,
                message: "singular Jacobian".into(),
            })?
            .transpose();
        let mut g = [[0.0; 3]; 8];
        for a in 0..8 {
            let gr = jinv_t * nalgebra::Vector3::new(d[a][0], d[a][1], d[a][2]);
            g[a] = [gr[0], gr[1], gr[2]];
        }
        q.weights.push(w * det);
        q.shapes.push(hex::shape(*xi));
        q.gradients.push(g);
    }
    Ok(q)
}

impl MeshPattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.node_count();
        let neighbors = mesh.node_neighbors();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, list) in neighbors.iter().enumerate() {
            let mut placed = false;
            for &j in list {
                if !placed && j > i {
                    diag.push(col_idx.len());
                    col_idx.push(i);
                    placed = true;
                }
                col_idx.push(j);
            }
            if !placed {
                diag.push(col_idx.len());
                col_idx.push(i);
            }
            row_ptr.push(col_idx.len());
        }
        let find = |i: usize, j: usize| -> u32 {
            let r = row_ptr[i]..row_ptr[i + 1];
            let k = col_idx[r.clone()].binary_search(&j).expect("element pair in pattern");
            (r.start + k) as u32
        };
        let slots = mesh
            .elements()
            .iter()
            .map(|e| {
                let mut s = [0u32; 64];
                for a in 0..8 {
                    for b in 0..8 {
                        s[8 * a + b] = find(e[a], e[b]);
                    }
                }
                s
            })
            .collect();
        MeshPattern {
            n,
            row_ptr,
            col_idx,
            slots,
            diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Slot of the diagonal entry of each row.
    pub fn diag_slots(&self) -> &[usize] {
        &self.diag
    }

    /// Matrix on the full pattern, structural zeros kept.
    pub fn matrix(&self, values: Vec<f64>) -> SparseMatrix {
        assert_eq!(values.len(), self.nnz());
        SparseMatrix::from_raw(self.n, self.row_ptr.clone(), self.col_idx.clone(), values)
    }

    /// Finalized matrix with exact zeros removed.
    pub fn compressed(&self, values: &[f64]) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    vals.push(values[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix::from_raw(self.n, row_ptr, col_idx, vals)
    }

    /// Mass-matrix values on the pattern. Lumped values sit on the diagonal
    /// slots only.
    pub fn mass_values(&self, mesh: &Mesh, lumped: bool, workers: usize) -> Result<Vec<f64>> {
        let rule = QuadratureRule::gauss(2);
        let locals = element_matrices(mesh.element_count(), workers, |e| {
            let q = element_quadrature(mesh, e, &rule)?;
            let mut local = [0.0; 64];
            for (w, n) in q.weights.iter().zip(&q.shapes) {
                for a in 0..8 {
                    for b in 0..8 {
                        local[8 * a + b] += w * n[a] * n[b];
                    }
                }
            }
            if lumped {
                for a in 0..8 {
                    let row: f64 = local[8 * a..8 * a + 8].iter().sum();
                    local[8 * a..8 * a + 8].fill(0.0);
                    local[9 * a] = row;
                }
            }
            Ok(local)
        })?;
        Ok(self.merge(&locals))
    }

    /// Stiffness values for `∫ D ∇φ_b · ∇φ_a` with one tensor per element.
    pub fn stiffness_values(&self, mesh: &Mesh, tensors: &[Matrix3<f64>], workers: usize) -> Result<Vec<f64>> {
        if tensors.len() != mesh.element_count() {
            return Err(Error::invalid(format!(
                "{} conductivity tensors for {} elements",
                tensors.len(),
                mesh.element_count()
            )));
        }
        for (e, d) in tensors.iter().enumerate() {
            if !d.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("conductivity tensor of element {e} is not finite")));
            }
            if (d - d.transpose()).amax() > 1e-12 * d.amax() {
                return Err(Error::invalid(format!("conductivity tensor of element {e} is not symmetric")));
            }
        }
        let rule = QuadratureRule::gauss(2);
        let locals = element_matrices(mesh.element_count(), workers, |e| {
            let d = &tensors[e];
            let mut local = [0.0; 64];
            if d.iter().all(|v| *v == 0.0) {
                return Ok(local);
            }
            let q = element_quadrature(mesh, e, &rule)?;
            for (w, g) in q.weights.iter().zip(&q.gradients) {
                let mut dg = [[0.0; 3]; 8];
                for b in 0..8 {
                    for r in 0..3 {
                        dg[b][r] = d[(r, 0)] * g[b][0] + d[(r, 1)] * g[b][1] + d[(r, 2)] * g[b][2];
                    }
                }
                for a in 0..8 {
                    for b in 0..8 {
                        local[8 * a + b] += w * (g[a][0] * dg[b][0] + g[a][1] * dg[b][1] + g[a][2] * dg[b][2]);
                    }
                }
            }
            Ok(local)
        })?;
        Ok(self.merge(&locals))
    }

    /// Sums element matrices into pattern slots in element order.
    fn merge(&self, locals: &[[f64; 64]]) -> Vec<f64> {
        let mut values = vec![0.0; self.nnz()];
        for (slots, local) in self.slots.iter().zip(locals) {
            for (s, v) in slots.iter().zip(local.iter()) {
                values[*s as usize] += v;
            }
        }
        values
    }
}

/// Evaluates `f` for every element, splitting contiguous element ranges over
/// `workers` threads. The result is ordered by element whatever the split.
fn element_matrices<F>(count: usize, workers: usize, f: F) -> Result<Vec<[f64; 64]>>
where
    F: Fn(usize) -> Result<[f64; 64]> + Sync,
{
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(&f).collect();
    }
    let chunk = count.div_ceil(workers);
    let parts: Vec<Result<Vec<[f64; 64]>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || (w * chunk..((w + 1) * chunk).min(count)).map(f).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("assembly worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn assemble_mass(mesh: &Mesh, lumped: bool) -> Result<SparseMatrix> {
    let p = MeshPattern::new(mesh);
    let v = p.mass_values(mesh, lumped, 1)?;
    Ok(p.compressed(&v))
}

pub fn assemble_stiffness(mesh: &Mesh, tensors: &[Matrix3<f64>]) -> Result<SparseMatrix> {
    let p = MeshPattern::new(mesh);
    let v = p.stiffness_values(mesh, tensors, 1)?;
    Ok(p.compressed(&v))
}

/// Volume-weighted nodal average of element gradients of a nodal scalar.
pub fn nodal_gradient(mesh: &Mesh, field: &[f64]) -> Result<Vec<nalgebra::Vector3<f64>>> {
    let rule = QuadratureRule::gauss(2);
    let mut grad = vec![nalgebra::Vector3::zeros(); mesh.node_count()];
    let mut weight = vec![0.0; mesh.node_count()];
    for (e, nodes) in mesh.elements().iter().enumerate() {
        let q = element_quadrature(mesh, e, &rule)?;
        let mut g = nalgebra::Vector3::zeros();
        let mut vol = 0.0;
        for (w, gr) in q.weights.iter().zip(&q.gradients) {
            for a in 0..8 {
                g += nalgebra::Vector3::new(gr[a][0], gr[a][1], gr[a][2]) * (field[nodes[a]] * w);
            }
            vol += w;
        }
        for &n in nodes {
            grad[n] += g;
            weight[n] += vol;
        }
    }
    for (g, w) in grad.iter_mut().zip(&weight) {
        if *w > 0.0 {
            *g /= *w;
        }
    }
    Ok(grad)
}
