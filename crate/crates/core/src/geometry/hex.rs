//! Trilinear reference hexahedron on [-1, 1]^3.
//!
//! Corner numbering follows the legacy VTK hexahedron (cell type 12): corners
//! 0-3 are the bottom face counter-clockwise seen from above, 4-7 the top
//! face in the same order.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;

pub const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Local faces, ordered so that the right-hand normal points outward.
pub const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

/// The 12 edges as corner pairs.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

pub fn shape(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (i, c) in CORNERS.iter().enumerate() {
        n[i] = 0.125 * (1.0 + xi[0] * c[0]) * (1.0 + xi[1] * c[1]) * (1.0 + xi[2] * c[2]);
    }
    n
}

/// Reference-coordinate derivatives: `d[i][k] = dN_i / dxi_k`.
pub fn shape_derivatives(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut d = [[0.0; 3]; 8];
    for (i, c) in CORNERS.iter().enumerate() {
        let a = 1.0 + xi[0] * c[0];
        let b = 1.0 + xi[1] * c[1];
        let e = 1.0 + xi[2] * c[2];
        d[i] = [
            0.125 * c[0] * b * e,
            0.125 * a * c[1] * e,
            0.125 * a * b * c[2],
        ];
    }
    d
}

/// Jacobian `J[r][k] = dx_r / dxi_k` of the map from the reference cell.
pub fn jacobian(coords: &[Vec3; 8], dshape: &[[f64; 3]; 8]) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for (x, d) in coords.iter().zip(dshape) {
        for r in 0..3 {
            for k in 0..3 {
                j[(r, k)] += x[r] * d[k];
            }
        }
    }
    j
}

/// Jacobian determinant at each of the 8 corners.
pub fn corner_jacobians(coords: &[Vec3; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (i, c) in CORNERS.iter().enumerate() {
        out[i] = jacobian(coords, &shape_derivatives(*c)).determinant();
    }
    out
}

pub fn map(coords: &[Vec3; 8], xi: [f64; 3]) -> Vec3 {
    let n = shape(xi);
    coords
        .iter()
        .zip(n.iter())
        .fold(Vec3::zeros(), |acc, (x, w)| acc + x * *w)
}

/// Newton inversion of the trilinear map. Returns reference coordinates if
/// the iteration converges; the caller decides whether they lie inside.
pub fn inverse_map(coords: &[Vec3; 8], p: &Vec3) -> Option<[f64; 3]> {
    let mut xi = [0.0; 3];
    for _ in 0..30 {
        let r = map(coords, xi) - p;
        let j = jacobian(coords, &shape_derivatives(xi));
        let step = j.lu().solve(&r)?;
        for k in 0..3 {
            xi[k] -= step[k];
        }
        if step.norm() < 1e-13 {
            return Some(xi);
        }
    }
    None
}
