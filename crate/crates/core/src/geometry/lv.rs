use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{hex, Mesh, SurfaceTag, Vec3};
use crate::error::{Error, Result};

/// Truncated prolate ellipsoidal shell. The long axis is `z`, the apex sits
/// at `z = -c` and the base is the plane `z = truncation_height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvGeometry {
    pub endo_semiaxes: [f64; 3],
    pub epi_semiaxes: [f64; 3],
    pub truncation_height: f64,
}

impl Default for LvGeometry {
    fn default() -> Self {
        LvGeometry {
            endo_semiaxes: [1.5, 1.5, 3.0],
            epi_semiaxes: [2.0, 2.0, 3.5],
            truncation_height: 0.5,
        }
    }
}

/// Half-width of the central block of the O-grid disk, in disk units.
const CORE_HALF_WIDTH: f64 = 0.35;

struct Surface {
    axes: [f64; 3],
    rim_angle: f64,
    base_z: f64,
}

impl Surface {
    fn new(axes: [f64; 3], base_z: f64) -> Self {
        Surface {
            axes,
            rim_angle: (-base_z / axes[2]).acos(),
            base_z,
        }
    }

    /// Disk point (unit disk, rim at radius 1) to surface point.
    fn point(&self, d: [f64; 2], rim: bool) -> Vec3 {
        let rho = (d[0] * d[0] + d[1] * d[1]).sqrt().min(1.0);
        let phi = d[1].atan2(d[0]);
        let mu = if rim { self.rim_angle } else { rho * self.rim_angle };
        let [a, b, c] = self.axes;
        let z = if rim { self.base_z } else { -c * mu.cos() };
        Vec3::new(a * mu.sin() * phi.cos(), b * mu.sin() * phi.sin(), z)
    }

    fn rim_perimeter(&self) -> f64 {
        let rx = self.axes[0] * self.rim_angle.sin();
        let ry = self.axes[1] * self.rim_angle.sin();
        PI * (3.0 * (rx + ry) - ((3.0 * rx + ry) * (rx + 3.0 * ry)).sqrt())
    }

    fn meridian_length(&self) -> f64 {
        let a = 0.5 * (self.axes[0] + self.axes[1]);
        let c = self.axes[2];
        let n = 400;
        let dmu = self.rim_angle / n as f64;
        (0..n)
            .map(|i| {
                let mu = (i as f64 + 0.5) * dmu;
                (a * a * mu.cos().powi(2) + c * c * mu.sin().powi(2)).sqrt() * dmu
            })
            .sum()
    }
}

/// Quad mesh of the unit disk: a square core block surrounded by four
/// blocks reaching the circle. Returns disk coordinates, a rim flag per
/// vertex, and counter-clockwise quads.
fn disk_ogrid(n_core: usize, n_radial: usize) -> (Vec<[f64; 2]>, Vec<bool>, Vec<[usize; 4]>) {
    let mut ids: HashMap<(u64, u64), usize> = HashMap::new();
    let mut points = Vec::new();
    let mut rim = Vec::new();
    let mut vertex = |p: [f64; 2], on_rim: bool| -> usize {
        // +0.0 folds negative zero so mirrored points share a key.
        let key = ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits());
        *ids.entry(key).or_insert_with(|| {
            points.push(p);
            rim.push(on_rim);
            points.len() - 1
        })
    };
    let s0 = CORE_HALF_WIDTH;
    let grid = |i: usize| s0 * (2.0 * i as f64 - n_core as f64) / n_core as f64;

    let mut quads = Vec::new();
    let mut core = vec![vec![0usize; n_core + 1]; n_core + 1];
    for (j, row) in core.iter_mut().enumerate() {
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = vertex([grid(i), grid(j)], false);
        }
    }
    for j in 0..n_core {
        for i in 0..n_core {
            quads.push([core[j][i], core[j][i + 1], core[j + 1][i + 1], core[j + 1][i]]);
        }
    }
    // Right-hand block, then exact quarter-turn rotations (x, y) -> (-y, x).
    let rotate = |p: [f64; 2], turns: usize| {
        let mut q = p;
        for _ in 0..turns {
            q = [-q[1], q[0]];
        }
        q
    };
    for turn in 0..4 {
        let mut block = vec![vec![0usize; n_radial + 1]; n_core + 1];
        for (m, row) in block.iter_mut().enumerate() {
            let side = [s0, grid(m)];
            let angle = -PI / 4.0 + (PI / 2.0) * m as f64 / n_core as f64;
            // cos(π/4) and sin(π/4) differ by an ulp; pin the block seams.
            let circle = if m == 0 || m == n_core {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                [r, if m == 0 { -r } else { r }]
            } else {
                [angle.cos(), angle.sin()]
            };
            for (l, slot) in row.iter_mut().enumerate() {
                let p = if l == 0 {
                    side
                } else if l == n_radial {
                    circle
                } else {
                    let t = l as f64 / n_radial as f64;
                    [
                        (1.0 - t) * side[0] + t * circle[0],
                        (1.0 - t) * side[1] + t * circle[1],
                    ]
                };
                *slot = vertex(rotate(p, turn), l == n_radial);
            }
        }
        for m in 0..n_core {
            for l in 0..n_radial {
                quads.push([block[m][l], block[m][l + 1], block[m + 1][l + 1], block[m + 1][l]]);
            }
        }
    }
    (points, rim, quads)
}

/// Hexahedral mesh of a truncated ellipsoidal shell. Inner surface ENDO,
/// outer EPI, truncation plane BASE.
pub fn build_lv_mesh(geometry: &LvGeometry, h: f64) -> Result<Mesh> {
    let LvGeometry {
        endo_semiaxes: endo_ax,
        epi_semiaxes: epi_ax,
        truncation_height: zt,
    } = *geometry;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("mesh size must be positive, got {h}")));
    }
    if endo_ax.iter().chain(&epi_ax).any(|a| !(*a > 0.0)) {
        return Err(Error::invalid("semiaxes must be positive"));
    }
    if (0..3).any(|k| epi_ax[k] <= endo_ax[k]) {
        return Err(Error::invalid(format!(
            "epicardial semiaxes {epi_ax:?} must exceed endocardial {endo_ax:?}"
        )));
    }
    if !(zt.abs() < endo_ax[2]) {
        return Err(Error::invalid(format!(
            "truncation plane z = {zt} does not cut the endocardial ellipsoid"
        )));
    }
    let endo = Surface::new(endo_ax, zt);
    let epi = Surface::new(epi_ax, zt);

    // Wall thickness along the transmural lines, sampled densely.
    let mut thinnest = f64::INFINITY;
    let mut mean_thickness = 0.0;
    let samples = 64;
    for i in 0..=samples {
        for j in 0..samples {
            let rho = i as f64 / samples as f64;
            let phi = 2.0 * PI * j as f64 / samples as f64;
            let d = [rho * phi.cos(), rho * phi.sin()];
            let rim = i == samples;
            let t = (epi.point(d, rim) - endo.point(d, rim)).norm();
            thinnest = thinnest.min(t);
            mean_thickness += t;
        }
    }
    mean_thickness /= ((samples + 1) * samples) as f64;
    if thinnest < 2.0 * h {
        return Err(Error::RefinementRequired(format!(
            "wall thickness {thinnest:.4} cm is below 2h = {:.4} cm",
            2.0 * h
        )));
    }

    let perimeter = 0.5 * (endo.rim_perimeter() + epi.rim_perimeter());
    let meridian = 0.5 * (endo.meridian_length() + epi.meridian_length());
    let n_core = ((perimeter / (4.0 * h)).round() as usize).max(2);
    let n_radial = ((meridian * (1.0 - CORE_HALF_WIDTH) / h).round() as usize).max(1);
    let n_layers = ((mean_thickness / h).round() as usize).max(2);

    let (disk, rim, quads) = disk_ogrid(n_core, n_radial);
    let nd = disk.len();
    let mut nodes = Vec::with_capacity(nd * (n_layers + 1));
    for k in 0..=n_layers {
        let r = k as f64 / n_layers as f64;
        for (d, &on_rim) in disk.iter().zip(&rim) {
            let a = endo.point(*d, on_rim);
            let b = epi.point(*d, on_rim);
            nodes.push(a + (b - a) * r);
        }
    }
    let mut elements = Vec::with_capacity(quads.len() * n_layers);
    for k in 0..n_layers {
        for q in &quads {
            let mut e = [
                q[0] + nd * k,
                q[1] + nd * k,
                q[2] + nd * k,
                q[3] + nd * k,
                q[0] + nd * (k + 1),
                q[1] + nd * (k + 1),
                q[2] + nd * (k + 1),
                q[3] + nd * (k + 1),
            ];
            let coords = e.map(|i| nodes[i]);
            if hex::corner_jacobians(&coords)[0] < 0.0 {
                e.swap(1, 3);
                e.swap(5, 7);
            }
            elements.push(e);
        }
    }
    let mesh_h = h;
    Ok(Mesh::from_elements(nodes, elements, mesh_h, |_, face| {
        let layer = face.map(|n| n / nd);
        if layer.iter().all(|&l| l == 0) {
            SurfaceTag::Endo
        } else if layer.iter().all(|&l| l == n_layers) {
            SurfaceTag::Epi
        } else if face.iter().all(|&n| rim[n % nd]) {
            SurfaceTag::Base
        } else {
            SurfaceTag::Other
        }
    }))
}
