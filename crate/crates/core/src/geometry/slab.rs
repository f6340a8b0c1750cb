use super::{Mesh, SurfaceTag, Vec3};
use crate::error::{Error, Result};

/// Structured box `[0, Lx] x [0, Ly] x [0, Lz]` of hexahedra with edge length
/// close to `h`. Faces `z = 0` are ENDO, `z = Lz` EPI, the rest OTHER.
pub fn build_slab_mesh(lengths: [f64; 3], h: f64) -> Result<Mesh> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("mesh size must be positive, got {h}")));
    }
    if let Some(l) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("slab extent must be positive, got {l}")));
    }
    let counts = lengths.map(|l| ((l / h).round() as usize).max(1));
    let [nx, ny, nz] = counts;
    let stride_y = nx + 1;
    let stride_z = (nx + 1) * (ny + 1);
    let id = |i: usize, j: usize, k: usize| i + stride_y * j + stride_z * k;

    let mut nodes = Vec::with_capacity(stride_z * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vec3::new(
                    lengths[0] * i as f64 / nx as f64,
                    lengths[1] * j as f64 / ny as f64,
                    lengths[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let lz = lengths[2];
    let mean_h = (lengths[0] / nx as f64 + lengths[1] / ny as f64 + lz / nz as f64) / 3.0;
    Ok(Mesh::from_elements(nodes, elements, mean_h, |nodes, face| {
        let zs = face.map(|n| nodes[n].z);
        if zs.iter().all(|&z| z == 0.0) {
            SurfaceTag::Endo
        } else if zs.iter().all(|&z| z == lz) {
            SurfaceTag::Epi
        } else {
            SurfaceTag::Other
        }
    }))
}
