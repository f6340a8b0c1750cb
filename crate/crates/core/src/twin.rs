//! Synthetic measurement sets generated by the model itself, with a known
//! ground truth: conductivities, fibers and the rigid placement of the
//! mapping frame.

use std::f64::consts::PI;
use std::path::Path;

use log::info;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::activation::Site;
use crate::error::{Error, Result};
use crate::fibers::{fibers_for_mesh, FiberAngles, FiberField};
use crate::geometry::{build_lv_mesh, LvGeometry, Mesh, SurfaceTag, Vec3};
use crate::registration::{write_measurements, write_reference_pairs, MeasuredPoint, RawCloud, RigidTransform};
use crate::solver::{simulate, Conductivities, SimulationOutput, SolverParams, StimulusPlan, StimulusSite};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    pub geometry: LvGeometry,
    /// cm
    pub h: f64,
    pub sigma: Conductivities,
    pub angles: FiberAngles,
    pub septal_points: usize,
    /// Latest septal onset (ms); onsets are drawn uniformly below it.
    pub septal_spread_ms: f64,
    pub vein_points: usize,
    /// Standard deviation of the noise added to vein activation (ms).
    pub noise_ms: f64,
    /// Landmark misplacement in the alternate reference file (mm).
    pub reference_error_mm: f64,
    /// Mapping frame to mesh frame: rotation axis, angle (deg), shift (cm).
    pub frame_axis: [f64; 3],
    pub frame_angle_deg: f64,
    pub frame_shift: [f64; 3],
    pub solver: SolverParams,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            geometry: LvGeometry {
                endo_semiaxes: [0.5, 0.5, 1.0],
                epi_semiaxes: [0.8, 0.8, 1.3],
                truncation_height: 0.2,
            },
            h: 0.05,
            sigma: Conductivities { f: 1.23, s: 0.25, n: 0.07 },
            angles: FiberAngles::default(),
            septal_points: 6,
            septal_spread_ms: 4.0,
            vein_points: 40,
            noise_ms: 0.0,
            reference_error_mm: 0.5,
            frame_axis: [0.3, -0.5, 1.0],
            frame_angle_deg: 35.0,
            frame_shift: [4.0, -2.5, 7.0],
            solver: SolverParams {
                t_end: 120.0,
                stimulus_radius: 0.3,
                ..SolverParams::default()
            },
            seed: 20,
        }
    }
}

impl TwinConfig {
    /// Mesh frame = `transform` applied to the mapping frame.
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(
            Vec3::from(self.frame_axis),
            self.frame_angle_deg.to_radians(),
            Vec3::from(self.frame_shift),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.septal_points == 0 || self.vein_points < 2 {
            return Err(Error::invalid("a twin needs septal points and at least 2 vein points"));
        }
        if !(self.noise_ms >= 0.0 && self.reference_error_mm >= 0.0 && self.septal_spread_ms >= 0.0) {
            return Err(Error::invalid("noise, reference error and septal spread must be non-negative"));
        }
        if Vec3::from(self.frame_axis).norm() == 0.0 {
            return Err(Error::invalid("frame axis must be nonzero"));
        }
        self.angles.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Twin {
    pub config: TwinConfig,
    pub mesh: Mesh,
    pub fibers: FiberField,
    /// Ground-truth simulation on `mesh`.
    pub truth: SimulationOutput,
    /// Measurements in the mapping frame.
    pub cloud: RawCloud,
    /// Mapping-frame and mesh-frame landmarks.
    pub reference: ([Vec3; 3], [Vec3; 3]),
    /// Different landmarks, picked with a placement error.
    pub perturbed: ([Vec3; 3], [Vec3; 3]),
    pub septal_nodes: Vec<usize>,
    pub vein_nodes: Vec<usize>,
}

fn nearest_on(mesh: &Mesh, candidates: &[usize], p: Vec3) -> usize {
    *candidates
        .iter()
        .min_by(|&&a, &&b| (mesh.nodes()[a] - p).norm_squared().total_cmp(&(mesh.nodes()[b] - p).norm_squared()))
        .expect("nonempty candidate set")
}

/// Point on an ellipsoid with semiaxes `s` at azimuth `theta` and height `z`.
fn on_ellipsoid(s: [f64; 3], theta: f64, z: f64) -> Vec3 {
    let r = (1.0 - (z / s[2]).powi(2)).max(0.0).sqrt();
    Vec3::new(s[0] * r * theta.cos(), s[1] * r * theta.sin(), z)
}

/// Builds the twin: mesh, fibers, one simulation at the true conductivities
/// and the derived measurement files' contents.
pub fn build_twin(config: &TwinConfig) -> Result<Twin> {
    config.validate()?;
    let g = &config.geometry;
    let mesh = build_lv_mesh(g, config.h)?;
    let fibers = fibers_for_mesh(&mesh, &config.angles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let top = g.truncation_height;

    // Septum on the -x side of the endocardium, spread over the mid cavity.
    let endo = mesh.surface_nodes(&[SurfaceTag::Endo]);
    let mut septal_nodes = Vec::with_capacity(config.septal_points);
    let depth = top + g.endo_semiaxes[2];
    for k in 0..config.septal_points {
        let frac = 0.25 + 0.5 * (k as f64 + 0.5) / config.septal_points as f64;
        let theta = PI + 0.35 * if k % 2 == 0 { 1.0 } else { -1.0 };
        let p = on_ellipsoid(g.endo_semiaxes, theta, top - frac * depth);
        let node = nearest_on(&mesh, &endo, p);
        if !septal_nodes.contains(&node) {
            septal_nodes.push(node);
        }
    }
    let onsets: Vec<f64> = septal_nodes
        .iter()
        .map(|_| rng.random_range(0.0..=config.septal_spread_ms))
        .collect();
    let plan = StimulusPlan::new(
        septal_nodes
            .iter()
            .zip(&onsets)
            .map(|(&i, &onset)| StimulusSite {
                location: mesh.nodes()[i].into(),
                onset,
            })
            .collect(),
    );

    let solver = SolverParams {
        sigma: config.sigma,
        ..config.solver.clone()
    };
    info!("twin: {} nodes, simulating the truth", mesh.node_count());
    let truth = simulate(&mesh, Some(&fibers), &solver, &plan)?;

    // Veins on the free wall (+x half of the epicardium), away from the base
    // rim and the apex.
    let c = g.epi_semiaxes[2];
    let wall: Vec<usize> = mesh
        .surface_nodes(&[SurfaceTag::Epi])
        .into_iter()
        .filter(|&i| {
            let p = mesh.nodes()[i];
            p.x > 0.0 && p.z < top - 2.0 * config.h && p.z > -0.75 * c && truth.activation[i].is_some()
        })
        .collect();
    if wall.len() < config.vein_points {
        return Err(Error::invalid(format!(
            "only {} activated free-wall nodes for {} vein points",
            wall.len(),
            config.vein_points
        )));
    }
    let mut vein_nodes: Vec<usize> = sample(&mut rng, wall.len(), config.vein_points)
        .into_iter()
        .map(|k| wall[k])
        .collect();
    vein_nodes.sort_unstable();

    let to_map = config.transform().inverse();
    let noise = Normal::new(0.0, config.noise_ms).map_err(|e| Error::invalid(e.to_string()))?;
    let mut points = Vec::with_capacity(septal_nodes.len() + vein_nodes.len());
    for (&i, &onset) in septal_nodes.iter().zip(&onsets) {
        points.push(MeasuredPoint {
            location: to_map.apply(&mesh.nodes()[i]),
            tau: onset,
            site: Site::Septum,
        });
    }
    for &i in &vein_nodes {
        let tau = truth.activation[i].expect("filtered to activated nodes");
        points.push(MeasuredPoint {
            location: to_map.apply(&mesh.nodes()[i]),
            tau: (tau + noise.sample(&mut rng)).max(0.0),
            site: Site::Vein,
        });
    }

    let epi = mesh.surface_nodes(&[SurfaceTag::Epi]);
    let s = g.epi_semiaxes;
    let landmarks = |spots: [(f64, f64); 3]| spots.map(|(theta, z)| nearest_on(&mesh, &epi, on_ellipsoid(s, theta, z)));
    let apex_z = -0.95 * c;
    let base_z = top - config.h;
    let primary = landmarks([(0.0, apex_z), (0.0, base_z), (0.5 * PI, base_z)]);
    let alternate = landmarks([(PI, 0.5 * apex_z), (-0.5 * PI, base_z), (0.25 * PI, 0.5 * (base_z + apex_z))]);
    let target = |nodes: [usize; 3]| nodes.map(|i| mesh.nodes()[i]);
    let reference = {
        let t = target(primary);
        (t.map(|p| to_map.apply(&p)), t)
    };
    let perturbed = {
        let t = target(alternate);
        let err = config.reference_error_mm / 10.0;
        let src = t.map(|p| {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            to_map.apply(&(p + Vec3::from(d) * err))
        });
        (src, t)
    };

    Ok(Twin {
        config: config.clone(),
        mesh,
        fibers,
        truth,
        cloud: RawCloud { points },
        reference,
        perturbed,
        septal_nodes,
        vein_nodes,
    })
}

impl Twin {
    /// `measurements.csv`, `reference_pairs.csv`,
    /// `reference_pairs_perturbed.csv` and `truth.toml` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_measurements(&dir.join("measurements.csv"), &self.cloud)?;
        write_reference_pairs(&dir.join("reference_pairs.csv"), &self.reference.0, &self.reference.1)?;
        write_reference_pairs(
            &dir.join("reference_pairs_perturbed.csv"),
            &self.perturbed.0,
            &self.perturbed.1,
        )?;
        let truth = toml::to_string(&self.config).map_err(|e| Error::invalid(e.to_string()))?;
        let path = dir.join("truth.toml");
        std::fs::write(&path, truth).map_err(|e| Error::io(&path, e))
    }
}
