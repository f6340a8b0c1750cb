//! Run configuration files.

use std::path::{Path, PathBuf};

use cardiac_core::calibration::CalibrationConfig;
use cardiac_core::geometry::{build_lv_mesh, build_slab_mesh, vtk, LvGeometry};
use cardiac_core::{FiberAngles, Mesh, SolverParams, StimulusSite, TwinConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Keys accepted in a run configuration; shared by every `--help`.
pub const CONFIG_KEYS: &str = "\
Configuration file (TOML, unknown keys rejected; paths relative to the file):
  [mesh]          kind = \"slab\" | \"lv\" | \"file\"
                  slab: lengths = [x, y, z] (cm), h (cm)
                  lv:   endo_semiaxes, epi_semiaxes (cm), truncation_height (cm), h (cm)
                  file: path (legacy VTK written by gen-mesh)
  [fibers]        mode = \"rule\" | \"none\" | \"file\"; path (file mode)
                  alpha_endo, alpha_epi, beta_endo, beta_epi (deg, rule mode)
  [solver]        chi (1/cm), c_m (uF/cm2), dt, t_end (ms), lumped_mass, reaction,
                  stimulus_amplitude (uA/cm3), stimulus_radius (cm), stimulus_duration (ms),
                  activation_threshold, divergence_bound, snapshot_times, workers,
                  [solver.sigma] f, s, n (mS/cm); [solver.gmres]; [solver.ionic]
  [[stimulus]]    location = [x, y, z] (cm), onset (ms)
  [registration]  measurements, reference_pairs (CSV paths), keep_group_i (optional count)
  [calibration]   initial, tol_ms, max_iters, stagnation, settle_ms,
                  [calibration.bounds.lo|hi] f, s, n; [calibration.beta] f, s, n
  [twin]          geometry, h, sigma, angles, septal_points, septal_spread_ms, vein_points,
                  noise_ms, reference_error_mm, frame_axis, frame_angle_deg, frame_shift,
                  solver, seed
Flags override the file: --mesh replaces [mesh], --workers sets solver.workers,
--seed sets twin.seed.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeshSpec {
    Slab {
        lengths: [f64; 3],
        h: f64,
    },
    Lv {
        endo_semiaxes: [f64; 3],
        epi_semiaxes: [f64; 3],
        truncation_height: f64,
        h: f64,
    },
    File {
        path: PathBuf,
    },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh, CliError> {
        Ok(match self {
            MeshSpec::Slab { lengths, h } => build_slab_mesh(*lengths, *h)?,
            MeshSpec::Lv {
                endo_semiaxes,
                epi_semiaxes,
                truncation_height,
                h,
            } => build_lv_mesh(
                &LvGeometry {
                    endo_semiaxes: *endo_semiaxes,
                    epi_semiaxes: *epi_semiaxes,
                    truncation_height: *truncation_height,
                },
                *h,
            )?,
            MeshSpec::File { path } => vtk::read_mesh(path)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberMode {
    #[default]
    Rule,
    None,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberSpec {
    pub mode: FiberMode,
    pub path: Option<PathBuf>,
    pub alpha_endo: f64,
    pub alpha_epi: f64,
    pub beta_endo: f64,
    pub beta_epi: f64,
}

impl Default for FiberSpec {
    fn default() -> Self {
        let a = FiberAngles::default();
        FiberSpec {
            mode: FiberMode::Rule,
            path: None,
            alpha_endo: a.alpha_endo,
            alpha_epi: a.alpha_epi,
            beta_endo: a.beta_endo,
            beta_epi: a.beta_epi,
        }
    }
}

impl FiberSpec {
    pub fn angles(&self) -> FiberAngles {
        FiberAngles {
            alpha_endo: self.alpha_endo,
            alpha_epi: self.alpha_epi,
            beta_endo: self.beta_endo,
            beta_epi: self.beta_epi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationFiles {
    pub measurements: PathBuf,
    pub reference_pairs: PathBuf,
    /// Calibrate on the earliest `keep_group_i` points only.
    #[serde(default)]
    pub keep_group_i: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: Option<MeshSpec>,
    pub fibers: FiberSpec,
    pub solver: SolverParams,
    pub stimulus: Vec<StimulusSite>,
    pub registration: Option<RegistrationFiles>,
    pub calibration: CalibrationConfig,
    pub twin: Option<TwinConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(MeshSpec::File { path }) = &mut cfg.mesh {
            resolve(base, path);
        }
        if let Some(p) = &mut cfg.fibers.path {
            resolve(base, p);
        }
        if let Some(r) = &mut cfg.registration {
            resolve(base, &mut r.measurements);
            resolve(base, &mut r.reference_pairs);
        }
        Ok(cfg)
    }

    /// Checks that referenced files exist and that the sections agree.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(MeshSpec::File { path }) = &self.mesh {
            paths.push(path);
        }
        match (self.fibers.mode, &self.fibers.path) {
            (FiberMode::File, Some(p)) => paths.push(p),
            (FiberMode::File, None) => return Err(CliError::Usage("fibers.mode = \"file\" needs fibers.path".into())),
            (_, Some(_)) => return Err(CliError::Usage("fibers.path is only read in file mode".into())),
            _ => {}
        }
        if let Some(r) = &self.registration {
            paths.push(&r.measurements);
            paths.push(&r.reference_pairs);
        }
        if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
            return Err(CliError::Usage(format!("referenced file {} does not exist", p.display())));
        }
        self.solver.validate()?;
        self.calibration.validate()?;
        if self.fibers.mode == FiberMode::Rule {
            self.fibers.angles().validate()?;
        }
        Ok(())
    }
}
