//! Patient-specific monodomain electrophysiology on hexahedral meshes:
//! mesh generation, rule-based fibers, a minimal ventricular ionic model,
//! semi-implicit finite-element stepping, and calibration of the tissue
//! conductivities against measured activation maps.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod activation;
pub mod calibration;
pub mod error;
pub mod fem;
pub mod fibers;
pub mod geometry;
pub mod ionic;
pub mod registration;
pub mod solver;
pub mod twin;

pub use activation::{ActivationSample, ErrorReport, FiveNumber, Group, Regression, Site};
pub use calibration::{CalibrationConfig, CalibrationResult, ConductivityBox, Target};
pub use error::{Error, Result};
pub use fibers::{FiberAngles, FiberField};
pub use geometry::{LvGeometry, Mesh, SurfaceTag, Vec3};
pub use ionic::IonicParams;
pub use registration::{RawCloud, RigidTransform};
pub use solver::{Conductivities, SimulationOutput, SolverParams, StimulusPlan, StimulusSite};
pub use twin::{Twin, TwinConfig};
