//! Q1 finite elements on hexahedra and the sparse linear algebra behind them.

mod assembly;
mod gmres;
mod quadrature;
mod sparse;

pub use assembly::{assemble_mass, assemble_stiffness, nodal_gradient, MeshPattern};
pub use gmres::{cg_solve, gmres_solve, Gmres, GmresConfig, Preconditioner, SolveReport};
pub use quadrature::QuadratureRule;
pub use sparse::SparseMatrix;
