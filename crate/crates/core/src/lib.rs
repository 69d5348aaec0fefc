//! Two-dimensional nonlinear finite-element simulator of cellular aggregate
//! formation modeled as active phase separation.
//!
//! The model tracks four coupled fields on a periodic Lagrangian domain:
//! the spatial cell number density `c` (parametrized over material
//! coordinates), the deformation map `y`, the material bound-pili density
//! `p`, and an independent density-gradient field `g` that is weakly tied
//! to the spatial gradient of `c` through a penalty term. Time integration
//! is backward Euler with adaptive step control; every step is solved by a
//! global Newton-Raphson iteration with a consistent tangent, and the
//! active stress history is integrated per quadrature point by a local
//! Newton solve.

pub mod analysis;
pub mod assembly;
pub mod cli_io;
pub mod constitutive;
pub mod error;
pub mod kinematics;
pub mod mesh;
pub mod solver;
pub mod tensor;

pub use error::SimError;
