//! Numerical building blocks for constant fractional Q-curvature constructions.

pub mod assembler;
pub mod balancing;
pub mod bubbles;
pub mod constants;
pub mod delaunay;
pub mod error;
pub mod fit;
pub mod interactions;
pub mod kernels;
pub mod quad;
pub mod toda;

pub use constants::{derive_params, ProblemParams};
pub use error::{QcError, Result};
