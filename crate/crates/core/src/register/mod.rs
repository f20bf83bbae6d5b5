//! Pairwise direct affine registration.
//!
//! Frames are aligned by minimising a robust, bidirectional photometric
//! cost with Levenberg–Marquardt over a Gaussian pyramid. The Jacobian is
//! computed analytically; see [`cost`] for the residual definitions.

pub mod cost;
mod options;
mod pyramid;
mod solver;

pub use cost::{huber, photometric_cost, CostEvaluation, Direction, MIN_VALID_FRACTION};
pub use options::RegistrationOptions;
pub use pyramid::{build_pyramid, effective_levels, presmooth, Pyramid, MIN_LEVEL_SIDE};
pub use solver::{lm_solve, register_pair, RegistrationResult};
