//! Dense matrix kernels, trainable parameters, seeded randomness and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
pub mod ops;
mod param;
mod rng;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::{dot, Matrix};
pub use param::Param;
pub use rng::Rng;
