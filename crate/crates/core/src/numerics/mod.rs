//! Dense linear algebra, deterministic random streams and special functions.

mod matrix;
mod rng;
pub mod special;

pub use matrix::{dot, matmul, Matrix};
pub use rng::RngState;
