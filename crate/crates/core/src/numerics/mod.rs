//! Dense vectors, reproducible random streams, batch sampling and
//! finite-difference oracles.

mod fd;
pub mod linalg;
mod rng;
mod vector;

pub use fd::{finite_difference_directional, finite_difference_grad, DEFAULT_FD_STEP};
pub use rng::{sample_batch, BatchIndices, RngStream};
pub use vector::{reduce_sum, Vector};
