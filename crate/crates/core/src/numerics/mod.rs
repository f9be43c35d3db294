//! Seeded randomness, small dense linear algebra, the denoiser network with
//! exact gradients, AdamW and a finite-difference gradient checker.

pub mod adamw;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod rng;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use linalg::Matrix;
pub use mlp::{Activation, DenoiserParams, Gradients, Layer, Tape};
pub use rng::Rng;
