//! Dynamic dropout scheduling for a minimal character-level GPT: rate
//! schedules, a small reverse-mode tensor library, the model, data handling,
//! and the training loop with metrics and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
