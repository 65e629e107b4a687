//! In-training probe evaluation on a toy decoder-only language model.

pub mod bench;
mod codec;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod probes;
pub mod seed;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
