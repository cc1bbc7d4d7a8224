pub mod affinity;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod maps;
pub mod nn;
pub mod policy;
pub mod sim;
pub mod train;

pub use error::{LoatError, Result};
