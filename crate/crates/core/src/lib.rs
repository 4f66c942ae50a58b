pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod generator;
pub mod imageio;
pub mod params;
pub mod pe;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
