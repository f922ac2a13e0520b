pub mod burgers;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod field_io;
pub mod fit;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
