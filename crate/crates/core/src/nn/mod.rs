//! Fixed-shape networks with hand-written reverse mode.

pub mod adamw;
pub mod block;
pub mod checkpoint;
pub mod model;
pub mod standardize;

pub use adamw::{AdamWConfig, OptimizerState};
pub use block::{Activation, BlockSpec};
pub use model::{mc_dropout_predict, ArchitectureSpec, FusionModel, Mode, Standardizers, Variant};
pub use standardize::Standardizer;
