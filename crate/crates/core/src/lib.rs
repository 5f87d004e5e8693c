//! Adaptive layer-wise gradient compression toolkit.
//!
//! The pipeline: accumulate per-layer gradients over a window, build
//! per-layer error/size tables over a candidate grid
//! ([`error_tables`]), pick per-layer compression parameters under a
//! global error budget with a dynamic program ([`planner`]), and
//! evaluate the choice either through a bucketed communication model
//! ([`comm_model`]) or a deterministic data-parallel training
//! simulation ([`train_sim`]).

pub(crate) mod binio;
pub mod comm_model;
pub mod compressors;
pub mod error;
pub mod error_tables;
pub mod layer;
pub mod planner;
pub mod seeds;
pub mod trace;
pub mod train_sim;

pub use error::{Error, Result};
pub use layer::LayerSpec;
