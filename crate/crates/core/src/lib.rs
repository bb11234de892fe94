//! Relationship-augmented radiance fields on dense voxel grids.

pub mod data;
pub mod error;
pub mod field;
pub mod graph;
pub mod io;
pub mod math;
pub mod pipeline;
pub mod query;
pub mod relation;
pub mod relseg;
pub mod render;
pub mod service;
pub mod train;

pub use error::{Error, Result};
