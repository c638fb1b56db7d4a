//! Dataset ingestion and model persistence.

pub mod checkpoint;
pub mod colmap;
pub mod dataset;
pub mod model;
pub mod ply;
pub mod synth;

pub use dataset::{Dataset, ScenePoint};
pub use model::load_model;
