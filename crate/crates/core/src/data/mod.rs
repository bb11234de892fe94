//! Synthetic desk scenes, ground-truth relations and distilled supervision.

pub mod annotate;
pub mod dataset;
pub mod embedding;
pub mod features;
pub mod raytrace;
pub mod scene;

pub use annotate::{annotate_relations, GroundTruthGraph};
pub use dataset::{CameraRing, Dataset, DatasetConfig, ImageData, ImageRelations, RelationPair};
pub use embedding::EmbeddingTable;
pub use scene::{Primitive, RandomSceneParams, SceneSpec, Shape};
