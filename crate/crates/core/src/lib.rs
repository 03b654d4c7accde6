//! Synthesis, recovery and evaluation of range-image scenes built from
//! unrotated superquadrics.

pub mod compose;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod predictions;
pub mod render;
pub mod sample;

pub use dataset::{generate_dataset, DatasetManifest, GenerateOptions, SceneRecord, Split};
pub use error::{Error, Result};
pub use geometry::{aabb_iou, Aabb3, Point3, SceneBounds, Superquadric};
pub use render::{render, render_bruteforce, InstanceMaskImage, RangeImage, Scene, View};
pub use sample::{crop_instance, sample_scene, sample_scene_by_id, SamplerConfig};
