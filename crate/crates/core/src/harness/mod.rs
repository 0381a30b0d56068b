//! Synthetic multi-camera scenes, target rendering, the end-to-end run and
//! artifact dumps.
//!
//! Features are seeded random vectors; everything after the image encoder
//! runs as it would on real data.

pub mod dump;
pub mod pipeline;
pub mod scene;
pub mod truth;

pub use pipeline::{run_pipeline, RunOptions, RunOutput, RunReport, ScoreSource};
pub use scene::{generate_scene, AlignmentKind, Object3D, SceneConfig, SyntheticScene};
pub use truth::{render_targets, CameraTruth, ProjectedObject};
