//! Focal token sampling for implicit-position-embedding 3D detection heads.
//!
//! The crate covers the forward path of a multi-camera, query-based 3D
//! detector whose image tokens carry implicit 3D position embeddings:
//!
//! 1. [`camera`] – pinhole rays, linear-increasing depth bins, projection
//!    and per-token frustum cones.
//! 2. [`encoding`] – ray-point position embeddings, cone-conditioned feature
//!    alignment and key/value composition.
//! 3. [`sampling`] – instance-guided token targets, the quality/centerness/L1
//!    losses with analytic gradients, sampling priority and top-ratio
//!    selection.
//! 4. [`assignment`] – GIoU, matching costs and exact Hungarian assignment.
//! 5. [`decoder`] – anchor queries attending globally over the kept tokens.
//! 6. [`cost_model`] – analytic FLOPs and memory of the detection head.
//! 7. [`harness`] – synthetic camera rigs and scenes, the end-to-end
//!    pipeline and its artifact dumps.
//!
//! [`numeric`] holds the small dense-math substrate shared by all of them.

pub mod assignment;
pub mod camera;
pub mod cost_model;
pub mod decoder;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod sampling;

pub use error::{Error, Result};
