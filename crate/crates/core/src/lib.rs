//! Range-image semantic segmentation for a dual-LiDAR industrial vehicle.
//!
//! The pipeline turns one revolution of each LiDAR into aligned spherical
//! image planes, moves them into the ISO 8855 vehicle frame, estimates
//! surface normals, and runs a small convolutional segmenter (residual
//! backbone with geometry re-injection, self-attention neck, feature pyramid
//! merge, deconvolution head) trained with cross-entropy plus Tversky loss.
//!
//! Module map:
//!
//! - [`dataset`]: class taxonomy, binary scan/label files, sensor rig
//!   configuration and the synthetic scene generator.
//! - [`projection`]: spherical projection, destaggering, unprojection and
//!   PNG rendering of image planes.
//! - [`geometry`]: rigid transforms and finite-difference surface normals.
//! - [`tensor`]: dense tensors with tape-based reverse-mode differentiation.
//! - [`segnet`]: the segmentation network, prediction and checkpoints.
//! - [`objectives`]: losses, confusion matrix and IoU metrics.
//! - [`harness`]: preprocessing pipeline, training, dual inference,
//!   evaluation and latency benchmarking.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod geometry;
pub mod harness;
pub mod objectives;
pub mod projection;
pub mod segnet;
pub mod tensor;

pub use dataset::{ClassId, ClassMap, PointCloud, SensorId, SensorRig, IGNORE_ID};
pub use geometry::RigidTransform;
pub use projection::{ProjectionModel, SphericalImageSet};
pub use segnet::{NetConfig, SegModel};
pub use tensor::{Graph, Scalar, Tensor, Var};
