//! Scan, label and rig files plus the synthetic scene generator.
//!
//! File formats follow the SemanticKITTI conventions: `.bin` scans are
//! records of four little-endian float32 values `(x, y, z, reflectivity)`,
//! `.label` files hold one little-endian uint32 per point with the semantic
//! id in the low 16 bits and an instance id in the high 16 bits.

mod classes;
mod cloud;
mod rig;
pub mod scene;
mod synth;

use std::path::Path;

use thiserror::Error;

pub use classes::{Class, ClassId, ClassInfo, ClassMap, IGNORE_ID};
pub use cloud::{
    decode_labels, decode_scan, encode_labels, encode_scan, load_labels, load_scan, write_labels, write_scan,
    LabelRead, Point, PointCloud, ScanRead, SensorId,
};
pub use rig::{load_rig, write_rig, SensorConfig, SensorRig};
pub use synth::{ego_pose, layout_scene, synth_scene, Enclosure, SceneSpec, SynthScene};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("scan contains no points")]
    EmptyScan,
    #[error("label count {labels} does not match point count {points}")]
    LengthMismatch { points: usize, labels: usize },
    #[error("extrinsic rotation deviates from orthonormal by {0:.3e} (repair limit 1e-3)")]
    NotARigidTransform(f64),
    #[error("rig file has no [{0}] sensor")]
    MissingSensor(&'static str),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("config error: {0}")]
    Config(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.display().to_string(), source }
    }
}
