//! Vehicle-frame transformation and surface normals.

mod normals;
mod transform;

use thiserror::Error;

use crate::projection::{Frame, SphericalImageSet};

pub use normals::{surface_normals, NormalStats, DEGENERACY_THRESHOLD};
pub use transform::{orthonormal_deviation, RigidTransform, ORTHONORMAL_TOL, REPAIR_TOL};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (deviation {deviation:.3e}, det {determinant:.6})")]
    NotARigidTransform { deviation: f64, determinant: f64 },
    #[error("bottom row of homogeneous matrix must be [0 0 0 1], got {0:?}")]
    NotHomogeneous([f64; 4]),
    #[error("transform contains non-finite entries")]
    NonFinite,
    #[error("image is in the {found:?} frame, expected {expected:?}")]
    FrameMismatch { expected: Frame, found: Frame },
}

/// Moves every valid pixel into the vehicle frame, `p ↦ R p + t`.
///
/// The range plane stays in the sensor frame: it describes the projection
/// grid, which is defined by the sensor.
pub fn apply(tf: &RigidTransform, img: &SphericalImageSet) -> Result<SphericalImageSet, GeometryError> {
    if img.frame != Frame::Sensor {
        return Err(GeometryError::FrameMismatch { expected: Frame::Sensor, found: img.frame });
    }
    let mut out = img.clone();
    for i in 0..img.len() {
        if img.valid[i] {
            out.xyz[i] = tf.apply_point(img.xyz[i]);
        }
        if img.normal_valid[i] {
            out.normals[i] = tf.rotate_vector(img.normals[i]);
        }
    }
    out.sensor_origin = tf.apply_point(img.sensor_origin);
    out.frame = Frame::Vehicle;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Point, PointCloud, SensorId};
    use crate::projection::{project, ProjectionModel};

    fn small_image() -> SphericalImageSet {
        let pts = [[3.0f32, 1.0, 0.2], [-2.0, 4.0, -1.0], [0.5, -5.0, 0.7]]
            .iter()
            .map(|p| Point { x: p[0], y: p[1], z: p[2], reflectivity: 0.5 })
            .collect();
        let cloud = PointCloud::new(pts, None, SensorId::Front, 0).unwrap();
        project(&cloud, &ProjectionModel::new(8, 32, 45.0, -45.0).unwrap()).unwrap().0
    }

    #[test]
    fn identity_only_flips_the_frame_tag() {
        let img = small_image();
        let out = apply(&RigidTransform::identity(), &img).unwrap();
        assert_eq!(out.xyz, img.xyz);
        assert_eq!(out.range, img.range);
        assert_eq!(out.frame, Frame::Vehicle);
    }

    #[test]
    fn translation_raises_every_valid_point() {
        let img = small_image();
        let out = apply(&RigidTransform::from_translation([0.0, 0.0, 2.4]), &img).unwrap();
        for i in 0..img.len() {
            if img.valid[i] {
                assert!((out.xyz[i][2] - img.xyz[i][2] - 2.4).abs() < 1e-12);
                assert_eq!(out.range[i], img.range[i]);
            } else {
                assert_eq!(out.xyz[i], [0.0; 3]);
            }
        }
        assert_eq!(out.sensor_origin, [0.0, 0.0, 2.4]);
    }

    #[test]
    fn applying_twice_is_a_frame_mismatch() {
        let img = small_image();
        let out = apply(&RigidTransform::identity(), &img).unwrap();
        assert!(matches!(apply(&RigidTransform::identity(), &out), Err(GeometryError::FrameMismatch { .. })));
    }
}
