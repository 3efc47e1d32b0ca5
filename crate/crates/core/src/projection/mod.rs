//! Spherical projection of point clouds into aligned image planes.
//!
//! Pixel convention: column `u` grows with azimuth `φ = atan2(y, x)` and puts
//! `φ = 0` at column `c_φ = cols / 2`; row `v` grows downward from the top of
//! the field of view. With `Δθ = (fov_up − fov_down) / rows` the projection is
//!
//! ```text
//! u = round(φ / Δφ + c_φ) mod cols
//! v = round(−θ / Δθ + c_θ),     c_θ = fov_up / Δθ − 1/2
//! ```
//!
//! so pixel centers sit at `φ = (u − c_φ) Δφ` and `θ = fov_up − (v + ½) Δθ`.
//! Rounding is half-away-from-zero. Rows outside `[0, rows)` are dropped.

mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, Point, PointCloud, IGNORE_ID};

pub use render::{render_png, Channel, RenderError};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("cannot take spherical coordinates of the origin")]
    ZeroRange,
    #[error("cannot project an empty point cloud")]
    EmptyCloud,
    #[error("expected {expected} destagger shifts (one per row), got {found}")]
    ShiftCount { expected: usize, found: usize },
    #[error("invalid projection model: {0}")]
    InvalidModel(String),
}

/// `(φ, θ, r)` of a point: azimuth in `(−π, π]`, inclination `asin(z / r)`,
/// Euclidean range.
pub fn spherical_coords(p: [f64; 3]) -> Result<(f64, f64, f64), ProjectionError> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 || !r.is_finite() {
        return Err(ProjectionError::ZeroRange);
    }
    let mut phi = p[1].atan2(p[0]);
    if phi == -std::f64::consts::PI {
        phi = std::f64::consts::PI;
    }
    let theta = (p[2] / r).clamp(-1.0, 1.0).asin();
    Ok((phi, theta, r))
}

/// Intrinsics of the spherical projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub delta_phi: f64,
    pub delta_theta: f64,
    pub c_phi: f64,
    pub c_theta: f64,
    pub rows: usize,
    pub cols: usize,
    pub fov_up: f64,
    pub fov_down: f64,
}

impl ProjectionModel {
    /// Image of `rows × cols` pixels spanning `[fov_down, fov_up]` degrees.
    pub fn new(rows: usize, cols: usize, fov_up_deg: f64, fov_down_deg: f64) -> Result<Self, ProjectionError> {
        if rows == 0 || cols == 0 {
            return Err(ProjectionError::InvalidModel(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if !(fov_up_deg > fov_down_deg) || fov_up_deg > 90.0 || fov_down_deg < -90.0 {
            return Err(ProjectionError::InvalidModel(format!(
                "need -90 <= fov_down < fov_up <= 90, got [{fov_down_deg}, {fov_up_deg}]"
            )));
        }
        let fov_up = fov_up_deg.to_radians();
        let fov_down = fov_down_deg.to_radians();
        let delta_theta = (fov_up - fov_down) / rows as f64;
        let delta_phi = 2.0 * std::f64::consts::PI / cols as f64;
        Ok(Self {
            delta_phi,
            delta_theta,
            c_phi: cols as f64 / 2.0,
            c_theta: fov_up / delta_theta - 0.5,
            rows,
            cols,
            fov_up,
            fov_down,
        })
    }

    /// Full-resolution default: 128 × 2048 over ±45°.
    pub fn full_resolution() -> Self {
        Self::new(128, 2048, 45.0, -45.0).expect("valid default model")
    }

    /// Pixel `(u, v)` for the given angles, or `None` when outside the
    /// vertical field of view.
    pub fn pixel(&self, phi: f64, theta: f64) -> Option<(usize, usize)> {
        let uf = (phi / self.delta_phi + self.c_phi).round();
        let vf = (-theta / self.delta_theta + self.c_theta).round();
        if !(vf >= 0.0 && vf < self.rows as f64) {
            return None;
        }
        let u = (uf as i64).rem_euclid(self.cols as i64) as usize;
        Some((u, vf as usize))
    }

    /// Angles `(φ, θ)` at the center of pixel `(u, v)`.
    pub fn ray_angles(&self, u: usize, v: usize) -> (f64, f64) {
        let phi = (u as f64 - self.c_phi) * self.delta_phi;
        let theta = self.fov_up - (v as f64 + 0.5) * self.delta_theta;
        (phi, theta)
    }

    /// Unit direction of the ray through the center of pixel `(u, v)`.
    pub fn ray_direction(&self, u: usize, v: usize) -> [f64; 3] {
        let (phi, theta) = self.ray_angles(u, v);
        [theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Sensor,
    Vehicle,
}

/// Aligned `rows × cols` planes of one projected scan, row-major.
///
/// The validity mask is authoritative: invalid pixels hold zero range, zero
/// coordinates, no source index and the ignore label.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalImageSet {
    pub rows: usize,
    pub cols: usize,
    pub xyz: Vec<[f64; 3]>,
    /// Sensor-frame range. Not recomputed by frame changes.
    pub range: Vec<f64>,
    pub reflectivity: Vec<f32>,
    pub normals: Vec<[f64; 3]>,
    pub normal_valid: Vec<bool>,
    /// Set once normals have been estimated.
    pub normals_ready: bool,
    pub labels: Vec<ClassId>,
    /// Whether `labels` came from an annotated cloud.
    pub has_labels: bool,
    pub valid: Vec<bool>,
    pub point_index: Vec<Option<u32>>,
    pub frame: Frame,
    /// Position of the sensor in the current frame; normals are oriented
    /// toward it.
    pub sensor_origin: [f64; 3],
}

/// Bookkeeping from [`project`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub projected: usize,
    pub out_of_fov: usize,
    /// Points that lost a pixel to a nearer point.
    pub occluded: usize,
    pub zero_range: usize,
}

impl SphericalImageSet {
    pub fn empty(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            xyz: vec![[0.0; 3]; n],
            range: vec![0.0; n],
            reflectivity: vec![0.0; n],
            normals: vec![[0.0; 3]; n],
            normal_valid: vec![false; n],
            normals_ready: false,
            labels: vec![IGNORE_ID; n],
            has_labels: false,
            valid: vec![false; n],
            point_index: vec![None; n],
            frame: Frame::Sensor,
            sensor_origin: [0.0; 3],
        }
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.cols + u
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Checks the mask consistency invariants. Returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.rows * self.cols;
        let lens = [
            self.xyz.len(),
            self.range.len(),
            self.reflectivity.len(),
            self.normals.len(),
            self.normal_valid.len(),
            self.labels.len(),
            self.valid.len(),
            self.point_index.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(format!("plane lengths {lens:?} differ from {n}"));
        }
        for i in 0..n {
            if !self.valid[i] {
                if self.range[i] != 0.0 || self.point_index[i].is_some() || self.labels[i] != IGNORE_ID {
                    return Err(format!("invalid pixel {i} carries data"));
                }
                if self.normal_valid[i] {
                    return Err(format!("invalid pixel {i} has a normal"));
                }
            } else if self.frame == Frame::Sensor {
                let p = self.xyz[i];
                let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if (norm - self.range[i]).abs() > 1e-5 * self.range[i].max(f64::MIN_POSITIVE) {
                    return Err(format!("pixel {i}: range {} != |xyz| {}", self.range[i], norm));
                }
            }
        }
        Ok(())
    }
}

/// Projects a cloud into image planes. On pixel collisions the point with the
/// smaller range wins; ties keep the earlier point.
pub fn project(
    cloud: &PointCloud,
    model: &ProjectionModel,
) -> Result<(SphericalImageSet, ProjectionStats), ProjectionError> {
    if cloud.is_empty() {
        return Err(ProjectionError::EmptyCloud);
    }
    let mut img = SphericalImageSet::empty(model.rows, model.cols);
    let mut stats = ProjectionStats::default();
    let labels = cloud.labels();
    for (i, pt) in cloud.points().iter().enumerate() {
        let p = [pt.x as f64, pt.y as f64, pt.z as f64];
        let Ok((phi, theta, r)) = spherical_coords(p) else {
            stats.zero_range += 1;
            continue;
        };
        let Some((u, v)) = model.pixel(phi, theta) else {
            stats.out_of_fov += 1;
            continue;
        };
        let idx = img.index(u, v);
        if img.valid[idx] {
            stats.occluded += 1;
            if r >= img.range[idx] {
                continue;
            }
        } else {
            stats.projected += 1;
        }
        img.valid[idx] = true;
        img.xyz[idx] = p;
        img.range[idx] = r;
        img.reflectivity[idx] = pt.reflectivity;
        img.point_index[idx] = Some(i as u32);
        img.labels[idx] = labels.map_or(IGNORE_ID, |l| l[i]);
    }
    img.has_labels = labels.is_some();
    Ok((img, stats))
}

/// Circularly shifts each row `v` right by `shifts[v]` pixels.
/// `destagger(destagger(img, s), -s)` is the identity.
pub fn destagger(img: &SphericalImageSet, shifts: &[i32]) -> Result<SphericalImageSet, ProjectionError> {
    if shifts.len() != img.rows {
        return Err(ProjectionError::ShiftCount { expected: img.rows, found: shifts.len() });
    }
    if shifts.iter().all(|&s| s == 0) {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    let cols = img.cols as i64;
    for (v, &shift) in shifts.iter().enumerate() {
        for u in 0..img.cols {
            let dst = (u as i64 + shift as i64).rem_euclid(cols) as usize;
            let s = img.index(u, v);
            let d = out.index(dst, v);
            out.xyz[d] = img.xyz[s];
            out.range[d] = img.range[s];
            out.reflectivity[d] = img.reflectivity[s];
            out.normals[d] = img.normals[s];
            out.normal_valid[d] = img.normal_valid[s];
            out.labels[d] = img.labels[s];
            out.valid[d] = img.valid[s];
            out.point_index[d] = img.point_index[s];
        }
    }
    Ok(out)
}

/// Emits one point per valid pixel in row-major order, in the image's
/// current frame.
pub fn unproject(img: &SphericalImageSet, sensor: crate::dataset::SensorId) -> PointCloud {
    let mut points = Vec::with_capacity(img.valid_count());
    let mut labels = Vec::with_capacity(points.capacity());
    for i in 0..img.len() {
        if !img.valid[i] {
            continue;
        }
        let p = img.xyz[i];
        points.push(Point { x: p[0] as f32, y: p[1] as f32, z: p[2] as f32, reflectivity: img.reflectivity[i] });
        labels.push(img.labels[i]);
    }
    let labels = img.has_labels.then_some(labels);
    PointCloud::from_parts_unchecked(points, labels, sensor, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SensorId;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn cloud(points: &[[f32; 4]], labels: Option<Vec<ClassId>>) -> PointCloud {
        let pts = points.iter().map(|p| Point { x: p[0], y: p[1], z: p[2], reflectivity: p[3] }).collect();
        PointCloud::new(pts, labels, SensorId::Front, 0).unwrap()
    }

    #[test]
    fn spherical_axis_cases() {
        let (phi, theta, r) = spherical_coords([1.0, 0.0, 0.0]).unwrap();
        assert_eq!((phi, theta, r), (0.0, 0.0, 1.0));
        let (phi, theta, r) = spherical_coords([0.0, 1.0, 1.0]).unwrap();
        assert!((phi - FRAC_PI_2).abs() < 1e-15);
        assert!((theta - FRAC_PI_4).abs() < 1e-15);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        let (phi, _, _) = spherical_coords([-1.0, -0.0, 0.0]).unwrap();
        assert_eq!(phi, PI);
        assert!(matches!(spherical_coords([0.0; 3]), Err(ProjectionError::ZeroRange)));
    }

    #[test]
    fn model_defaults_match_head_shape() {
        let m = ProjectionModel::full_resolution();
        assert_eq!((m.rows, m.cols), (128, 2048));
        assert!((m.delta_phi - 2.0 * PI / 2048.0).abs() < 1e-15);
        assert!((m.delta_theta - 90f64.to_radians() / 128.0).abs() < 1e-15);
    }

    #[test]
    fn single_point_lands_at_center_column_top_row() {
        let m = ProjectionModel::new(16, 64, 45.0, -45.0).unwrap();
        let theta = m.fov_up - m.delta_theta / 2.0;
        let p = [10.0 * theta.cos(), 0.0, 10.0 * theta.sin()];
        let c = cloud(&[[p[0] as f32, p[1] as f32, p[2] as f32, 0.5]], None);
        let (img, stats) = project(&c, &m).unwrap();
        let (u, v) = (m.c_phi as usize, 0);
        assert!(img.valid[img.index(u, v)]);
        assert_eq!(img.valid_count(), 1);
        assert_eq!(stats.projected, 1);
        img.check_invariants().unwrap();
    }

    #[test]
    fn nearer_point_wins_collision() {
        let m = ProjectionModel::new(16, 64, 45.0, -45.0).unwrap();
        let c = cloud(&[[5.0, 0.0, 0.1, 0.1], [3.0, 0.0, 0.06, 0.9], [4.0, 0.0, 0.08, 0.4]], None);
        let (img, stats) = project(&c, &m).unwrap();
        assert_eq!(img.valid_count(), 1);
        let i = img.valid.iter().position(|v| *v).unwrap();
        assert_eq!(img.point_index[i], Some(1));
        assert!((img.range[i] - (9.0f64 + 0.06f32 as f64 * 0.06f32 as f64).sqrt()).abs() < 1e-12);
        assert_eq!(stats.occluded, 2);
    }

    #[test]
    fn out_of_fov_points_are_dropped() {
        let m = ProjectionModel::new(8, 32, 10.0, -10.0).unwrap();
        let c = cloud(&[[1.0, 0.0, 1.0, 0.0], [1.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]], Some(vec![1, 2, 3]));
        let (img, stats) = project(&c, &m).unwrap();
        assert_eq!(stats.out_of_fov, 2);
        assert_eq!(img.valid_count(), 1);
        assert!(img.has_labels);
        let i = img.valid.iter().position(|v| *v).unwrap();
        assert_eq!(img.labels[i], 3);
    }

    #[test]
    fn destagger_identity_cases() {
        let m = ProjectionModel::new(4, 8, 45.0, -45.0).unwrap();
        let c = cloud(&[[1.0, 0.2, 0.1, 0.3], [0.0, 2.0, -0.5, 0.7], [-3.0, -1.0, 0.4, 0.2]], None);
        let (img, _) = project(&c, &m).unwrap();
        assert_eq!(destagger(&img, &[0; 4]).unwrap(), img);
        assert_eq!(destagger(&img, &[8, -8, 16, 0]).unwrap(), img);
        assert!(matches!(destagger(&img, &[0; 3]), Err(ProjectionError::ShiftCount { expected: 4, found: 3 })));
    }

    #[test]
    fn unproject_then_project_is_identity() {
        let m = ProjectionModel::new(8, 32, 30.0, -30.0).unwrap();
        let c = cloud(&[[4.0, 1.0, 0.5, 0.3], [-2.0, 3.0, -0.4, 0.6], [0.5, -6.0, 1.0, 0.9]], Some(vec![0, 4, 8]));
        let (img, _) = project(&c, &m).unwrap();
        let back = unproject(&img, SensorId::Front);
        let (img2, _) = project(&back, &m).unwrap();
        assert_eq!(img.valid, img2.valid);
        assert_eq!(img.xyz, img2.xyz);
        assert_eq!(img.labels, img2.labels);
        assert_eq!(img.reflectivity, img2.reflectivity);
    }
}
