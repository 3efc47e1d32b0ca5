use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::projection::{Frame, SphericalImageSet};

/// Cross products with a smaller norm are treated as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalStats {
    pub defined: usize,
    /// Valid pixels whose stencil reached an invalid pixel or the bottom row.
    pub missing_neighbors: usize,
    pub degenerate: usize,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Finite-difference normals from the stencil `P_c = (u, v)`,
/// `P_b = (u + 1, v)`, `P_a = (u, v + 1)`:
/// `n = (P_b − P_c) × (P_a − P_c) / ‖·‖`, flipped so that it faces the
/// sensor origin. Column `cols − 1` wraps to column 0; the bottom row has no
/// `v + 1` neighbor and gets no normal.
pub fn surface_normals(img: &SphericalImageSet) -> Result<(SphericalImageSet, NormalStats), GeometryError> {
    if img.frame != Frame::Vehicle {
        return Err(GeometryError::FrameMismatch { expected: Frame::Vehicle, found: img.frame });
    }
    let mut out = img.clone();
    let mut stats = NormalStats::default();
    let origin = img.sensor_origin;
    for v in 0..img.rows {
        for u in 0..img.cols {
            let c = img.index(u, v);
            out.normals[c] = [0.0; 3];
            out.normal_valid[c] = false;
            if !img.valid[c] {
                continue;
            }
            let b = img.index((u + 1) % img.cols, v);
            if v + 1 >= img.rows || !img.valid[b] || !img.valid[img.index(u, v + 1)] {
                stats.missing_neighbors += 1;
                continue;
            }
            let a = img.index(u, v + 1);
            let pc = img.xyz[c];
            let n = cross(sub(img.xyz[b], pc), sub(img.xyz[a], pc));
            let norm = dot(n, n).sqrt();
            if !(norm >= DEGENERACY_THRESHOLD) {
                stats.degenerate += 1;
                continue;
            }
            let sign = if dot(n, sub(origin, pc)) < 0.0 { -1.0 } else { 1.0 };
            out.normals[c] = [sign * n[0] / norm, sign * n[1] / norm, sign * n[2] / norm];
            out.normal_valid[c] = true;
            stats.defined += 1;
        }
    }
    out.normals_ready = true;
    Ok((out, stats))
}
