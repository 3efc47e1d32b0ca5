//! Reference computations written independently of the library.

use std::f64::consts::PI;

use liftseg::{ClassId, Tensor, IGNORE_ID};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Pixel and range of a point under the projection conventions, or `None`
/// outside the vertical field of view.
pub fn pixel(p: [f64; 3], rows: usize, cols: usize, up_deg: f64, down_deg: f64) -> Option<(usize, usize, f64)> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let phi = p[1].atan2(p[0]);
    let theta = (p[2] / r).asin();
    let dphi = 2.0 * PI / cols as f64;
    let dtheta = (up_deg - down_deg).to_radians() / rows as f64;
    let v = ((up_deg.to_radians() - theta) / dtheta - 0.5).round();
    if v < 0.0 || v >= rows as f64 {
        return None;
    }
    let u = ((phi / dphi + cols as f64 / 2.0).round() as i64).rem_euclid(cols as i64) as usize;
    Some((u, v as usize, r))
}

/// Row-major 4×4 matrix of a rotation about a random axis (Rodrigues) and a
/// random translation.
pub fn random_matrix(rng: &mut ChaCha8Rng) -> [f64; 16] {
    let mut k = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let n = super::norm(k);
    k = k.map(|v| v / n);
    let a: f64 = rng.random_range(-3.1..3.1);
    let (s, c) = a.sin_cos();
    let kk = |i: usize, j: usize| (1.0 - c) * k[i] * k[j];
    let r = [
        [c + kk(0, 0), kk(0, 1) - s * k[2], kk(0, 2) + s * k[1]],
        [kk(1, 0) + s * k[2], c + kk(1, 1), kk(1, 2) - s * k[0]],
        [kk(2, 0) - s * k[1], kk(2, 1) + s * k[0], c + kk(2, 2)],
    ];
    let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    [
        r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2], 0.0, 0.0,
        0.0, 1.0,
    ]
}

pub fn mat_apply(m: &[f64; 16], p: [f64; 3]) -> [f64; 3] {
    let h = [p[0], p[1], p[2], 1.0];
    let row = |r: usize| (0..4).map(|c| m[4 * r + c] * h[c]).sum::<f64>();
    let w = row(3);
    [row(0) / w, row(1) / w, row(2) / w]
}

pub fn random_target(rng: &mut ChaCha8Rng, len: usize, classes: usize, ignore_rate: f64) -> Vec<ClassId> {
    (0..len)
        .map(|_| if rng.random_bool(ignore_rate) { IGNORE_ID } else { rng.random_range(0..classes) as ClassId })
        .collect()
}

/// Softmax over the class axis of an NCHW tensor, written per pixel.
pub fn softmax_probs(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = x.clone();
    for b in 0..n {
        for p in 0..hw {
            let at = |k: usize| (b * c + k) * hw + p;
            let m = (0..c).map(|k| x.data()[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|k| (x.data()[at(k)] - m).exp()).sum();
            for k in 0..c {
                out.data_mut()[at(k)] = (x.data()[at(k)] - m).exp() / z;
            }
        }
    }
    out
}

pub fn cross_entropy(x: &Tensor<f64>, t: &[ClassId], weights: &[f64]) -> f64 {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &label) in t.iter().enumerate() {
        if label == IGNORE_ID {
            continue;
        }
        let (b, p) = (i / hw, i % hw);
        let z: Vec<f64> = (0..c).map(|k| x.data()[(b * c + k) * hw + p]).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let w = weights.get(label as usize).copied().unwrap_or(1.0);
        total += -w * (z[label as usize] - lse);
        count += 1;
    }
    total / count.max(1) as f64
}

/// Soft counts accumulated pixel by pixel, one class at a time.
pub fn tversky(probs: &Tensor<f64>, t: &[ClassId], alpha: f64, beta: f64) -> f64 {
    let s = probs.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mut loss = 0.0;
    for k in 0..c {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (i, &label) in t.iter().enumerate() {
            if label == IGNORE_ID {
                continue;
            }
            let (b, p) = (i / hw, i % hw);
            let pk = probs.data()[(b * c + k) * hw + p];
            if label as usize == k {
                tp += pk;
                fneg += 1.0 - pk;
            } else {
                fp += pk;
            }
        }
        loss += 1.0 - (tp + 1.0) / (tp + alpha * fp + beta * fneg + 1.0);
    }
    loss / c as f64
}

/// Soft Dice with add-two smoothing, from intersections and sums only.
pub fn soft_dice(probs: &Tensor<f64>, t: &[ClassId]) -> f64 {
    let s = probs.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mut loss = 0.0;
    for k in 0..c {
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut gsum = 0.0;
        for (i, &label) in t.iter().enumerate().filter(|(_, l)| **l != IGNORE_ID) {
            let pk = probs.data()[((i / hw) * c + k) * hw + i % hw];
            let gk = if label as usize == k { 1.0 } else { 0.0 };
            inter += pk * gk;
            psum += pk;
            gsum += gk;
        }
        loss += 1.0 - (2.0 * inter + 2.0) / (psum + gsum + 2.0);
    }
    loss / c as f64
}

/// Per-class IoU from explicit pixel sets; `None` for empty unions.
pub fn set_iou(pred: &[ClassId], gt: &[ClassId], classes: usize) -> Vec<Option<f64>> {
    use std::collections::HashSet;
    let evaluated: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] != IGNORE_ID).collect();
    (0..classes as ClassId)
        .map(|k| {
            let g: HashSet<usize> = evaluated.iter().copied().filter(|&i| gt[i] == k).collect();
            let p: HashSet<usize> = evaluated.iter().copied().filter(|&i| pred[i] == k).collect();
            let union = g.union(&p).count();
            (union > 0).then(|| g.intersection(&p).count() as f64 / union as f64)
        })
        .collect()
}
