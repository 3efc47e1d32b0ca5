//! Analytic scene primitives and ray casting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Class, ClassId, Point, PointCloud, SensorConfig, SensorId};

const T_MIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [self.origin[0] + t * self.dir[0], self.origin[1] + t * self.dir[1], self.origin[2] + t * self.dir[2]]
    }
}

/// Solid shapes in the vehicle frame. Vertical shapes stand on `base`
/// (bottom center) and extend `height` upward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
    /// Box rotated by `yaw` about the vertical axis through `center`.
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
        yaw: f64,
    },
    Cylinder {
        base: [f64; 3],
        radius: f64,
        height: f64,
    },
    /// Truncated cone.
    Frustum {
        base: [f64; 3],
        bottom_radius: f64,
        top_radius: f64,
        height: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Roots of `a t² + b t + c` in ascending order.
fn quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-14 {
        if b.abs() < 1e-14 {
            return None;
        }
        let t = -c / b;
        return Some((t, t));
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable form
    let q = -0.5 * (b + b.signum() * sq);
    let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((t0.min(t1), t0.max(t1)))
}

fn nearest(candidates: impl IntoIterator<Item = f64>) -> Option<f64> {
    candidates
        .into_iter()
        .filter(|t| *t > T_MIN && t.is_finite())
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
}

impl Shape {
    /// Distance along the ray to the first surface crossing, including exits
    /// when the origin is inside the solid.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match *self {
            Shape::Plane { point, normal } => {
                let denom = dot(normal, ray.dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                nearest([dot(normal, sub(point, ray.origin)) / denom])
            }
            Shape::Sphere { center, radius } => {
                let oc = sub(ray.origin, center);
                let (t0, t1) = quadratic(dot(ray.dir, ray.dir), 2.0 * dot(oc, ray.dir), dot(oc, oc) - radius * radius)?;
                nearest([t0, t1])
            }
            Shape::Cuboid { center, half_extents, yaw } => {
                let (s, c) = yaw.sin_cos();
                let rel = sub(ray.origin, center);
                // rotate into the box frame by -yaw
                let o = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
                let d = [c * ray.dir[0] + s * ray.dir[1], -s * ray.dir[0] + c * ray.dir[1], ray.dir[2]];
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > half_extents[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[k] - o[k]) / d[k];
                    let b = (half_extents[k] - o[k]) / d[k];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    return None;
                }
                nearest([if t_near > T_MIN { t_near } else { t_far }])
            }
            Shape::Cylinder { base, radius, height } => {
                Shape::Frustum { base, bottom_radius: radius, top_radius: radius, height }.intersect(ray)
            }
            Shape::Frustum { base, bottom_radius, top_radius, height } => {
                let o = sub(ray.origin, base);
                let d = ray.dir;
                let k = (top_radius - bottom_radius) / height;
                let r0 = bottom_radius + k * o[2];
                let a = d[0] * d[0] + d[1] * d[1] - k * k * d[2] * d[2];
                let b = 2.0 * (o[0] * d[0] + o[1] * d[1] - k * r0 * d[2]);
                let c = o[0] * o[0] + o[1] * o[1] - r0 * r0;
                let mut cands = [f64::NAN; 4];
                if let Some((t0, t1)) = quadratic(a, b, c) {
                    for (slot, t) in [t0, t1].into_iter().enumerate() {
                        let z = o[2] + t * d[2];
                        if (0.0..=height).contains(&z) && r0 + k * t * d[2] >= 0.0 {
                            cands[slot] = t;
                        }
                    }
                }
                if d[2].abs() > 1e-15 {
                    for (slot, (z, r)) in [(0.0, bottom_radius), (height, top_radius)].into_iter().enumerate() {
                        let t = (z - o[2]) / d[2];
                        let x = o[0] + t * d[0];
                        let y = o[1] + t * d[1];
                        if x * x + y * y <= r * r {
                            cands[2 + slot] = t;
                        }
                    }
                }
                nearest(cands.into_iter().filter(|t| !t.is_nan()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub class: Class,
    pub reflectivity: f32,
    /// Decals only paint hits on primitives with this flag (the ground).
    #[serde(default)]
    pub accepts_decals: bool,
}

/// Flat rectangle painted onto decal-accepting surfaces (lane markings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decal {
    pub center: [f64; 2],
    pub half_length: f64,
    pub half_width: f64,
    pub yaw: f64,
    pub class: Class,
    pub reflectivity: f32,
}

impl Decal {
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.half_length && ly.abs() <= self.half_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: usize,
    pub class: Class,
    pub reflectivity: f32,
}

/// Options for turning ray hits into returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CastOptions {
    pub max_range: f64,
    /// Standard deviation of Gaussian range noise, meters.
    pub range_noise_std: f64,
    /// Half-width of uniform reflectivity noise.
    pub reflectivity_noise: f32,
}

impl Default for CastOptions {
    fn default() -> Self {
        Self { max_range: 80.0, range_noise_std: 0.0, reflectivity_noise: 0.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub decals: Vec<Decal>,
}

impl Scene {
    pub fn cast(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(ray) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, primitive: i, class: prim.class, reflectivity: prim.reflectivity });
                }
            }
        }
        let mut hit = best?;
        if self.primitives[hit.primitive].accepts_decals {
            let p = ray.at(hit.t);
            if let Some(d) = self.decals.iter().find(|d| d.covers(p[0], p[1])) {
                hit.class = d.class;
                hit.reflectivity = d.reflectivity;
            }
        }
        Some(hit)
    }

    /// Casts one ray through every pixel center of the sensor's image grid,
    /// in row-major order, and returns the hits as a labeled sensor-frame
    /// cloud. Rays that miss or exceed `max_range` produce no point.
    pub fn raycast<R: Rng>(
        &self,
        sensor_cfg: &SensorConfig,
        sensor: SensorId,
        opts: &CastOptions,
        rng: &mut R,
    ) -> PointCloud {
        let model = sensor_cfg.projection_model().expect("sensor config validated before raycasting");
        let tf = &sensor_cfg.extrinsic;
        let origin = tf.apply_point([0.0; 3]);
        let inv = tf.inverse();
        let noise = rand_distr::Normal::new(0.0, opts.range_noise_std.max(0.0)).expect("finite std");
        let mut points = Vec::with_capacity(model.rows * model.cols);
        let mut labels: Vec<ClassId> = Vec::with_capacity(points.capacity());
        for v in 0..model.rows {
            for u in 0..model.cols {
                let dir = tf.rotate_vector(model.ray_direction(u, v));
                let ray = Ray { origin, dir };
                let Some(hit) = self.cast(&ray) else { continue };
                let mut t = hit.t;
                if opts.range_noise_std > 0.0 {
                    t += rng.sample(noise);
                }
                if t > opts.max_range || t <= 0.0 {
                    continue;
                }
                let mut refl = hit.reflectivity;
                if opts.reflectivity_noise > 0.0 {
                    refl += rng.random_range(-opts.reflectivity_noise..=opts.reflectivity_noise);
                }
                let p = inv.apply_point(ray.at(t));
                points.push(Point {
                    x: p[0] as f32,
                    y: p[1] as f32,
                    z: p[2] as f32,
                    reflectivity: refl.clamp(0.0, 1.0),
                });
                labels.push(hit.class.id());
            }
        }
        PointCloud::from_parts_unchecked(points, Some(labels), sensor, 0)
    }
}
