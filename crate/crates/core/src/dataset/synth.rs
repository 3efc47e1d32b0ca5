//! Seeded generator of labeled dual-sensor scenes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{CastOptions, Decal, Primitive, Scene, Shape};
use super::{Class, DatasetError, PointCloud, SensorId, SensorRig};
use crate::geometry::RigidTransform;

/// Counts and placement ranges for [`synth_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Infinite ground plane `z = 0` (driveable ground).
    pub ground: bool,
    /// Raised slabs of other ground.
    pub curbs: usize,
    /// High-reflectivity stripes painted on the ground.
    pub lane_stripes: usize,
    pub buildings: usize,
    pub objects: usize,
    pub persons: usize,
    pub forklifts: usize,
    pub cars: usize,
    pub vegetation: usize,
    /// Objects are placed in the annulus `[inner_radius, outer_radius]`
    /// around the vehicle origin; buildings just outside it.
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Closed room around the scene so every ray returns.
    pub enclosure: Option<Enclosure>,
    pub max_range: f64,
    pub range_noise_std: f64,
    pub reflectivity_noise: f32,
    /// Frame number; sets the cloud timestamps at 10 Hz and the ego pose.
    pub frame_index: u64,
    /// Vehicle heading change per frame.
    pub ego_yaw_step_deg: f64,
    /// Bound on the vehicle's distance from the layout origin along each
    /// axis; frame `k` sits at `sway · (sin 1.3k, sin 2.1k)`.
    pub ego_sway_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Enclosure {
    pub half_size: f64,
    pub height: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            ground: true,
            curbs: 2,
            lane_stripes: 3,
            buildings: 3,
            objects: 4,
            persons: 3,
            forklifts: 2,
            cars: 1,
            vegetation: 2,
            inner_radius: 3.5,
            outer_radius: 16.0,
            enclosure: None,
            max_range: 80.0,
            range_noise_std: 0.0,
            reflectivity_noise: 0.03,
            frame_index: 0,
            ego_yaw_step_deg: 45.0,
            ego_sway_m: 0.75,
        }
    }
}

impl SceneSpec {
    /// Only the ground plane.
    pub fn plane_only() -> Self {
        Self {
            curbs: 0,
            lane_stripes: 0,
            buildings: 0,
            objects: 0,
            persons: 0,
            forklifts: 0,
            cars: 0,
            vegetation: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::InvalidSpec(msg));
        if !(self.inner_radius > 0.0) || !(self.outer_radius > self.inner_radius) {
            return bad(format!(
                "need 0 < inner_radius < outer_radius, got {} and {}",
                self.inner_radius, self.outer_radius
            ));
        }
        if !(self.max_range > 0.0) {
            return bad(format!("max_range must be positive, got {}", self.max_range));
        }
        if !(self.range_noise_std >= 0.0) || !(self.reflectivity_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !self.ego_yaw_step_deg.is_finite() || !(self.ego_sway_m >= 0.0) {
            return bad("ego yaw step must be finite and sway non-negative".into());
        }
        if self.ego_sway_m * std::f64::consts::SQRT_2 > self.inner_radius - EGO_CLEARANCE {
            return bad(format!(
                "ego sway {} m reaches into the object annulus starting at {} m",
                self.ego_sway_m, self.inner_radius
            ));
        }
        if let Some(e) = self.enclosure {
            if !(e.half_size > 0.0) || !(e.height > 0.0) {
                return bad(format!("enclosure dimensions must be positive, got {e:?}"));
            }
            let reach = self.outer_radius + if self.buildings > 0 { BUILDING_BAND + 7.5 } else { 0.0 };
            if e.half_size <= reach {
                return bad(format!("enclosure half_size {} does not contain the layout radius {reach}", e.half_size));
            }
        }
        Ok(())
    }
}

/// Width of the ring outside `outer_radius` where buildings stand.
const BUILDING_BAND: f64 = 10.0;
const PLACEMENT_ATTEMPTS: usize = 500;
/// Distance the vehicle keeps from the object annulus.
const EGO_CLEARANCE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub front: PointCloud,
    pub down: PointCloud,
}

impl SynthScene {
    pub fn cloud(&self, sensor: SensorId) -> &PointCloud {
        match sensor {
            SensorId::Front => &self.front,
            SensorId::Down => &self.down,
        }
    }
}

struct Layout {
    rng: ChaCha8Rng,
    footprints: Vec<([f64; 2], f64)>,
}

impl Layout {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..=hi)
    }

    fn refl(&mut self, lo: f32, hi: f32) -> f32 {
        self.rng.random_range(lo..=hi)
    }

    /// Finds a free spot in the annulus for a footprint of radius `radius`.
    fn place(&mut self, r_lo: f64, r_hi: f64, radius: f64, what: &str) -> Result<[f64; 2], DatasetError> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            // area-uniform radius
            let r = (self.uniform(r_lo * r_lo, r_hi * r_hi)).sqrt();
            let a = self.uniform(0.0, TAU);
            let c = [r * a.cos(), r * a.sin()];
            let free = self.footprints.iter().all(|(o, or)| {
                let dx = o[0] - c[0];
                let dy = o[1] - c[1];
                (dx * dx + dy * dy).sqrt() > or + radius + 0.3
            });
            if free {
                self.footprints.push((c, radius));
                return Ok(c);
            }
        }
        Err(DatasetError::InvalidSpec(format!(
            "could not place {what} without overlap; reduce counts or widen the annulus"
        )))
    }
}

fn cuboid(center_xy: [f64; 2], half: [f64; 3], z0: f64, yaw: f64) -> Shape {
    Shape::Cuboid { center: [center_xy[0], center_xy[1], z0 + half[2]], half_extents: half, yaw }
}

fn offset(c: [f64; 2], yaw: f64, along: f64) -> [f64; 2] {
    [c[0] + along * yaw.cos(), c[1] + along * yaw.sin()]
}

/// Vehicle pose in the layout frame at `spec.frame_index`; identity at
/// frame 0.
pub fn ego_pose(spec: &SceneSpec) -> RigidTransform {
    let k = spec.frame_index as f64;
    let s = spec.ego_sway_m;
    RigidTransform::from_euler(
        0.0,
        0.0,
        (k * spec.ego_yaw_step_deg).to_radians(),
        [s * (1.3 * k).sin(), s * (2.1 * k).sin(), 0.0],
    )
}

/// Lays out the scene described by `spec` from `seed` and raycasts both
/// sensors of `rig` from the ego pose of `spec.frame_index`. The layout
/// depends on `seed` only, so frames of one seed form a sequence.
/// Deterministic in `(seed, spec, rig)`.
pub fn synth_scene(seed: u64, spec: &SceneSpec, rig: &SensorRig) -> Result<SynthScene, DatasetError> {
    spec.validate()?;
    rig.validate()?;
    let scene = layout_scene(seed, spec)?;
    let opts = CastOptions {
        max_range: spec.max_range,
        range_noise_std: spec.range_noise_std,
        reflectivity_noise: spec.reflectivity_noise,
    };
    let ts = spec.frame_index * 100_000_000;
    let ego = ego_pose(spec);
    let mut clouds = SensorId::BOTH.iter().enumerate().map(|(k, &sensor)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + k as u64 + 2 * spec.frame_index);
        let mut cfg = rig.sensor(sensor).clone();
        cfg.extrinsic = ego.compose(&cfg.extrinsic);
        scene.raycast(&cfg, sensor, &opts, &mut rng).with_sensor(sensor, ts)
    });
    let front = clouds.next().expect("front cloud");
    let down = clouds.next().expect("down cloud");
    Ok(SynthScene { scene, front, down })
}

/// Primitive layout only, without raycasting.
pub fn layout_scene(seed: u64, spec: &SceneSpec) -> Result<Scene, DatasetError> {
    spec.validate()?;
    let mut l = Layout { rng: ChaCha8Rng::seed_from_u64(seed), footprints: Vec::new() };
    let mut prims = Vec::new();
    let mut decals = Vec::new();
    let (r_in, r_out) = (spec.inner_radius, spec.outer_radius);

    if spec.ground {
        let refl = l.refl(0.08, 0.16);
        prims.push(Primitive {
            shape: Shape::Plane { point: [0.0; 3], normal: [0.0, 0.0, 1.0] },
            class: Class::DriveableGround,
            reflectivity: refl,
            accepts_decals: true,
        });
    }
    if let Some(e) = spec.enclosure {
        let refl = l.refl(0.25, 0.4);
        // floor sits below the ground plane so the plane wins where both exist
        prims.push(Primitive {
            shape: Shape::Cuboid {
                center: [0.0, 0.0, (e.height - 1.0) / 2.0],
                half_extents: [e.half_size, e.half_size, (e.height + 1.0) / 2.0],
                yaw: 0.0,
            },
            class: Class::Building,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    for _ in 0..spec.curbs {
        let half = [l.uniform(1.5, 4.0), l.uniform(0.5, 1.5), l.uniform(0.06, 0.1)];
        let yaw = l.uniform(0.0, TAU);
        let c = l.place(r_in, r_out, (half[0] * half[0] + half[1] * half[1]).sqrt(), "curb")?;
        let refl = l.refl(0.18, 0.28);
        prims.push(Primitive {
            shape: cuboid(c, half, 0.0, yaw),
            class: Class::OtherGround,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    for _ in 0..spec.lane_stripes {
        let r = l.uniform(4.0, r_out * r_out).sqrt();
        let a = l.uniform(0.0, TAU);
        let yaw = l.uniform(0.0, TAU);
        let half_length = l.uniform(2.0, 6.0);
        let half_width = l.uniform(0.12, 0.25);
        let refl = l.refl(0.75, 0.95);
        decals.push(Decal {
            center: [r * a.cos(), r * a.sin()],
            half_length,
            half_width,
            yaw,
            class: Class::LaneMarking,
            reflectivity: refl,
        });
    }
    for _ in 0..spec.buildings {
        let half = [l.uniform(2.0, 5.0), l.uniform(2.0, 5.0), l.uniform(2.0, 4.0)];
        let yaw = l.uniform(0.0, TAU);
        let c = l.place(r_out, r_out + BUILDING_BAND, (half[0] * half[0] + half[1] * half[1]).sqrt(), "building")?;
        let refl = l.refl(0.3, 0.5);
        prims.push(Primitive {
            shape: cuboid(c, half, 0.0, yaw),
            class: Class::Building,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    for _ in 0..spec.forklifts {
        let yaw = l.uniform(0.0, TAU);
        let c = l.place(r_in, r_out, 1.6, "forklift")?;
        let refl = l.refl(0.4, 0.6);
        let body = [1.1, 0.55, 0.6];
        // counterweight body, overhead guard and mast at the front
        let shapes = [
            cuboid(c, body, 0.0, yaw),
            cuboid(offset(c, yaw, -0.3), [0.6, 0.55, 0.05], 2.1, yaw),
            cuboid(offset(c, yaw, 1.2), [0.08, 0.45, 1.25], 0.0, yaw),
        ];
        prims.extend(shapes.into_iter().map(|shape| Primitive {
            shape,
            class: Class::Forklift,
            reflectivity: refl,
            accepts_decals: false,
        }));
    }
    for _ in 0..spec.cars {
        let yaw = l.uniform(0.0, TAU);
        let c = l.place(r_in, r_out, 2.4, "car")?;
        let refl = l.refl(0.2, 0.7);
        let shapes =
            [cuboid(c, [2.1, 0.9, 0.35], 0.25, yaw), cuboid(offset(c, yaw, -0.3), [1.1, 0.8, 0.28], 0.95, yaw)];
        prims.extend(shapes.into_iter().map(|shape| Primitive {
            shape,
            class: Class::Car,
            reflectivity: refl,
            accepts_decals: false,
        }));
    }
    for _ in 0..spec.objects {
        let half = [l.uniform(0.25, 0.6), l.uniform(0.25, 0.6), l.uniform(0.2, 0.5)];
        let yaw = l.uniform(0.0, TAU);
        let c = l.place(r_in, r_out, (half[0] * half[0] + half[1] * half[1]).sqrt(), "object")?;
        let refl = l.refl(0.15, 0.6);
        prims.push(Primitive {
            shape: cuboid(c, half, 0.0, yaw),
            class: Class::Object,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    for _ in 0..spec.persons {
        let radius = l.uniform(0.2, 0.28);
        let height = l.uniform(1.6, 1.9);
        let c = l.place(r_in, r_out, radius, "person")?;
        let refl = l.refl(0.3, 0.5);
        prims.push(Primitive {
            shape: Shape::Cylinder { base: [c[0], c[1], 0.0], radius, height },
            class: Class::Person,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    for _ in 0..spec.vegetation {
        let bottom_radius = l.uniform(0.8, 1.4);
        let top_radius = l.uniform(0.1, 0.3);
        let height = l.uniform(2.0, 3.5);
        let c = l.place(r_in, r_out, bottom_radius, "vegetation")?;
        let refl = l.refl(0.15, 0.3);
        prims.push(Primitive {
            shape: Shape::Frustum { base: [c[0], c[1], 0.0], bottom_radius, top_radius, height },
            class: Class::Vegetation,
            reflectivity: refl,
            accepts_decals: false,
        });
    }
    Ok(Scene { primitives: prims, decals })
}
