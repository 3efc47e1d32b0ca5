mod common;

use liftseg::dataset::scene::Shape;
use liftseg::dataset::{
    decode_labels, decode_scan, ego_pose, encode_scan, layout_scene, load_rig, load_scan, synth_scene, write_rig,
    write_scan, Class, ClassMap, DatasetError, Point, PointCloud, SceneSpec, SensorId, SensorRig, IGNORE_ID,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f32s(vals: &[f32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn decodes_two_point_file() {
    let bytes = f32s(&[1.0, 0.0, 0.0, 0.5, 0.0, 1.0, 0.0, 0.25]);
    assert_eq!(bytes.len(), 32);
    let read = decode_scan(&bytes, SensorId::Front).unwrap();
    let pts = read.cloud.points();
    assert_eq!(pts.len(), 2);
    assert_eq!(pts[0], Point { x: 1.0, y: 0.0, z: 0.0, reflectivity: 0.5 });
    assert_eq!(pts[1], Point { x: 0.0, y: 1.0, z: 0.0, reflectivity: 0.25 });
    assert_eq!(read.dropped_non_finite, 0);
}

#[test]
fn rejects_empty_and_ragged_scans() {
    assert!(matches!(decode_scan(&[], SensorId::Front), Err(DatasetError::EmptyScan)));
    assert!(matches!(decode_scan(&[0u8; 20], SensorId::Front), Err(DatasetError::MalformedFile(_))));
    let nan_only = f32s(&[f32::NAN, 0.0, 0.0, 0.5]);
    assert!(matches!(decode_scan(&nan_only, SensorId::Front), Err(DatasetError::EmptyScan)));
}

#[test]
fn drops_non_finite_and_clamps_reflectivity() {
    let bytes = f32s(&[1.0, 2.0, 3.0, 7.0, f32::INFINITY, 0.0, 0.0, 0.1, 4.0, 5.0, 6.0, -2.0]);
    let read = decode_scan(&bytes, SensorId::Down).unwrap();
    assert_eq!(read.dropped_non_finite, 1);
    let refl: Vec<f32> = read.cloud.points().iter().map(|p| p.reflectivity).collect();
    assert_eq!(refl, [1.0, 0.0]);
}

#[test]
fn thousand_random_points_round_trip_through_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points: Vec<Point> = (0..1000)
        .map(|_| Point {
            x: rng.random_range(-100.0..100.0),
            y: rng.random_range(-100.0..100.0),
            z: rng.random_range(-10.0..10.0),
            reflectivity: rng.random_range(0.0..=1.0),
        })
        .collect();
    let cloud = PointCloud::new(points, None, SensorId::Front, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.bin");
    write_scan(&path, &cloud).unwrap();
    let back = load_scan(&path).unwrap().cloud;
    assert_eq!(back.len(), 1000);
    for (a, b) in cloud.points().iter().zip(back.points()) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.z.to_bits(), b.z.to_bits());
        assert_eq!(a.reflectivity.to_bits(), b.reflectivity.to_bits());
    }
}

proptest! {
    #[test]
    fn scan_encoding_is_bit_exact(
        raw in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), 0.0f32..=1.0), 1..200)
    ) {
        let points: Vec<Point> = raw
            .into_iter()
            .filter(|(x, y, z, _)| x.is_finite() && y.is_finite() && z.is_finite())
            .map(|(x, y, z, reflectivity)| Point { x, y, z, reflectivity })
            .collect();
        prop_assume!(!points.is_empty());
        let cloud = PointCloud::new(points, None, SensorId::Front, 0).unwrap();
        let bytes = encode_scan(&cloud);
        let back = decode_scan(&bytes, SensorId::Front).unwrap();
        prop_assert_eq!(encode_scan(&back.cloud), bytes);
    }

    #[test]
    fn label_remap_is_total(raw in any::<u16>(), instance in any::<u16>()) {
        let word = ((instance as u32) << 16) | raw as u32;
        let read = decode_labels(&word.to_le_bytes(), 1, &ClassMap::standard()).unwrap();
        let id = read.labels[0];
        prop_assert!(id == IGNORE_ID || (id as usize) < 9);
    }
}

#[test]
fn label_word_keeps_low_half_only() {
    let read = decode_labels(&0x0001_0002u32.to_le_bytes(), 1, &ClassMap::standard()).unwrap();
    assert_eq!(read.labels, [Class::Forklift.id()]);
    assert_eq!(read.unknown, 0);
    assert!(matches!(
        decode_labels(&[0u8; 8], 3, &ClassMap::standard()),
        Err(DatasetError::LengthMismatch { points: 3, labels: 2 })
    ));
    assert!(matches!(decode_labels(&[0u8; 6], 1, &ClassMap::standard()), Err(DatasetError::MalformedFile(_))));
}

#[test]
fn random_label_file_matches_mask_and_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words: Vec<u32> = (0..5000)
        .map(|_| {
            if rng.random_bool(0.7) {
                rng.random_range(0..12) | (rng.random::<u32>() & 0xFFFF_0000)
            } else {
                rng.random()
            }
        })
        .collect();
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    let read = decode_labels(&bytes, words.len(), &ClassMap::standard()).unwrap();
    let mut unknown = 0;
    for (w, got) in words.iter().zip(&read.labels) {
        let semantic = w & 0xFFFF;
        let want = match semantic {
            1..=9 => (semantic - 1) as u8,
            0 => 255,
            _ => {
                unknown += 1;
                255
            }
        };
        assert_eq!(*got, want, "word {w:#010x}");
    }
    assert_eq!(read.unknown, unknown);
}

#[test]
fn rig_file_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rig.toml");
    let rig = SensorRig::default_with_resolution(16, 128);
    write_rig(&path, &rig).unwrap();
    let back = load_rig(&path).unwrap();
    assert_eq!(back.front.rows, 16);
    assert_eq!(back.down.cols, 128);
    for (a, b) in rig.down.extrinsic.to_matrix().iter().zip(back.down.extrinsic.to_matrix()) {
        assert!((a - b).abs() < 1e-12);
    }

    let text = std::fs::read_to_string(&path).unwrap();
    let front_only: String = text.split("[down]").next().unwrap().to_string();
    assert!(matches!(SensorRig::from_toml(&front_only), Err(DatasetError::MissingSensor("down"))));
}

#[test]
fn same_seed_same_scene_and_plane_only_is_ground() {
    let rig = SensorRig::default_with_resolution(16, 128);
    let a = synth_scene(7, &SceneSpec::default(), &rig).unwrap();
    let b = synth_scene(7, &SceneSpec::default(), &rig).unwrap();
    assert_eq!(encode_scan(&a.front), encode_scan(&b.front));
    assert_eq!(a.front.labels(), b.front.labels());
    assert_eq!(encode_scan(&a.down), encode_scan(&b.down));

    let plane = synth_scene(3, &SceneSpec::plane_only(), &rig).unwrap();
    for s in SensorId::BOTH {
        let labels = plane.cloud(s).labels().unwrap();
        assert!(!labels.is_empty());
        assert!(labels.iter().all(|&l| l == Class::DriveableGround.id()));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let rig = SensorRig::default_with_resolution(16, 128);
    let bad = SceneSpec { inner_radius: -1.0, ..SceneSpec::default() };
    assert!(matches!(synth_scene(0, &bad, &rig), Err(DatasetError::InvalidSpec(_))));
    let bad = SceneSpec { max_range: 0.0, ..SceneSpec::default() };
    assert!(matches!(synth_scene(0, &bad, &rig), Err(DatasetError::InvalidSpec(_))));
}

/// Unsigned distance from `(rho, z)` to the boundary of the meridian
/// section of a solid of revolution with radii `rb` at `z = 0` and `rt` at
/// `z = h`.
fn revolved_distance(rho: f64, z: f64, rb: f64, rt: f64, h: f64) -> f64 {
    let seg = |a: [f64; 2], b: [f64; 2]| {
        let d = [b[0] - a[0], b[1] - a[1]];
        let t = (((rho - a[0]) * d[0] + (z - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
        ((rho - a[0] - t * d[0]).powi(2) + (z - a[1] - t * d[1]).powi(2)).sqrt()
    };
    seg([0.0, 0.0], [rb, 0.0]).min(seg([rb, 0.0], [rt, h])).min(seg([rt, h], [0.0, h]))
}

/// Unsigned distance from `p` to the surface of `shape`, computed from the
/// shape parameters alone.
fn surface_distance(shape: &Shape, p: [f64; 3]) -> f64 {
    match *shape {
        Shape::Plane { point, normal } => {
            let n = common::norm(normal);
            common::dot(common::sub(p, point), normal).abs() / n
        }
        Shape::Cuboid { center, half_extents, yaw } => {
            let d = common::sub(p, center);
            let (s, c) = yaw.sin_cos();
            let local = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let q: Vec<f64> = (0..3).map(|k| local[k].abs() - half_extents[k]).collect();
            let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
            let inside = q[0].max(q[1]).max(q[2]).min(0.0);
            (outside + inside).abs()
        }
        Shape::Cylinder { base, radius, height } => {
            let rho = ((p[0] - base[0]).powi(2) + (p[1] - base[1]).powi(2)).sqrt();
            revolved_distance(rho, p[2] - base[2], radius, radius, height)
        }
        Shape::Frustum { base, bottom_radius, top_radius, height } => {
            let rho = ((p[0] - base[0]).powi(2) + (p[1] - base[1]).powi(2)).sqrt();
            revolved_distance(rho, p[2] - base[2], bottom_radius, top_radius, height)
        }
        Shape::Sphere { center, radius } => (common::norm(common::sub(p, center)) - radius).abs(),
    }
}

#[test]
fn full_scene_class_counts_match_membership_oracle() {
    let rig = SensorRig::default_with_resolution(32, 256);
    for (seed, frame) in [(21u64, 0u64), (22, 3)] {
        let spec = SceneSpec { frame_index: frame, ..common::enclosed_spec() };
        let synth = synth_scene(seed, &spec, &rig).unwrap();
        let layout = layout_scene(seed, &spec).unwrap();
        let ego = ego_pose(&spec);
        for sensor in SensorId::BOTH {
            let to_layout = ego.compose(&rig.sensor(sensor).extrinsic);
            let cloud = synth.cloud(sensor);
            let mut got = [0usize; 9];
            let mut want = [0usize; 9];
            for (pt, &label) in cloud.points().iter().zip(cloud.labels().unwrap()) {
                got[label as usize] += 1;
                let p = to_layout.apply_point(pt.xyz());
                let (best, _) = layout
                    .primitives
                    .iter()
                    .map(|prim| surface_distance(&prim.shape, p))
                    .enumerate()
                    .fold((usize::MAX, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
                let prim = &layout.primitives[best];
                let mut class = prim.class;
                if prim.accepts_decals {
                    for d in &layout.decals {
                        let (s, c) = d.yaw.sin_cos();
                        let (dx, dy) = (p[0] - d.center[0], p[1] - d.center[1]);
                        if (c * dx + s * dy).abs() <= d.half_length && (-s * dx + c * dy).abs() <= d.half_width {
                            class = d.class;
                            break;
                        }
                    }
                }
                want[class.id() as usize] += 1;
            }
            assert_eq!(got, want, "seed {seed} frame {frame} {sensor:?}");
            for c in [Class::DriveableGround, Class::Building] {
                assert!(got[c.id() as usize] > 0, "{c:?} missing");
            }
        }
    }
}
