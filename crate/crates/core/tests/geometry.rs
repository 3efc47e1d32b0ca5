mod common;

use liftseg::dataset::scene::{CastOptions, Primitive, Scene, Shape};
use liftseg::dataset::{Class, SensorConfig, SensorId};
use liftseg::geometry::{apply, surface_normals, GeometryError, RigidTransform};
use liftseg::projection::{project, Frame, SphericalImageSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sensor_image(scene: &Scene, extrinsic: RigidTransform, rows: usize, cols: usize) -> SphericalImageSet {
    let cfg = SensorConfig::new(extrinsic, 45.0, -45.0, rows, cols);
    let cloud = scene.raycast(&cfg, SensorId::Front, &CastOptions::default(), &mut ChaCha8Rng::seed_from_u64(0));
    project(&cloud, &cfg.projection_model().unwrap()).unwrap().0
}

fn plane(point: [f64; 3], normal: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Plane { point, normal },
        class: Class::DriveableGround,
        reflectivity: 0.1,
        accepts_decals: false,
    }
}

#[test]
fn apply_matches_homogeneous_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (rig, scene) = common::full_grid_scene(1, 16, 64);
    let img = project(&scene.front, &rig.front.projection_model().unwrap()).unwrap().0;
    for _ in 0..1000 {
        let m = common::oracles::random_matrix(&mut rng);
        let tf = RigidTransform::from_matrix(&m).unwrap();
        let p = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)];
        assert!(common::norm(common::sub(tf.apply_point(p), common::oracles::mat_apply(&m, p))) < 1e-6);
        assert!(common::norm(common::sub(common::homogeneous_apply(&tf, p), common::oracles::mat_apply(&m, p))) < 1e-6);
    }
    for _ in 0..20 {
        let m = common::oracles::random_matrix(&mut rng);
        let tf = RigidTransform::from_matrix(&m).unwrap();
        let out = apply(&tf, &img).unwrap();
        assert_eq!(out.frame, Frame::Vehicle);
        assert_eq!(out.range, img.range);
        for i in (0..img.len()).filter(|&i| img.valid[i]) {
            assert!(common::norm(common::sub(out.xyz[i], common::oracles::mat_apply(&m, img.xyz[i]))) < 1e-6);
        }
    }
}

#[test]
fn apply_examples_and_frame_guard() {
    let (rig, scene) = common::full_grid_scene(2, 16, 64);
    let img = project(&scene.down, &rig.down.projection_model().unwrap()).unwrap().0;
    let same = apply(&RigidTransform::identity(), &img).unwrap();
    assert_eq!(same.xyz, img.xyz);
    assert_eq!(same.frame, Frame::Vehicle);
    let up = apply(&RigidTransform::from_translation([0.0, 0.0, 2.4]), &img).unwrap();
    for i in (0..img.len()).filter(|&i| img.valid[i]) {
        assert!((up.xyz[i][2] - img.xyz[i][2] - 2.4).abs() < 1e-12);
        assert_eq!(up.xyz[i][0], img.xyz[i][0]);
    }
    assert!(matches!(
        apply(&RigidTransform::identity(), &up),
        Err(GeometryError::FrameMismatch { expected: Frame::Sensor, found: Frame::Vehicle })
    ));
    assert!(matches!(surface_normals(&img), Err(GeometryError::FrameMismatch { .. })));
}

#[test]
fn compose_is_pointwise_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let a = RigidTransform::from_matrix(&common::oracles::random_matrix(&mut rng)).unwrap();
        let b = RigidTransform::from_matrix(&common::oracles::random_matrix(&mut rng)).unwrap();
        let ab = a.compose(&b);
        let p = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        assert!(common::norm(common::sub(ab.apply_point(p), a.apply_point(b.apply_point(p)))) < 1e-9);
        let back = a.inverse().apply_point(a.apply_point(p));
        assert!(common::norm(common::sub(back, p)) < 1e-9);
    }
}

#[test]
fn rig_matrices_outside_tolerance_are_rejected() {
    let mut m = common::oracles::random_matrix(&mut ChaCha8Rng::seed_from_u64(1));
    m[0] += 1e-5;
    let repaired = RigidTransform::from_matrix(&m).unwrap();
    assert!(liftseg::geometry::orthonormal_deviation(repaired.rotation()) < 1e-12);
    m[0] += 0.1;
    assert!(matches!(RigidTransform::from_matrix(&m), Err(GeometryError::NotARigidTransform { .. })));
    let mut reflect = RigidTransform::identity().to_matrix();
    reflect[0] = -1.0;
    assert!(RigidTransform::from_matrix(&reflect).is_err());
}

#[test]
fn flat_ground_has_vertical_normals_across_the_wrap() {
    let scene = Scene { primitives: vec![plane([0.0; 3], [0.0, 0.0, 1.0])], decals: vec![] };
    let tf = RigidTransform::from_euler(0.05, -0.1, 0.7, [0.3, -0.2, 2.4]);
    let img = sensor_image(&scene, tf, 32, 128);
    let (n, stats) = surface_normals(&apply(&tf, &img).unwrap()).unwrap();
    assert!(stats.defined > 500);
    let last = n.cols - 1;
    let mut wrap = 0;
    for (i, v) in common::defined_normals(&n) {
        assert!(common::norm(common::sub(v, [0.0, 0.0, 1.0])) < 1e-4, "pixel {i}: {v:?}");
        if i % n.cols == last {
            wrap += 1;
        }
    }
    assert!(wrap > 5, "wrap column has {wrap} normals");
}

#[test]
fn wall_facing_the_sensor() {
    let scene = Scene { primitives: vec![plane([10.0, 0.0, 0.0], [1.0, 0.0, 0.0])], decals: vec![] };
    let tf = RigidTransform::identity();
    let img = sensor_image(&scene, tf, 32, 256);
    let (n, stats) = surface_normals(&apply(&tf, &img).unwrap()).unwrap();
    assert!(stats.defined > 100);
    for (_, v) in common::defined_normals(&n) {
        assert!(common::norm(common::sub(v, [-1.0, 0.0, 0.0])) < 1e-4);
    }
}

#[test]
fn sphere_normals_follow_the_radius() {
    let scene = Scene {
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: [0.0; 3], radius: 5.0 },
            class: Class::Building,
            reflectivity: 0.3,
            accepts_decals: false,
        }],
        decals: vec![],
    };
    let tf = RigidTransform::identity();
    let img = sensor_image(&scene, tf, 64, 512);
    assert_eq!(img.valid_count(), img.len());
    let (n, _) = surface_normals(&apply(&tf, &img).unwrap()).unwrap();
    let mut total = 0;
    let mut close = 0;
    for (i, v) in common::defined_normals(&n) {
        let p = n.xyz[i];
        let inward = [-p[0], -p[1], -p[2]];
        total += 1;
        if common::angle_deg(v, inward) <= 2.0 {
            close += 1;
        }
        assert!((common::norm(v) - 1.0).abs() <= 1e-6);
    }
    assert_eq!(total, 64 * 512 - 512, "every pixel but the bottom row");
    assert!(close as f64 >= 0.99 * total as f64, "{close}/{total}");
}

#[test]
fn normals_never_read_invalid_neighbors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rig, scene) = common::full_grid_scene(5, 16, 64);
    let img = project(&scene.front, &rig.front.projection_model().unwrap()).unwrap().0;
    let mut holes = img.clone();
    for i in 0..holes.len() {
        if rng.random_bool(0.2) {
            holes.valid[i] = false;
            holes.range[i] = 0.0;
            holes.xyz[i] = [0.0; 3];
            holes.labels[i] = liftseg::IGNORE_ID;
            holes.point_index[i] = None;
        }
    }
    holes.check_invariants().unwrap();
    let (n, _) = surface_normals(&apply(&rig.front.extrinsic, &holes).unwrap()).unwrap();
    n.check_invariants().unwrap();
    for v in 0..n.rows {
        for u in 0..n.cols {
            let i = n.index(u, v);
            if n.normal_valid[i] {
                assert!(v + 1 < n.rows);
                assert!(holes.valid[i] && holes.valid[n.index((u + 1) % n.cols, v)] && holes.valid[n.index(u, v + 1)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn normals_commute_with_rigid_motion(seed in 0u64..1000, roll in -0.5f64..0.5, pitch in -0.5f64..0.5, yaw in -3.0f64..3.0) {
        let (rig, scene) = common::full_grid_scene(seed % 7, 16, 64);
        let img = project(&scene.front, &rig.front.projection_model().unwrap()).unwrap().0;
        let base = surface_normals(&apply(&RigidTransform::identity(), &img).unwrap()).unwrap().0;
        let tf = RigidTransform::from_euler(roll, pitch, yaw, [1.0, -2.0, 3.0]);
        let moved = surface_normals(&apply(&tf, &img).unwrap()).unwrap().0;
        prop_assert_eq!(&base.normal_valid, &moved.normal_valid);
        for (i, v) in common::defined_normals(&moved) {
            let r = tf.rotate_vector(base.normals[i]);
            prop_assert!(common::norm(common::sub(r, v)) < 1e-5);
            prop_assert!((common::norm(v) - 1.0).abs() <= 1e-6);
        }
    }
}
