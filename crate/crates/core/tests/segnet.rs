mod common;

use liftseg::harness::preprocess_pair;
use liftseg::projection::{project, SphericalImageSet};
use liftseg::segnet::{NetConfig, SegNetError, GEOMETRY_CHANNELS};
use liftseg::{SegModel, Tensor};
use proptest::prelude::*;
use tempfile::TempDir;

fn images(seed: u64, rows: usize, cols: usize) -> [SphericalImageSet; 2] {
    let (rig, scene) = common::full_grid_scene(seed, rows, cols);
    preprocess_pair(&scene.front, &scene.down, &rig).unwrap()
}

#[test]
fn forward_shape_on_preprocessed_images() {
    let [front, down] = images(1, 16, 64);
    let m = SegModel::<f32>::build(NetConfig::tiny(), 0).unwrap();
    let y = m.forward(&[&front, &down]).unwrap();
    assert_eq!(y.shape(), &[2, 3, 16, 64]);
    assert!(y.data().iter().all(|v| v.is_finite()));
    let pred = m.predict(&front).unwrap();
    assert_eq!(pred.len(), 16 * 64);
    for (p, valid) in pred.iter().zip(&front.valid) {
        assert_eq!(*valid, *p != liftseg::IGNORE_ID);
        assert!(!*valid || (*p as usize) < 3);
    }
}

#[test]
fn batch_items_do_not_interact() {
    let [front, down] = images(2, 16, 64);
    let m = SegModel::<f32>::build(NetConfig::default(), 3).unwrap();
    let pair = m.forward(&[&front, &down]).unwrap();
    let a = m.forward(&[&front]).unwrap();
    let b = m.forward(&[&down]).unwrap();
    let half = a.numel();
    assert_eq!(&pair.data()[..half], a.data());
    assert_eq!(&pair.data()[half..], b.data());
    let twice = m.forward(&[&front, &front]).unwrap();
    assert_eq!(&twice.data()[..half], &twice.data()[half..]);
}

#[test]
fn permuting_head_classes_permutes_logits() {
    let [front, _] = images(3, 16, 64);
    let m = SegModel::<f64>::build(NetConfig::tiny(), 4).unwrap();
    let perm = [2usize, 0, 1];
    let mut p = m.clone();
    let w = m.parameter("head.aa2.w").unwrap();
    let per_class = w.numel() / 3;
    let mut pw = w.clone();
    for (new, &old) in perm.iter().enumerate() {
        pw.data_mut()[new * per_class..(new + 1) * per_class]
            .copy_from_slice(&w.data()[old * per_class..(old + 1) * per_class]);
    }
    *p.parameter_mut("head.aa2.w").unwrap() = pw;
    let b = m.parameter("head.aa2.b").unwrap();
    *p.parameter_mut("head.aa2.b").unwrap() = Tensor::from_fn(&[3], |k| b.data()[perm[k]]);

    let y = m.forward(&[&front]).unwrap();
    let yp = p.forward(&[&front]).unwrap();
    let plane = 16 * 64;
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(&yp.data()[new * plane..(new + 1) * plane], &y.data()[old * plane..(old + 1) * plane]);
    }
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.ckpt");
    let [front, _] = images(4, 16, 64);
    let m = SegModel::<f32>::build(NetConfig::default(), 9).unwrap();
    m.save(&path).unwrap();
    let back = SegModel::<f32>::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_bytes(), m.to_bytes());
    assert_eq!(back.forward(&[&front]).unwrap().data(), m.forward(&[&front]).unwrap().data());

    let mut bytes = m.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(SegModel::<f32>::from_bytes(&bytes), Err(SegNetError::Format(_))));
    assert!(matches!(SegModel::<f32>::load(&dir.path().join("none")), Err(SegNetError::Io { .. })));
}

#[test]
fn rejects_images_not_ready_for_the_network() {
    let (rig, scene) = common::full_grid_scene(5, 16, 64);
    let m = SegModel::<f32>::build(NetConfig::tiny(), 0).unwrap();
    let raw = project(&scene.front, &rig.front.projection_model().unwrap()).unwrap().0;
    assert!(matches!(m.forward(&[&raw]), Err(SegNetError::NotVehicleFrame)));
    let vehicle = liftseg::geometry::apply(&rig.front.extrinsic, &raw).unwrap();
    assert!(matches!(m.forward(&[&vehicle]), Err(SegNetError::MissingNormals)));
    let [front, _] = images(5, 16, 64);
    let [small, _] = images(5, 8, 64);
    assert!(matches!(m.forward(&[&front, &small]), Err(SegNetError::RaggedBatch(_))));
    assert!(matches!(m.forward(&[]), Err(SegNetError::RaggedBatch(_))));
}

#[test]
fn injection_ablation_delta_is_closed_form() {
    for widths in [vec![8, 16], vec![16, 32, 64], vec![4, 8, 8, 12]] {
        let on =
            NetConfig { stage_depths: vec![1; widths.len()], stage_widths: widths.clone(), ..NetConfig::default() };
        let off = NetConfig { geometry_injection: false, ..on.clone() };
        // one 3×3 stride-2 conv per later stage sees six extra input channels
        let delta: usize = widths[1..].iter().map(|w| w * GEOMETRY_CHANNELS * 3 * 3).sum();
        assert_eq!(on.param_count() - off.param_count(), delta);
        let built = SegModel::<f32>::build(off.clone(), 0).unwrap();
        assert_eq!(built.param_count(), off.param_count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_shape_matches_input_for_random_configs(
        stages in 2usize..4,
        base in 1usize..6,
        depth in 0usize..3,
        classes in 2usize..6,
        attn in 1usize..6,
        injection in any::<bool>(),
        range in any::<bool>(),
        hm in 1usize..3,
        wm in 1usize..4,
        batch in 1usize..3,
    ) {
        let cfg = NetConfig {
            input_channels: if range { 8 } else { 7 },
            stage_widths: (0..stages).map(|i| base * (i + 1)).collect(),
            stage_depths: vec![depth; stages],
            num_classes: classes,
            attention_dim: attn,
            include_range_channel: range,
            geometry_injection: injection,
            ..NetConfig::default()
        };
        let m = SegModel::<f32>::build(cfg.clone(), 1).unwrap();
        let (h, w) = (hm * cfg.size_divisor(), wm * cfg.size_divisor() * 2);
        let x = Tensor::from_fn(&[batch, cfg.input_channels, h, w], |i| ((i * 7919 % 211) as f32) / 105.0 - 1.0);
        let y = m.forward_tensor(&x).unwrap();
        prop_assert_eq!(y.shape(), &[batch, classes, h, w]);
        prop_assert_eq!(m.param_count(), m.parameters().iter().map(|p| p.numel()).sum::<usize>());
    }
}
