//! Shared fixtures for the criterion benches.

use liftseg::dataset::{synth_scene, SceneSpec, SensorRig, SynthScene};
use liftseg::harness::{preprocess, Sample};
use liftseg::SensorId;

/// A seeded synthetic scene at the given resolution.
pub fn scene(rows: usize, cols: usize) -> (SensorRig, SynthScene) {
    let rig = SensorRig::default_with_resolution(rows, cols);
    let scene = synth_scene(7, &SceneSpec::default(), &rig).expect("default scene");
    (rig, scene)
}

/// Preprocessed front and down samples of [`scene`].
pub fn samples(rows: usize, cols: usize) -> Vec<Sample> {
    let (rig, scene) = scene(rows, cols);
    SensorId::BOTH
        .iter()
        .map(|&s| Sample {
            id: s.name().into(),
            sensor: s,
            image: preprocess(scene.cloud(s), rig.sensor(s)).expect("preprocess").0,
        })
        .collect()
}
