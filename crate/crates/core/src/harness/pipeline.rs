use serde::Serialize;

use super::HarnessError;
use crate::dataset::{PointCloud, SensorConfig, SensorRig};
use crate::geometry::{apply, surface_normals, NormalStats};
use crate::projection::{destagger, project, ProjectionStats, SphericalImageSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PreprocessStats {
    pub projection: ProjectionStats,
    pub normals: NormalStats,
}

/// project → destagger → vehicle frame → surface normals.
pub fn preprocess(
    cloud: &PointCloud,
    sensor: &SensorConfig,
) -> Result<(SphericalImageSet, PreprocessStats), HarnessError> {
    let model = sensor.projection_model()?;
    let (img, projection) = project(cloud, &model)?;
    let img = destagger(&img, &sensor.destagger_shifts)?;
    let img = apply(&sensor.extrinsic, &img)?;
    let (img, normals) = surface_normals(&img)?;
    Ok((img, PreprocessStats { projection, normals }))
}

/// Preprocesses the front and down scans concurrently.
pub fn preprocess_pair(
    front: &PointCloud,
    down: &PointCloud,
    rig: &SensorRig,
) -> Result<[SphericalImageSet; 2], HarnessError> {
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(|| preprocess(down, &rig.down));
        let a = preprocess(front, &rig.front);
        (a, h.join().expect("preprocessing thread panicked"))
    });
    Ok([a?.0, b?.0])
}
