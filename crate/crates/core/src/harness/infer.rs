use std::path::Path;

use serde::Serialize;

use super::{preprocess_pair, HarnessError, Sample};
use crate::dataset::{load_scan, ClassId, PointCloud, SensorConfig, SensorId, SensorRig, IGNORE_ID};

use crate::objectives::{ConfusionMatrix, IouReport};
use crate::projection::{spherical_coords, SphericalImageSet};
use crate::segnet::{predict_from_logits, SegModel};

/// Class-id planes for a batch of images, from one batched forward pass.
pub fn infer_images(model: &SegModel<f32>, imgs: &[&SphericalImageSet]) -> Result<Vec<Vec<ClassId>>, HarnessError> {
    let logits = model.forward(imgs)?;
    Ok(imgs.iter().enumerate().map(|(i, img)| predict_from_logits(&logits, i, &img.valid)).collect())
}

/// Per-point labels read back from a predicted plane: each point takes the
/// class of the pixel it projects to; points outside the field of view get
/// [`IGNORE_ID`].
pub fn point_labels(
    cloud: &PointCloud,
    sensor: &SensorConfig,
    plane: &[ClassId],
) -> Result<Vec<ClassId>, HarnessError> {
    let model = sensor.projection_model()?;
    let cols = model.cols as i64;
    Ok(cloud
        .points()
        .iter()
        .map(|p| {
            let Ok((phi, theta, _)) = spherical_coords(p.xyz()) else {
                return IGNORE_ID;
            };
            match model.pixel(phi, theta) {
                Some((u, v)) => {
                    let u = (u as i64 + sensor.destagger_shifts[v] as i64).rem_euclid(cols) as usize;
                    plane[v * model.cols + u]
                }
                None => IGNORE_ID,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPrediction {
    pub rows: usize,
    pub cols: usize,
    pub front: Vec<ClassId>,
    pub down: Vec<ClassId>,
    pub front_image: SphericalImageSet,
    pub down_image: SphericalImageSet,
    /// One label per input point, in file order.
    pub front_points: Vec<ClassId>,
    pub down_points: Vec<ClassId>,
}

impl DualPrediction {
    pub fn plane(&self, sensor: SensorId) -> &[ClassId] {
        match sensor {
            SensorId::Front => &self.front,
            SensorId::Down => &self.down,
        }
    }
}

/// Loads both scans, preprocesses them concurrently and segments them as
/// one batch of two.
pub fn infer_dual(
    model: &SegModel<f32>,
    front: &Path,
    down: &Path,
    rig: &SensorRig,
) -> Result<DualPrediction, HarnessError> {
    let f = load_scan(front)?.cloud.with_sensor(SensorId::Front, 0);
    let d = load_scan(down)?.cloud.with_sensor(SensorId::Down, 0);
    let [fi, di] = preprocess_pair(&f, &d, rig)?;
    let mut planes = infer_images(model, &[&fi, &di])?;
    let down_plane = planes.pop().expect("two outputs");
    let front_plane = planes.pop().expect("two outputs");
    Ok(DualPrediction {
        rows: fi.rows,
        cols: fi.cols,
        front_points: point_labels(&f, &rig.front, &front_plane)?,
        down_points: point_labels(&d, &rig.down, &down_plane)?,
        front: front_plane,
        down: down_plane,
        front_image: fi,
        down_image: di,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scans: usize,
    pub confusion: ConfusionMatrix,
    pub iou: IouReport,
}

/// Segments every sample and accumulates one confusion matrix. Scans are
/// sharded over `workers` threads whose matrices are merged.
pub fn evaluate(model: &SegModel<f32>, samples: &[Sample], workers: usize) -> Result<EvalReport, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset("no evaluation samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| !s.image.has_labels) {
        return Err(HarnessError::EmptyDataset(format!("sample {} has no labels", s.id)));
    }
    let classes = model.config().num_classes;
    let workers = workers.clamp(1, samples.len());
    let chunk = samples.len().div_ceil(workers);
    let shard = |part: &[Sample]| -> Result<ConfusionMatrix, HarnessError> {
        let mut cm = ConfusionMatrix::new(classes);
        for s in part {
            let pred = infer_images(model, &[&s.image])?.pop().expect("one output");
            cm.accumulate(&pred, &s.image.labels, IGNORE_ID)?;
        }
        Ok(cm)
    };
    let parts: Vec<Result<ConfusionMatrix, HarnessError>> = if workers == 1 {
        vec![shard(samples)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = samples.chunks(chunk).map(|p| s.spawn(move || shard(p))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut confusion = ConfusionMatrix::new(classes);
    for p in parts {
        confusion.merge(&p?)?;
    }
    let iou = confusion.iou();
    Ok(EvalReport { scans: samples.len(), confusion, iou })
}
