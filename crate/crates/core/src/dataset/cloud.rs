use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassId, ClassMap, DatasetError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorId {
    Front,
    Down,
}

impl SensorId {
    pub const BOTH: [SensorId; 2] = [SensorId::Front, SensorId::Down];

    pub fn name(self) -> &'static str {
        match self {
            SensorId::Front => "front",
            SensorId::Down => "down",
        }
    }
}

impl std::str::FromStr for SensorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front" => Ok(SensorId::Front),
            "down" => Ok(SensorId::Down),
            other => Err(format!("unknown sensor '{other}' (expected front or down)")),
        }
    }
}

/// One return: coordinates in meters, reflectivity normalized to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub reflectivity: f32,
}

impl Point {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

/// One revolution of one sensor, optionally annotated.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    labels: Option<Vec<ClassId>>,
    sensor: SensorId,
    timestamp_ns: u64,
}

impl PointCloud {
    /// Validates that coordinates are finite and that labels, when given,
    /// match the point count. Label ids are checked by [`Self::validate_labels`].
    pub fn new(
        points: Vec<Point>,
        labels: Option<Vec<ClassId>>,
        sensor: SensorId,
        timestamp_ns: u64,
    ) -> Result<Self, DatasetError> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(DatasetError::LengthMismatch { points: points.len(), labels: l.len() });
            }
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(DatasetError::InvalidCloud(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self::from_parts_unchecked(points, labels, sensor, timestamp_ns))
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Point>,
        labels: Option<Vec<ClassId>>,
        sensor: SensorId,
        timestamp_ns: u64,
    ) -> Self {
        Self { points, labels, sensor, timestamp_ns }
    }

    pub fn validate_labels(&self, classes: &ClassMap) -> Result<(), DatasetError> {
        if let Some(l) = &self.labels {
            if let Some(bad) = l.iter().find(|id| !classes.is_valid(**id)) {
                return Err(DatasetError::InvalidCloud(format!("label {bad} is not in the class map")));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn sensor(&self) -> SensorId {
        self.sensor
    }

    pub fn timestamp_ns(&self) -> u64 {
        self.timestamp_ns
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self, DatasetError> {
        if labels.len() != self.points.len() {
            return Err(DatasetError::LengthMismatch { points: self.points.len(), labels: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_sensor(mut self, sensor: SensorId, timestamp_ns: u64) -> Self {
        self.sensor = sensor;
        self.timestamp_ns = timestamp_ns;
        self
    }
}

/// Result of decoding a scan: the cloud plus the number of non-finite points
/// that were dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRead {
    pub cloud: PointCloud,
    pub dropped_non_finite: usize,
}

/// Decodes `x y z reflectivity` float32 little-endian records.
pub fn decode_scan(bytes: &[u8], sensor: SensorId) -> Result<ScanRead, DatasetError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(DatasetError::MalformedFile(format!("scan length {} is not a multiple of 16 bytes", bytes.len())));
    }
    if bytes.is_empty() {
        return Err(DatasetError::EmptyScan);
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            dropped += 1;
            continue;
        }
        let reflectivity = if r.is_nan() { 0.0 } else { r.clamp(0.0, 1.0) };
        points.push(Point { x, y, z, reflectivity });
    }
    if points.is_empty() {
        return Err(DatasetError::EmptyScan);
    }
    Ok(ScanRead { cloud: PointCloud::from_parts_unchecked(points, None, sensor, 0), dropped_non_finite: dropped })
}

pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.reflectivity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a `.bin` scan. The sensor tag is set to `Front`; callers that know
/// better use [`PointCloud::with_sensor`].
pub fn load_scan(path: &Path) -> Result<ScanRead, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    decode_scan(&bytes, SensorId::Front)
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<(), DatasetError> {
    fs::write(path, encode_scan(cloud)).map_err(|e| DatasetError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRead {
    pub labels: Vec<ClassId>,
    /// Raw semantic ids absent from the class map, mapped to the ignore id.
    pub unknown: usize,
}

/// Decodes uint32 little-endian label words; the low 16 bits are the raw
/// semantic id and the high 16 bits an instance id (discarded).
pub fn decode_labels(bytes: &[u8], n_points: usize, classes: &ClassMap) -> Result<LabelRead, DatasetError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(DatasetError::MalformedFile(format!("label length {} is not a multiple of 4 bytes", bytes.len())));
    }
    if bytes.len() / 4 != n_points {
        return Err(DatasetError::LengthMismatch { points: n_points, labels: bytes.len() / 4 });
    }
    let mut unknown = 0;
    let labels = bytes
        .chunks_exact(4)
        .map(|w| {
            let word = u32::from_le_bytes(w.try_into().unwrap());
            classes.remap_raw((word & 0xFFFF) as u16).unwrap_or_else(|| {
                unknown += 1;
                classes.ignore_id()
            })
        })
        .collect();
    Ok(LabelRead { labels, unknown })
}

/// Encodes dense class ids back to raw ids with instance 0.
pub fn encode_labels(labels: &[ClassId], classes: &ClassMap) -> Vec<u8> {
    labels.iter().flat_map(|&id| (classes.raw_of(id) as u32).to_le_bytes()).collect()
}

pub fn load_labels(path: &Path, n_points: usize, classes: &ClassMap) -> Result<LabelRead, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    decode_labels(&bytes, n_points, classes)
}

pub fn write_labels(path: &Path, labels: &[ClassId], classes: &ClassMap) -> Result<(), DatasetError> {
    fs::write(path, encode_labels(labels, classes)).map_err(|e| DatasetError::io(path, e))
}
