use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, SensorId};
use crate::geometry::{GeometryError, RigidTransform};
use crate::projection::ProjectionModel;

/// Calibration and image geometry of one sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    /// Sensor → vehicle (ISO 8855).
    pub extrinsic: RigidTransform,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub rows: usize,
    pub cols: usize,
    /// Per-row circular column offsets applied after projection.
    pub destagger_shifts: Vec<i32>,
}

impl SensorConfig {
    pub fn new(extrinsic: RigidTransform, fov_up_deg: f64, fov_down_deg: f64, rows: usize, cols: usize) -> Self {
        Self { extrinsic, fov_up_deg, fov_down_deg, rows, cols, destagger_shifts: vec![0; rows] }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(DatasetError::InvalidRig(format!(
                "rows and cols must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.fov_up_deg > self.fov_down_deg) {
            return Err(DatasetError::InvalidRig(format!(
                "fov_up ({}) must exceed fov_down ({})",
                self.fov_up_deg, self.fov_down_deg
            )));
        }
        if self.destagger_shifts.len() != self.rows {
            return Err(DatasetError::InvalidRig(format!(
                "{} destagger shifts for {} rows",
                self.destagger_shifts.len(),
                self.rows
            )));
        }
        self.projection_model()?;
        Ok(())
    }

    pub fn projection_model(&self) -> Result<ProjectionModel, DatasetError> {
        ProjectionModel::new(self.rows, self.cols, self.fov_up_deg, self.fov_down_deg)
            .map_err(|e| DatasetError::InvalidRig(e.to_string()))
    }

    pub fn with_resolution(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self.destagger_shifts = vec![0; rows];
        self
    }
}

/// The two-sensor roof rig.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorRig {
    pub front: SensorConfig,
    pub down: SensorConfig,
}

impl SensorRig {
    /// Placeholder mounting: both sensors 2.4 m above the rear axle, the
    /// front one level and the down one pitched 30° nose-down. These are not
    /// calibrated values; override them from a rig file.
    pub fn default_with_resolution(rows: usize, cols: usize) -> Self {
        let front = RigidTransform::from_euler(0.0, 0.0, 0.0, [1.2, 0.0, 2.4]);
        let down = RigidTransform::from_euler(0.0, 30f64.to_radians(), 0.0, [1.6, 0.0, 2.4]);
        Self {
            front: SensorConfig::new(front, 45.0, -45.0, rows, cols),
            down: SensorConfig::new(down, 45.0, -45.0, rows, cols),
        }
    }

    pub fn sensor(&self, id: SensorId) -> &SensorConfig {
        match id {
            SensorId::Front => &self.front,
            SensorId::Down => &self.down,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.front.validate()?;
        self.down.validate()
    }

    pub fn to_toml(&self) -> String {
        let file = RigFile { front: Some(RawSensor::from(&self.front)), down: Some(RawSensor::from(&self.down)) };
        toml::to_string_pretty(&file).expect("rig serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let file: RigFile = toml::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        let front = file.front.ok_or(DatasetError::MissingSensor("front"))?;
        let down = file.down.ok_or(DatasetError::MissingSensor("down"))?;
        let rig = Self { front: front.into_config()?, down: down.into_config()? };
        rig.validate()?;
        Ok(rig)
    }
}

impl Default for SensorRig {
    fn default() -> Self {
        Self::default_with_resolution(32, 256)
    }
}

/// Reads a TOML rig file (schema in the README).
pub fn load_rig(path: &Path) -> Result<SensorRig, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    SensorRig::from_toml(&text)
}

pub fn write_rig(path: &Path, rig: &SensorRig) -> Result<(), DatasetError> {
    fs::write(path, rig.to_toml()).map_err(|e| DatasetError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    front: Option<RawSensor>,
    down: Option<RawSensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    /// 4×4 row-major sensor → vehicle matrix.
    extrinsic: Vec<f64>,
    fov_up_deg: f64,
    fov_down_deg: f64,
    rows: usize,
    cols: usize,
    #[serde(default)]
    destagger_shifts: Option<Vec<i32>>,
}

impl From<&SensorConfig> for RawSensor {
    fn from(c: &SensorConfig) -> Self {
        Self {
            extrinsic: c.extrinsic.to_matrix().to_vec(),
            fov_up_deg: c.fov_up_deg,
            fov_down_deg: c.fov_down_deg,
            rows: c.rows,
            cols: c.cols,
            destagger_shifts: Some(c.destagger_shifts.clone()),
        }
    }
}

impl RawSensor {
    fn into_config(self) -> Result<SensorConfig, DatasetError> {
        let m: [f64; 16] =
            self.extrinsic.as_slice().try_into().map_err(|_| {
                DatasetError::Config(format!("extrinsic needs 16 values, got {}", self.extrinsic.len()))
            })?;
        let extrinsic = RigidTransform::from_matrix(&m).map_err(|e| match e {
            GeometryError::NotARigidTransform { deviation, .. } => DatasetError::NotARigidTransform(deviation),
            other => DatasetError::Config(other.to_string()),
        })?;
        Ok(SensorConfig {
            extrinsic,
            fov_up_deg: self.fov_up_deg,
            fov_down_deg: self.fov_down_deg,
            rows: self.rows,
            cols: self.cols,
            destagger_shifts: self.destagger_shifts.unwrap_or_else(|| vec![0; self.rows]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut rig = SensorRig::default();
        rig.down.destagger_shifts[3] = 5;
        let back = SensorRig::from_toml(&rig.to_toml()).unwrap();
        assert_eq!(back, rig);
    }

    #[test]
    fn missing_sensor_is_reported() {
        let rig = SensorRig::default();
        let text =
            format!("[front]\n{}", rig.to_toml().split("[front]").nth(1).unwrap().split("[down]").next().unwrap());
        assert!(matches!(SensorRig::from_toml(&text), Err(DatasetError::MissingSensor("down"))));
    }

    #[test]
    fn skewed_extrinsic_is_rejected() {
        let text = r#"
[front]
extrinsic = [1.0, 0.1, 0.0, 0.0,  0.0, 1.0, 0.0, 0.0,  0.0, 0.0, 1.0, 2.4,  0.0, 0.0, 0.0, 1.0]
fov_up_deg = 45.0
fov_down_deg = -45.0
rows = 4
cols = 16

[down]
extrinsic = [1.0, 0.0, 0.0, 0.0,  0.0, 1.0, 0.0, 0.0,  0.0, 0.0, 1.0, 2.4,  0.0, 0.0, 0.0, 1.0]
fov_up_deg = 45.0
fov_down_deg = -45.0
rows = 4
cols = 16
"#;
        assert!(matches!(SensorRig::from_toml(text), Err(DatasetError::NotARigidTransform(_))));
        let fixed = text.replacen("1.0, 0.1, 0.0", "1.0, 0.0004, 0.0", 1);
        let rig = SensorRig::from_toml(&fixed).unwrap();
        assert_eq!(rig.front.destagger_shifts, vec![0; 4]);
    }

    #[test]
    fn inverted_fov_is_rejected() {
        let mut rig = SensorRig::default();
        rig.front.fov_up_deg = -50.0;
        assert!(rig.validate().is_err());
    }
}
