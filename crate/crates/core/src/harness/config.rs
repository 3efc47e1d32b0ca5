use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::{SceneSpec, SensorRig};
use crate::objectives::LossConfig;
use crate::segnet::NetConfig;

/// Step decay: the rate is multiplied by `factor` every `period` epochs.
/// Without a period, one third of the epochs (rounded up) is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub period: Option<usize>,
    pub factor: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { period: None, factor: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub scheduler: SchedulerConfig,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Draw each batch from the combined pool of both sensors.
    pub mix_sensors: bool,
    /// Checkpoints retained on disk.
    pub keep_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 30,
            scheduler: SchedulerConfig::default(),
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            mix_sensors: true,
            keep_checkpoints: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("adam betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.scheduler.period == Some(0) || !(self.scheduler.factor > 0.0) {
            return bad("scheduler period and factor must be positive".into());
        }
        if self.keep_checkpoints == 0 {
            return bad("keep_checkpoints must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Scan rate of each sensor.
    pub sensor_hz: f64,
    /// Rate of the perception loop the pipeline must keep up with.
    pub control_hz: f64,
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sensor_hz: 10.0, control_hz: 30.0, warmup: 5, repetitions: 30 }
    }
}

impl BenchConfig {
    /// Time available per control cycle, in milliseconds.
    pub fn budget_ms(&self) -> f64 {
        1000.0 / self.control_hz
    }

    /// Control cycles per sensor scan.
    pub fn cycles_per_scan(&self) -> f64 {
        self.control_hz / self.sensor_hz
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.sensor_hz > 0.0 && self.control_hz > 0.0) {
            return Err(HarnessError::Config("sensor_hz and control_hz must be positive".into()));
        }
        if self.control_hz < self.sensor_hz {
            return Err(HarnessError::Config(format!(
                "control loop ({} Hz) slower than the sensors ({} Hz) would drop scans",
                self.control_hz, self.sensor_hz
            )));
        }
        if self.repetitions < 30 {
            return Err(HarnessError::Config(format!("need at least 30 timed repetitions, got {}", self.repetitions)));
        }
        Ok(())
    }
}

/// Size of a generated dataset; the scene content comes from `[scene]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames_per_sequence: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { sequences: 5, frames_per_sequence: 8, seed: 0 }
    }
}

/// Top-level TOML configuration shared by all commands.
///
/// ```toml
/// rig = "rig.toml"        # optional, relative to this file
/// [net]   ...             # NetConfig
/// [loss]  ...             # LossConfig
/// [train] ...             # TrainConfig, with [train.scheduler]
/// [bench] ...             # BenchConfig
/// [scene] ...             # SceneSpec
/// [synth] ...             # SynthConfig
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rig: Option<PathBuf>,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub scene: SceneSpec,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file; a relative `rig` path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(rig), Some(dir)) = (&cfg.rig, path.parent()) {
            if rig.is_relative() {
                cfg.rig = Some(dir.join(rig));
            }
        }
        Ok(cfg)
    }

    /// The configured rig, or the default desk-scale rig.
    pub fn load_rig(&self) -> Result<SensorRig, HarnessError> {
        match &self.rig {
            Some(p) => Ok(crate::dataset::load_rig(p)?),
            None => Ok(SensorRig::default()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.net.validate()?;
        self.loss.validate(self.net.num_classes)?;
        self.train.validate()?;
        self.bench.validate()?;
        self.scene.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_follows_control_rate() {
        let b = BenchConfig::default();
        assert!((b.budget_ms() - 33.333).abs() < 1e-3);
        assert!((b.cycles_per_scan() - 3.0).abs() < 1e-12);
        let fast = BenchConfig { control_hz: 50.0, ..b };
        assert!((fast.budget_ms() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = PipelineConfig::from_toml("[train]\nepochs = 3\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.train.batch_size, 8);
        assert!(PipelineConfig::from_toml("[train]\nepoch = 3\n").is_err());
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_invalid_training_settings() {
        let t = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(t.validate().is_err());
        let b = BenchConfig { repetitions: 10, ..BenchConfig::default() };
        assert!(b.validate().is_err());
    }
}
