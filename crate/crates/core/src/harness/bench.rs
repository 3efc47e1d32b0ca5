use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{infer_images, preprocess, preprocess_pair, BenchConfig, HarnessError};
use crate::dataset::{PointCloud, SensorRig};
use crate::segnet::SegModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Front scan only, batch of one.
    Single,
    /// Both scans, batch of two.
    Dual,
}

impl std::str::FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(BenchMode::Single),
            "dual" => Ok(BenchMode::Dual),
            _ => Err(format!("unknown bench mode {s:?} (expected single or dual)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: BenchMode,
    pub warmup: usize,
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub budget_ms: f64,
    pub within_budget: bool,
}

impl LatencyReport {
    pub fn new(mode: BenchMode, warmup: usize, runs_ms: Vec<f64>, budget_ms: f64) -> Self {
        let (median_ms, p95_ms) = latency_stats(&runs_ms);
        Self { mode, warmup, runs_ms, median_ms, p95_ms, budget_ms, within_budget: p95_ms <= budget_ms }
    }
}

/// Median (mean of the middle pair for even counts) and nearest-rank 95th
/// percentile.
pub fn latency_stats(runs: &[f64]) -> (f64, f64) {
    assert!(!runs.is_empty(), "no timed runs");
    let mut s = runs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let rank = (0.95 * n as f64).ceil() as usize;
    (median, s[rank.clamp(1, n) - 1])
}

/// Wall time in milliseconds of `reps` calls to `f` after `warmup`
/// untimed calls.
pub fn time_runs<E>(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<(), E>) -> Result<Vec<f64>, E> {
    for _ in 0..warmup {
        f()?;
    }
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Times preprocessing plus segmentation of the front scan (single) or of
/// both scans (dual).
pub fn bench(
    model: &SegModel<f32>,
    front: &PointCloud,
    down: &PointCloud,
    rig: &SensorRig,
    mode: BenchMode,
    cfg: &BenchConfig,
) -> Result<LatencyReport, HarnessError> {
    cfg.validate()?;
    let runs = time_runs(cfg.warmup, cfg.repetitions, || -> Result<(), HarnessError> {
        match mode {
            BenchMode::Single => {
                let (img, _) = preprocess(front, &rig.front)?;
                black_box(infer_images(model, &[&img])?);
            }
            BenchMode::Dual => {
                let [a, b] = preprocess_pair(front, down, rig)?;
                black_box(infer_images(model, &[&a, &b])?);
            }
        }
        Ok(())
    })?;
    Ok(LatencyReport::new(mode, cfg.warmup, runs, cfg.budget_ms()))
}
