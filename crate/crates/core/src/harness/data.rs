//! On-disk dataset layout:
//!
//! ```text
//! root/rig.toml
//! root/sequences/NNNN/{front,down}/velodyne/NNNNNN.bin
//! root/sequences/NNNN/{front,down}/labels/NNNNNN.label     (optional)
//! ```
//!
//! Sequence `0000` is the test split; all others are training data.

use std::fs;
use std::path::{Path, PathBuf};

use super::{preprocess, HarnessError};
use crate::dataset::{
    load_labels, load_rig, load_scan, synth_scene, write_labels, write_rig, write_scan, ClassId, ClassMap, SceneSpec,
    SensorId, SensorRig, IGNORE_ID,
};
use crate::projection::SphericalImageSet;

pub const TEST_SEQUENCE: &str = "0000";
const RIG_FILE: &str = "rig.toml";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanEntry {
    pub sequence: String,
    pub sensor: SensorId,
    pub frame: u32,
    pub scan: PathBuf,
    pub labels: Option<PathBuf>,
}

impl ScanEntry {
    pub fn id(&self) -> String {
        format!("{}/{}/{:06}", self.sequence, self.sensor.name(), self.frame)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rig: SensorRig,
    /// Sorted by sequence, sensor, frame.
    pub entries: Vec<ScanEntry>,
}

impl DatasetManifest {
    /// Indexes every scan below `root`.
    pub fn scan(root: &Path) -> Result<Self, HarnessError> {
        let rig = load_rig(&root.join(RIG_FILE))?;
        let seq_dir = root.join("sequences");
        let mut entries = Vec::new();
        for seq in sorted_dir(&seq_dir)? {
            let Some(sequence) = seq.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            if !seq.is_dir() {
                continue;
            }
            for sensor in SensorId::BOTH {
                let velo = seq.join(sensor.name()).join("velodyne");
                if !velo.is_dir() {
                    continue;
                }
                for scan in sorted_dir(&velo)? {
                    if scan.extension().and_then(|e| e.to_str()) != Some("bin") {
                        continue;
                    }
                    let stem = scan.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    let frame: u32 = stem.parse().map_err(|_| {
                        HarnessError::Config(format!("scan file name {} is not a frame number", scan.display()))
                    })?;
                    let label = seq.join(sensor.name()).join("labels").join(format!("{stem}.label"));
                    entries.push(ScanEntry {
                        sequence: sequence.clone(),
                        sensor,
                        frame,
                        labels: label.is_file().then_some(label),
                        scan,
                    });
                }
            }
        }
        if entries.is_empty() {
            return Err(HarnessError::EmptyDataset(format!("no scans under {}", seq_dir.display())));
        }
        entries.sort_by(|a, b| (&a.sequence, a.sensor.name(), a.frame).cmp(&(&b.sequence, b.sensor.name(), b.frame)));
        Ok(Self { root: root.to_path_buf(), rig, entries })
    }

    pub fn train_entries(&self) -> Vec<&ScanEntry> {
        self.entries.iter().filter(|e| e.sequence != TEST_SEQUENCE).collect()
    }

    pub fn test_entries(&self) -> Vec<&ScanEntry> {
        self.entries.iter().filter(|e| e.sequence == TEST_SEQUENCE).collect()
    }

    /// `(front, down)` scan pairs of the same sequence and frame.
    pub fn pairs<'a>(&self, entries: &[&'a ScanEntry]) -> Vec<(&'a ScanEntry, &'a ScanEntry)> {
        let mut out = Vec::new();
        for f in entries.iter().filter(|e| e.sensor == SensorId::Front) {
            if let Some(d) =
                entries.iter().find(|e| e.sensor == SensorId::Down && e.sequence == f.sequence && e.frame == f.frame)
            {
                out.push((*f, *d));
            }
        }
        out
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| HarnessError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// One preprocessed scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub sensor: SensorId,
    pub image: SphericalImageSet,
}

pub fn load_sample(entry: &ScanEntry, rig: &SensorRig, classes: &ClassMap) -> Result<Sample, HarnessError> {
    let read = load_scan(&entry.scan)?;
    let mut cloud = read.cloud.with_sensor(entry.sensor, 0);
    if let Some(path) = &entry.labels {
        let labels = load_labels(path, cloud.len(), classes)?;
        cloud = cloud.with_labels(labels.labels)?;
    }
    let (image, _) = preprocess(&cloud, rig.sensor(entry.sensor))?;
    Ok(Sample { id: entry.id(), sensor: entry.sensor, image })
}

pub fn prepare_samples(
    entries: &[&ScanEntry],
    rig: &SensorRig,
    classes: &ClassMap,
) -> Result<Vec<Sample>, HarnessError> {
    entries.iter().map(|e| load_sample(e, rig, classes)).collect()
}

/// Grouping for three-class models: driveable ground, lane marking and
/// everything else.
pub const GROUND_LANE_REST: [ClassId; 9] = [2, 2, 2, 2, 0, 2, 1, 2, 2];

/// Relabels samples for a model with fewer classes: label `c` becomes
/// `groups[c]`; the ignore id is kept.
pub fn regroup_labels(samples: &mut [Sample], groups: &[ClassId]) -> Result<(), HarnessError> {
    for s in samples.iter_mut() {
        for l in s.image.labels.iter_mut() {
            if *l == IGNORE_ID {
                continue;
            }
            *l = *groups.get(*l as usize).ok_or_else(|| {
                HarnessError::Config(format!("label {l} of {} has no group ({} groups given)", s.id, groups.len()))
            })?;
        }
    }
    Ok(())
}

/// Parameters of [`write_synth_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDatasetSpec {
    pub sequences: usize,
    pub frames_per_sequence: usize,
    pub seed: u64,
    pub scene: SceneSpec,
}

/// Layout seed of a sequence.
pub fn sequence_seed(base: u64, sequence: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sequence as u64
}

/// Generates and writes a labeled synthetic dataset; sequence 0 is the
/// test split. Each sequence is one layout seen from the ego poses of its
/// frames.
pub fn write_synth_dataset(
    root: &Path,
    spec: &SynthDatasetSpec,
    rig: &SensorRig,
) -> Result<DatasetManifest, HarnessError> {
    if spec.sequences == 0 || spec.frames_per_sequence == 0 {
        return Err(HarnessError::Config("need at least one sequence and one frame".into()));
    }
    let classes = ClassMap::standard();
    fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
    write_rig(&root.join(RIG_FILE), rig)?;
    for seq in 0..spec.sequences {
        for frame in 0..spec.frames_per_sequence {
            let scene_spec = SceneSpec { frame_index: frame as u64, ..spec.scene.clone() };
            let scene = synth_scene(sequence_seed(spec.seed, seq), &scene_spec, rig)?;
            for sensor in SensorId::BOTH {
                let base = root.join("sequences").join(format!("{seq:04}")).join(sensor.name());
                for sub in ["velodyne", "labels"] {
                    let d = base.join(sub);
                    fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
                }
                let cloud = scene.cloud(sensor);
                write_scan(&base.join("velodyne").join(format!("{frame:06}.bin")), cloud)?;
                let labels = cloud.labels().expect("synthetic clouds are labeled");
                write_labels(&base.join("labels").join(format!("{frame:06}.label")), labels, &classes)?;
            }
        }
    }
    DatasetManifest::scan(root)
}
