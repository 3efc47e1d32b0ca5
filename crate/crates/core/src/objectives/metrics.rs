use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ObjectiveError;
use crate::dataset::{ClassId, ClassMap};

/// `C × C` counts, rows ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel whose ground truth is not `ignore`.
    pub fn accumulate(&mut self, pred: &[ClassId], gt: &[ClassId], ignore: ClassId) -> Result<(), ObjectiveError> {
        if pred.len() != gt.len() {
            return Err(ObjectiveError::TargetLength { expected: gt.len(), found: pred.len() });
        }
        let c = self.classes;
        for (pixel, (&p, &t)) in pred.iter().zip(gt).enumerate() {
            if t == ignore {
                continue;
            }
            for label in [t, p] {
                if label as usize >= c {
                    return Err(ObjectiveError::InvalidLabel { label, pixel, classes: c });
                }
            }
            self.counts[t as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), ObjectiveError> {
        if other.classes != self.classes {
            return Err(ObjectiveError::ClassCount(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn iou(&self) -> IouReport {
        let c = self.classes;
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|i| self.get(i, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        IouReport { per_class, miou, pixels: self.total() }
    }
}

/// Per-class IoU (`None` where a class is absent from both ground truth and
/// prediction) and their mean over defined classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub pixels: u64,
}

impl IouReport {
    /// One header row of class names, one row of percentages.
    pub fn to_table(&self, classes: &ClassMap) -> String {
        let name = |k: usize| classes.name(k as ClassId).unwrap_or("?").to_string();
        let mut header = String::from("| mIoU   ");
        let mut row = format!("| {:>6} ", pct(self.miou));
        for k in 0..self.per_class.len() {
            let n = name(k);
            let width = n.len().max(6);
            let _ = write!(header, "| {n:>width$} ");
            let _ = write!(row, "| {:>width$} ", pct(self.per_class[k]));
        }
        header.push('|');
        row.push('|');
        let rule: String = header.chars().map(|c| if c == '|' { '|' } else { '-' }).collect();
        format!(
            "{header}\n{rule}\n{row}\n\n{} pixels evaluated; '-' marks classes absent from both ground truth and prediction\n",
            self.pixels
        )
    }

    /// Per-class IoU keyed by class name.
    pub fn to_json(&self, classes: &ClassMap) -> serde_json::Value {
        let per_class: serde_json::Map<String, serde_json::Value> = self
            .per_class
            .iter()
            .enumerate()
            .map(|(k, v)| {
                (
                    classes.name(k as ClassId).unwrap_or("?").to_string(),
                    v.map_or(serde_json::Value::Null, serde_json::Value::from),
                )
            })
            .collect();
        serde_json::json!({
            "miou": self.miou,
            "per_class_iou": per_class,
            "pixels": self.pixels,
        })
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", v * 100.0))
}

/// Class weights `1 / ln(1.02 + f_c)` from per-class pixel counts, where
/// `f_c` is the class frequency.
pub fn inverse_log_frequency(counts: &[u64]) -> Vec<f64> {
    let total = counts.iter().sum::<u64>().max(1) as f64;
    counts.iter().map(|n| 1.0 / (1.02 + *n as f64 / total).ln()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::IGNORE_ID;

    #[test]
    fn perfect_prediction_is_one() {
        let gt = [0u8, 1, 2, 2, IGNORE_ID, 1];
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&gt, &gt, IGNORE_ID).unwrap();
        let r = cm.iou();
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn complete_disagreement_is_zero() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[1, 0, 1], &[0, 1, 0], IGNORE_ID).unwrap();
        assert_eq!(cm.iou().per_class, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn merge_checks_class_count() {
        let mut a = ConfusionMatrix::new(2);
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
        assert!(a.accumulate(&[5], &[0], IGNORE_ID).is_err());
    }

    #[test]
    fn table_lists_every_class() {
        let map = ClassMap::standard();
        let mut cm = ConfusionMatrix::new(9);
        cm.accumulate(&[4, 4, 6], &[4, 4, 6], IGNORE_ID).unwrap();
        let t = cm.iou().to_table(&map);
        assert!(t.contains("lane marking"));
        assert!(t.contains("100.00"));
        let j = cm.iou().to_json(&map);
        assert_eq!(j["per_class_iou"]["car"], serde_json::Value::Null);
    }

    #[test]
    fn rare_classes_weigh_more() {
        let w = inverse_log_frequency(&[900, 90, 10]);
        assert!(w[0] < w[1] && w[1] < w[2]);
    }
}
