use std::fmt;

use crate::error::{Error, Result};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn metrics(&self) -> Metrics {
        let c = self.classes;
        let total = self.total();
        let diag: u64 = (0..c).map(|k| self.count(k, k)).sum();
        let support: Vec<u64> = (0..c).map(|k| (0..c).map(|p| self.count(k, p)).sum()).collect();
        let predicted: Vec<u64> = (0..c).map(|k| (0..c).map(|t| self.count(t, k)).sum()).collect();
        let class_accuracy: Vec<Option<f64>> = (0..c)
            .map(|k| (support[k] > 0).then(|| self.count(k, k) as f64 / support[k] as f64))
            .collect();
        let iou: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.count(k, k);
                let union = support[k] + predicted[k] - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            }
        };
        Metrics {
            overall_accuracy: if total > 0 { diag as f64 / total as f64 } else { 0.0 },
            mean_accuracy: mean(&class_accuracy),
            mean_iou: mean(&iou),
            class_accuracy,
            iou,
        }
    }
}

/// Classes absent from both truth and predictions have no IoU and are
/// left out of the means.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    pub class_accuracy: Vec<Option<f64>>,
    pub iou: Vec<Option<f64>>,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "OA   {:.4}", self.overall_accuracy)?;
        writeln!(f, "mAcc {:.4}", self.mean_accuracy)?;
        writeln!(f, "mIoU {:.4}", self.mean_iou)?;
        writeln!(f, "class  accuracy  iou")?;
        for (k, (a, i)) in self.class_accuracy.iter().zip(&self.iou).enumerate() {
            let show = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            writeln!(f, "{k:<6} {:<9} {}", show(a), show(i))?;
        }
        Ok(())
    }
}
