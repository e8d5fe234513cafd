use serde::{Deserialize, Serialize};

use super::EvalError;

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Config("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { num_classes: k, counts })
    }

    /// Add label/prediction pairs, skipping `ignore_index` labels.
    pub fn accumulate(&mut self, truth: &[usize], pred: &[usize], ignore_index: Option<usize>) -> Result<(), EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::Config(format!("{} labels but {} predictions", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if Some(t) == ignore_index {
                continue;
            }
            for v in [t, p] {
                if v >= self.num_classes {
                    return Err(EvalError::LabelOutOfRange {
                        label: v,
                        classes: self.num_classes,
                    });
                }
            }
            self.counts[t][p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Ground-truth count of each class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.num_classes).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// IoU of every class present in the ground truth; `None` otherwise.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let rows = self.row_sums();
        let cols = self.col_sums();
        (0..self.num_classes)
            .map(|c| {
                (rows[c] > 0).then(|| {
                    let tp = self.counts[c][c];
                    tp as f64 / (rows[c] + cols[c] - tp) as f64
                })
            })
            .collect()
    }

    /// Unweighted mean of the defined per-class IoUs.
    pub fn mean_iou(&self) -> Result<f64, EvalError> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(EvalError::NoLabeledPixels);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        let total = self.total();
        if total == 0 {
            return Err(EvalError::NoLabeledPixels);
        }
        let diag: u64 = (0..self.num_classes).map(|c| self.counts[c][c]).sum();
        Ok(diag as f64 / total as f64)
    }

    /// Mean per-class recall over classes present in the ground truth.
    pub fn macro_accuracy(&self) -> Result<f64, EvalError> {
        let rows = self.row_sums();
        let recalls: Vec<f64> = (0..self.num_classes)
            .filter(|&c| rows[c] > 0)
            .map(|c| self.counts[c][c] as f64 / rows[c] as f64)
            .collect();
        if recalls.is_empty() {
            return Err(EvalError::NoLabeledPixels);
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}
