use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvalError};

/// Outcome of one downstream evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `classification` or `segmentation`.
    pub task: String,
    pub protocol: String,
    /// Where the encoder weights came from, e.g. `random(seed=0)`.
    pub weights: String,
    pub seed: u64,
    pub label_fraction: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub encoder_frozen: bool,
    pub encoder_digest_before: String,
    pub encoder_digest_after: String,
    pub class_names: Vec<String>,
    pub top1_accuracy: Option<f64>,
    pub macro_accuracy: Option<f64>,
    pub per_class_iou: Option<Vec<Option<f64>>>,
    pub mean_iou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
    pub confusion_matrix: ConfusionMatrix,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
}

impl MetricReport {
    /// The metric a table or plot should show: mIoU for segmentation,
    /// top-1 accuracy otherwise.
    pub fn headline(&self) -> (&'static str, f64) {
        match (self.mean_iou, self.top1_accuracy) {
            (Some(m), _) => ("mean_iou", m),
            (None, Some(a)) => ("top1_accuracy", a),
            _ => ("none", f64::NAN),
        }
    }

    pub fn is_random_baseline(&self) -> bool {
        self.weights.starts_with("random")
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MetricReport, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
