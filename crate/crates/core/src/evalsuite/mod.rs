//! Downstream protocols: probing, fine-tuning, U-Net segmentation, label
//! subsampling, flight-count ablation and their metrics.

mod ablation;
mod datasets;
mod losses;
mod metrics;
mod probe;
mod report;
mod segment;
mod subsample;
mod weights;

use thiserror::Error;

pub use ablation::{ablate_flights, nested_subsets, AblationPlan, AblationRow, AblationTable, ABLATION_HEADER};
pub use datasets::{
    scene_crop, split_by_group, split_segmentation, synthetic_classification, synthetic_corpus, synthetic_segmentation,
    ClassificationSet, ClassificationTask, LabeledImage, SegSample, SegmentationSet, SegmentationTask,
    CLASSIFICATION_CLASSES, IGNORE_INDEX,
};
pub use losses::{cross_entropy, dense_logits_rows, focal_loss};
pub use metrics::ConfusionMatrix;
pub use probe::{probe, ProbeKind, ProbeProtocol};
pub use report::MetricReport;
pub use segment::{train_segmentation, SegConfig, SegLoss, UNetDecoder};
pub use subsample::subsample_indices;
pub use weights::{frozen_stages, images_to_batch, pooled_features, EncoderWeights};

use crate::contrastcore::ContrastError;
use crate::encoders::EncoderError;
use crate::fieldstore::FieldError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no labeled pixels")]
    NoLabeledPixels,
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("encoder spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid evaluation settings: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
