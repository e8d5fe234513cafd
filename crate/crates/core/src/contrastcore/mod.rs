//! Contrastive objectives, negative queues and the pre-training loop.

mod losses;
mod pairs;
mod pretrain;
mod queue;
mod steps;

use thiserror::Error;

pub use losses::{info_nce, info_nce_value, pixpro_loss};
pub use pairs::{bin_diagonal, cell_centers, match_pixel_pairs, match_pixel_pairs_shapes, PixelPairSet, DEFAULT_TAU_DIST};
pub use pretrain::{PretrainConfig, PretrainData, Pretrainer};
pub use queue::{NegativeQueue, QueueEntry, Subspace, UNIT_TOL};
pub use steps::{Batch, ContrastConfig, Learner, LossReport, Method};

use crate::encoders::EncoderError;
use crate::viewfactory::ViewError;

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("key from the {key:?} head offered to the {queue:?} queue")]
    SubspaceMix { queue: Subspace, key: Subspace },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("queue key has norm {0}, expected 1")]
    NotUnit(f64),
    #[error("queue invariant violated: {0}")]
    Queue(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid contrast settings: {0}")]
    Config(String),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Params(#[from] agri_autograd::ParamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
