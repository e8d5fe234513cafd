//! Encoder families, projection heads, the pixel propagation module,
//! momentum pairs and checkpoints.

mod backbone;
mod checkpoint;
mod heads;
mod network;
mod spec;
mod swin;

use thiserror::Error;

pub use backbone::Backbone;
pub use checkpoint::{ArrayEntry, Checkpoint, CheckpointManifest, FORMAT, FORMAT_VERSION};
pub use heads::{
    pixel_similarity, ppm_smooth, ppm_smooth_with, InstanceHead, PixelProjector, PpmTransform, ProjectorKind,
    ProjectorSpec,
};
pub use network::{
    adapt_checkpoint_channels, adapt_store_channels, encode, momentum_update, views_to_batch, EncoderOutput,
    MomentumPair, NetOutput, Network, BACKBONE_PREFIX,
};
pub use spec::{EncoderSpec, Family};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("channel mismatch: expected {expected} input channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("invalid encoder spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Params(#[from] agri_autograd::ParamError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
