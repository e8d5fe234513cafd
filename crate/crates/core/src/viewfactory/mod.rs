//! Augmented views with exact geometric bookkeeping, and the three-key
//! temporal sampler.

mod augment;
mod geometry;
mod photometric;
mod temporal;

use thiserror::Error;

pub use augment::{
    augment, pure_crop, render_geometry, render_view, sample_crop, sample_moco_pair, sample_photometric,
    AugmentConfig, AugmentedView, SourceTile, ViewSource,
};
pub use geometry::{warp_to_source, warp_to_view, GeometricTransform};
pub use photometric::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, channel_means, gaussian_blur, grayscale,
    ColorJitter, PhotometricRecipe,
};
pub use temporal::{
    epoch_order, sample_temporal_triplet, sample_triplet_from_stack, triplet_invariants_hold, GroupSampler,
    TemcoAssignment, TemporalStack, TemporalTriplet,
};

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("tile {height}x{width} is smaller than the {min}px crop")]
    TileTooSmall { height: usize, width: usize, min: usize },
    #[error("field `{field_id}` has {flights} flights; temporal sampling needs at least 3")]
    Ineligible { field_id: String, flights: usize },
    #[error("tile origin ({row}, {col}) with size {tile_size} falls outside the {height}x{width} scene")]
    OriginOutOfBounds {
        row: usize,
        col: usize,
        tile_size: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid augmentation settings: {0}")]
    Config(String),
}
