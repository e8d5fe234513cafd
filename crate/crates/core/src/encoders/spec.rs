use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MicroCnn,
    Resnet18Like,
    Resnet50Like,
    SwinTinyLike,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::MicroCnn, Family::Resnet18Like, Family::Resnet50Like, Family::SwinTinyLike];

    pub fn name(self) -> &'static str {
        match self {
            Family::MicroCnn => "micro_cnn",
            Family::Resnet18Like => "resnet18_like",
            Family::Resnet50Like => "resnet50_like",
            Family::SwinTinyLike => "swin_tiny_like",
        }
    }

    pub fn is_transformer(self) -> bool {
        self == Family::SwinTinyLike
    }
}

/// Encoder architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub family: Family,
    pub in_channels: usize,
    /// Width of the instance embedding and of the projected pixel features.
    pub feature_dim: usize,
    /// Downsampling factor of the dense feature map; a power of two.
    pub map_stride: usize,
    /// Channel width of the first stage; later stages are multiples of it.
    pub base_width: usize,
    /// Attention window of the transformer family, in tokens.
    pub window: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            family: Family::MicroCnn,
            in_channels: 4,
            feature_dim: 128,
            map_stride: 32,
            base_width: 16,
            window: 4,
        }
    }
}

impl EncoderSpec {
    pub fn micro(feature_dim: usize, map_stride: usize) -> Self {
        EncoderSpec {
            feature_dim,
            map_stride,
            ..Default::default()
        }
    }

    /// Number of stride-2 reductions.
    pub fn reductions(&self) -> u32 {
        self.map_stride.trailing_zeros()
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let err = |m: String| Err(EncoderError::Spec(m));
        if self.in_channels == 0 || self.feature_dim == 0 || self.base_width == 0 {
            return err("in_channels, feature_dim and base_width must be positive".into());
        }
        if !self.map_stride.is_power_of_two() || self.map_stride > 32 {
            return err(format!("map_stride must be a power of two up to 32, got {}", self.map_stride));
        }
        if self.family == Family::SwinTinyLike && self.window == 0 {
            return err("window must be positive".into());
        }
        Ok(())
    }

    /// Spatial size of the dense feature map for a `h x w` input.
    pub fn map_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.map_stride), w.div_ceil(self.map_stride))
    }
}
