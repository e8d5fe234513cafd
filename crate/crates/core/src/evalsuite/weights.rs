use agri_autograd::nn::Ctx;
use agri_autograd::{ParamStore, Var};
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::encoders::{Checkpoint, EncoderSpec, Network, BACKBONE_PREFIX};

/// Backbone weights handed to a downstream protocol, with a note on where
/// they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub spec: EncoderSpec,
    /// Backbone parameters and statistics only.
    pub store: ParamStore,
    pub provenance: String,
}

impl EncoderWeights {
    pub fn random(spec: &EncoderSpec, seed: u64) -> Result<EncoderWeights, EvalError> {
        let net = Network::backbone_only(spec)?;
        Ok(EncoderWeights {
            spec: spec.clone(),
            store: net.init(&mut ChaCha8Rng::seed_from_u64(seed)),
            provenance: format!("random(seed={seed})"),
        })
    }

    pub fn from_store(spec: &EncoderSpec, store: &ParamStore, provenance: impl Into<String>) -> Result<Self, EvalError> {
        let w = EncoderWeights {
            spec: spec.clone(),
            store: store.with_prefix(BACKBONE_PREFIX),
            provenance: provenance.into(),
        };
        w.check()?;
        Ok(w)
    }

    /// Online backbone of a pre-training checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, provenance: impl Into<String>) -> Result<Self, EvalError> {
        Self::from_store(&ck.encoder_spec, ck.section("online")?, provenance)
    }

    /// The store must hold exactly the backbone layout of `spec`.
    pub fn check(&self) -> Result<(), EvalError> {
        let reference = Network::backbone_only(&self.spec)?.init(&mut ChaCha8Rng::seed_from_u64(0));
        reference
            .check_same_layout(&self.store)
            .map_err(|e| EvalError::SpecMismatch(format!("weights do not fit the encoder spec: {e}")))
    }

    pub fn digest(&self) -> String {
        self.store.digest(BACKBONE_PREFIX)
    }

    pub fn check_channels(&self, channels: usize) -> Result<(), EvalError> {
        if self.spec.in_channels != channels {
            return Err(EvalError::SpecMismatch(format!(
                "encoder expects {} channels, data has {channels}",
                self.spec.in_channels
            )));
        }
        Ok(())
    }
}

/// Stack `4 x h x w` images into a `N x 4 x h x w` constant.
pub fn images_to_batch(images: &[&Array3<f64>]) -> Var {
    let (c, h, w) = images[0].dim();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        assert_eq!(img.dim(), (c, h, w), "images in a batch must share a shape");
        data.extend(img.iter().copied());
    }
    Var::constant(ArrayD::from_shape_vec(IxDyn(&[images.len(), c, h, w]), data).unwrap())
}

/// Inference-mode stage outputs for `images`, computed in chunks.
pub fn frozen_stages(weights: &EncoderWeights, images: &[&Array3<f64>], chunk: usize) -> Result<Vec<ArrayD<f64>>, EvalError> {
    let net = Network::backbone_only(&weights.spec)?;
    let bound = weights.store.bind_frozen();
    let mut per_stage: Vec<Vec<ArrayD<f64>>> = Vec::new();
    for part in images.chunks(chunk.max(1)) {
        let x = images_to_batch(part);
        net.check_input(&x)?;
        let mut ctx = Ctx::new(&weights.store, &bound, false);
        let stages = net.backbone.forward(&mut ctx, &x);
        if per_stage.is_empty() {
            per_stage = vec![Vec::new(); stages.len()];
        }
        for (acc, s) in per_stage.iter_mut().zip(&stages) {
            acc.push(s.value().clone());
        }
    }
    Ok(per_stage
        .into_iter()
        .map(|chunks| {
            let views: Vec<_> = chunks.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        })
        .collect())
}

/// Global-average-pooled final-stage features, `N x D`.
pub fn pooled_features(weights: &EncoderWeights, images: &[&Array3<f64>]) -> Result<Array2<f64>, EvalError> {
    let stages = frozen_stages(weights, images, 64)?;
    let last = stages.last().unwrap();
    Ok(last
        .mean_axis(Axis(3))
        .unwrap()
        .mean_axis(Axis(2))
        .unwrap()
        .into_dimensionality()
        .unwrap())
}
