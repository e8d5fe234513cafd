use agri_autograd::nn::Ctx;
use agri_autograd::{Array, ParamError, ParamStore, Var};
use ndarray::{s, Array1, Array3, ArrayD, Axis, IxDyn};
use rand::Rng;

use super::backbone::Backbone;
use super::heads::{ppm_smooth, InstanceHead, PixelProjector, PpmTransform, ProjectorKind, ProjectorSpec};
use super::{EncoderError, EncoderSpec};
use crate::viewfactory::{AugmentedView, GeometricTransform};

pub const BACKBONE_PREFIX: &str = "backbone.";

/// Backbone plus the heads a pre-training method needs.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: EncoderSpec,
    pub backbone: Backbone,
    pub instance_heads: Vec<InstanceHead>,
    pub pixel_projector: Option<PixelProjector>,
    pub ppm: Option<PpmTransform>,
}

/// Everything one forward pass produces.
pub struct NetOutput {
    /// Stage outputs, finest first.
    pub stages: Vec<Var>,
    /// Global-average-pooled final map, `N x D`.
    pub pooled: Var,
    /// Unit-norm embeddings, one `N x out` tensor per instance head.
    pub embeddings: Vec<Var>,
    /// Projected pixel features, `N x out x h' x w'`.
    pub pixel_map: Option<Var>,
}

impl Network {
    /// `instance_heads` is 1 for MoCo-style training and 3 for temporal
    /// contrast; `pixel` adds the pixel projector and the propagation module.
    pub fn new(spec: &EncoderSpec, instance_heads: usize, pixel: bool) -> Result<Network, EncoderError> {
        spec.validate()?;
        let backbone = Backbone::new(spec);
        let d = backbone.out_channels();
        let inst = ProjectorSpec {
            kind: ProjectorKind::InstanceMlp,
            hidden_dim: d,
            out_dim: spec.feature_dim,
        };
        let pix = ProjectorSpec {
            kind: ProjectorKind::PixelConv,
            hidden_dim: d,
            out_dim: spec.feature_dim,
        };
        Ok(Network {
            spec: spec.clone(),
            instance_heads: (0..instance_heads)
                .map(|i| InstanceHead::new(&format!("head.inst{i}"), d, inst))
                .collect(),
            pixel_projector: pixel.then(|| PixelProjector::new("head.pixel", d, pix)),
            ppm: pixel.then(|| PpmTransform::new("ppm", spec.feature_dim)),
            backbone,
        })
    }

    /// Backbone only, as used by the downstream protocols.
    pub fn backbone_only(spec: &EncoderSpec) -> Result<Network, EncoderError> {
        Network::new(spec, 0, false)
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, rng);
        for h in &self.instance_heads {
            h.init(&mut store, rng);
        }
        if let Some(p) = &self.pixel_projector {
            p.init(&mut store, rng);
        }
        if let Some(p) = &self.ppm {
            p.init(&mut store, rng);
        }
        store
    }

    pub fn out_channels(&self) -> usize {
        self.backbone.out_channels()
    }

    pub fn check_input(&self, x: &Var) -> Result<(), EncoderError> {
        if x.ndim() != 4 || x.shape()[1] != self.spec.in_channels {
            return Err(EncoderError::ChannelMismatch {
                expected: self.spec.in_channels,
                found: if x.ndim() == 4 { x.shape()[1] } else { 0 },
            });
        }
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> NetOutput {
        let stages = self.backbone.forward(ctx, x);
        let last = stages.last().unwrap();
        let pooled = last.mean_axes(&[2, 3], false);
        let embeddings = self
            .instance_heads
            .iter()
            .map(|h| h.forward(ctx, &pooled).l2_normalize_last(1e-12))
            .collect();
        let pixel_map = self.pixel_projector.as_ref().map(|p| p.forward(ctx, last));
        NetOutput {
            stages,
            pooled,
            embeddings,
            pixel_map,
        }
    }

    /// Propagation-module smoothing of a projected pixel map.
    pub fn smooth(&self, ctx: &mut Ctx, pixel_map: &Var, gamma: f64) -> Var {
        let ppm = self.ppm.as_ref().expect("network has no propagation module");
        ppm_smooth(ctx, pixel_map, gamma, ppm)
    }
}

/// Stack views into a `N x C x h x w` constant.
pub fn views_to_batch(views: &[&AugmentedView]) -> Var {
    let first = views[0].pixels.shape().to_vec();
    let mut data = Vec::with_capacity(views.len() * first.iter().product::<usize>());
    for v in views {
        assert_eq!(v.pixels.shape(), &first[..], "views in a batch must share a shape");
        data.extend(v.pixels.iter().copied());
    }
    Var::constant(ArrayD::from_shape_vec(IxDyn(&[views.len(), first[0], first[1], first[2]]), data).unwrap())
}

/// Instance embedding and dense map of a single view.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub instance_embedding: Array1<f64>,
    pub feature_map: Array3<f64>,
    pub geometry: GeometricTransform,
}

/// Inference-mode encoding of one view with the first instance head.
pub fn encode(view: &AugmentedView, network: &Network, store: &ParamStore) -> Result<EncoderOutput, EncoderError> {
    if network.instance_heads.is_empty() {
        return Err(EncoderError::Spec("encode needs an instance head".into()));
    }
    let x = views_to_batch(&[view]);
    network.check_input(&x)?;
    let bound = store.bind_frozen();
    let mut ctx = Ctx::new(store, &bound, false);
    let out = network.forward(&mut ctx, &x);
    let map = out.pixel_map.unwrap_or_else(|| out.stages.last().unwrap().clone());
    let emb = out.embeddings[0].value().index_axis(Axis(0), 0).to_owned();
    Ok(EncoderOutput {
        instance_embedding: emb.into_dimensionality().unwrap(),
        feature_map: map.value().index_axis(Axis(0), 0).to_owned().into_dimensionality().unwrap(),
        geometry: view.geometry,
    })
}

/// Online network and its momentum-averaged copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumPair {
    pub online: ParamStore,
    pub offline: ParamStore,
    pub m: f64,
}

impl MomentumPair {
    pub fn new(online: ParamStore, m: f64) -> Self {
        MomentumPair {
            offline: online.clone(),
            online,
            m,
        }
    }

    pub fn update(&mut self) -> Result<(), ParamError> {
        momentum_update(&self.online, &mut self.offline, self.m)
    }
}

/// `offline <- m * offline + (1 - m) * online` for every entry, running
/// statistics included.
pub fn momentum_update(online: &ParamStore, offline: &mut ParamStore, m: f64) -> Result<(), ParamError> {
    online.check_same_layout(offline)?;
    for (name, p) in offline.iter_mut() {
        let src = online.value(name);
        ndarray::Zip::from(&mut p.value).and(src).for_each(|o, &s| *o = m * *o + (1.0 - m) * s);
    }
    Ok(())
}

/// Widen an RGB first-layer kernel `[O, 3, kh, kw]` to NRGB by copying the
/// red slice into a new fourth (NIR) input channel.
pub fn adapt_checkpoint_channels(weights: &Array) -> Result<Array, EncoderError> {
    if weights.ndim() != 4 || weights.shape()[1] != 3 {
        return Err(EncoderError::ChannelMismatch {
            expected: 3,
            found: if weights.ndim() == 4 { weights.shape()[1] } else { 0 },
        });
    }
    let w4 = weights.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let red = w4.slice(s![.., 0..1, .., ..]);
    let out = ndarray::concatenate(Axis(1), &[w4.view(), red]).unwrap();
    Ok(out.into_dyn())
}

/// Apply [`adapt_checkpoint_channels`] to a named weight inside a store.
pub fn adapt_store_channels(store: &mut ParamStore, weight_name: &str) -> Result<(), EncoderError> {
    let p = store
        .get(weight_name)
        .ok_or_else(|| EncoderError::Spec(format!("no parameter `{weight_name}`")))?;
    let adapted = adapt_checkpoint_channels(&p.value)?;
    let kind = p.kind;
    store.insert(weight_name, adapted, kind);
    Ok(())
}
