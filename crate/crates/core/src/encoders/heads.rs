use agri_autograd::nn::{BatchNorm, Conv2d, Ctx, Linear};
use agri_autograd::{ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    InstanceMlp,
    PixelConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub kind: ProjectorKind,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

/// Linear -> ReLU -> linear on pooled features.
#[derive(Debug, Clone)]
pub struct InstanceHead {
    fc1: Linear,
    fc2: Linear,
}

impl InstanceHead {
    pub fn new(name: &str, in_dim: usize, spec: ProjectorSpec) -> Self {
        InstanceHead {
            fc1: Linear::new(format!("{name}.fc1"), in_dim, spec.hidden_dim),
            fc2: Linear::new(format!("{name}.fc2"), spec.hidden_dim, spec.out_dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    /// `N x D` pooled features to `N x out` (not normalised).
    pub fn forward(&self, ctx: &mut Ctx, pooled: &Var) -> Var {
        let h = self.fc1.forward(ctx, pooled).relu();
        self.fc2.forward(ctx, &h)
    }
}

/// 1x1 conv -> batch norm -> ReLU -> 1x1 conv; keeps the spatial shape.
#[derive(Debug, Clone)]
pub struct PixelProjector {
    conv1: Conv2d,
    bn: BatchNorm,
    conv2: Conv2d,
}

impl PixelProjector {
    pub fn new(name: &str, in_dim: usize, spec: ProjectorSpec) -> Self {
        PixelProjector {
            conv1: Conv2d::new(format!("{name}.conv1"), in_dim, spec.hidden_dim, 1, 1).with_bias(),
            bn: BatchNorm::new(format!("{name}.bn"), spec.hidden_dim),
            conv2: Conv2d::new(format!("{name}.conv2"), spec.hidden_dim, spec.out_dim, 1, 1).with_bias(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.conv1.init(store, rng);
        self.bn.init(store);
        self.conv2.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, map: &Var) -> Var {
        let c = self.conv1.forward(ctx, map);
        let h = self.bn.forward(ctx, &c).relu();
        self.conv2.forward(ctx, &h)
    }
}

/// The transform `G` of the propagation module: linear -> ReLU -> linear
/// on each pixel's channel vector.
#[derive(Debug, Clone)]
pub struct PpmTransform {
    fc1: Linear,
    fc2: Linear,
}

impl PpmTransform {
    pub fn new(name: &str, dim: usize) -> Self {
        PpmTransform {
            fc1: Linear::new(format!("{name}.fc1"), dim, dim),
            fc2: Linear::new(format!("{name}.fc2"), dim, dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    /// Applied over the last axis.
    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let h = self.fc1.forward(ctx, x).relu();
        self.fc2.forward(ctx, &h)
    }
}

const NORM_EPS: f64 = 1e-12;

/// Sharpened similarity `S(x_i, x_j) = max(cos, 0)^gamma` between all pixels
/// of each map. Input `N x L x D`, output `N x L x L`. Pairs involving a
/// zero vector get 0.
pub fn pixel_similarity(tokens: &Var, gamma: f64) -> Var {
    let unit = tokens.l2_normalize_last(NORM_EPS);
    let cos = unit.bmm(&unit.permute(&[0, 2, 1]));
    let s = cos.relu().powf(gamma);
    // 0^0 = 1 would otherwise let zero vectors through when gamma = 0
    let norms = tokens.value().mapv(|v| v * v).sum_axis(ndarray::Axis(2));
    let valid = norms.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let shape = valid.shape().to_vec();
    let (n, l) = (shape[0], shape[1]);
    let rows = valid.clone().into_shape_with_order(ndarray::IxDyn(&[n, l, 1])).unwrap();
    let cols = valid.into_shape_with_order(ndarray::IxDyn(&[n, 1, l])).unwrap();
    let mask = &rows * &cols;
    s.mul(&Var::constant(mask))
}

/// Smooth a `N x D x h x w` map: `q_i = sum_j S(x_i, x_j) G(x_j)`.
pub fn ppm_smooth_with(map: &Var, gamma: f64, g: impl FnOnce(&Var) -> Var) -> Var {
    let s = map.shape().to_vec();
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    let tokens = map.reshape(&[n, d, h * w]).permute(&[0, 2, 1]);
    let sim = pixel_similarity(&tokens, gamma);
    let transformed = g(&tokens);
    let dout = transformed.shape()[2];
    sim.bmm(&transformed).permute(&[0, 2, 1]).reshape(&[n, dout, h, w])
}

pub fn ppm_smooth(ctx: &mut Ctx, map: &Var, gamma: f64, transform: &PpmTransform) -> Var {
    ppm_smooth_with(map, gamma, |t| transform.forward(ctx, t))
}
