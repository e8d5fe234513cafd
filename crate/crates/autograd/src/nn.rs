//! Layers defined by name prefix; values live in a [`ParamStore`].
//!
//! A layer struct only describes shapes. The same description can run
//! against any store with a matching layout, which is what lets an online
//! network and its momentum copy share one architecture object.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::conv::Conv2dGeometry;
use crate::params::{Bound, ParamKind, ParamStore};
use crate::var::{Array, Var};

/// State threaded through a forward pass.
pub struct Ctx<'a> {
    pub params: &'a Bound,
    pub store: &'a ParamStore,
    pub train: bool,
    buffer_updates: Vec<(String, Array)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, params: &'a Bound, train: bool) -> Self {
        Ctx {
            params,
            store,
            train,
            buffer_updates: Vec::new(),
        }
    }

    pub fn p(&self, name: &str) -> &Var {
        self.params.get(name)
    }

    /// Running-statistic updates gathered during the pass.
    pub fn take_buffer_updates(&mut self) -> Vec<(String, Array)> {
        std::mem::take(&mut self.buffer_updates)
    }
}

/// Write buffer updates gathered by [`Ctx::take_buffer_updates`].
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(String, Array)>) {
    for (name, value) in updates {
        store.set_value(&name, value);
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Array {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Array {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let n = shape.iter().product();
    ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    /// He-normal init in fan-out mode.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let fan_out = self.out_channels * self.kernel * self.kernel;
        let w = normal(
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            (2.0 / fan_out as f64).sqrt(),
            rng,
        );
        store.insert(self.weight_name(), w, ParamKind::Weight);
        if self.bias {
            store.insert(format!("{}.bias", self.name), ArrayD::zeros(IxDyn(&[self.out_channels])), ParamKind::Weight);
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let y = x.conv2d(
            ctx.p(&self.weight_name()),
            Conv2dGeometry {
                stride: self.stride,
                padding: self.padding,
            },
        );
        if self.bias {
            let b = ctx.p(&format!("{}.bias", self.name)).reshape(&[1, self.out_channels, 1, 1]);
            y.add(&b)
        } else {
            y
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        let c = self.channels;
        store.insert(format!("{}.weight", self.name), ArrayD::ones(IxDyn(&[c])), ParamKind::Weight);
        store.insert(format!("{}.bias", self.name), ArrayD::zeros(IxDyn(&[c])), ParamKind::Weight);
        store.insert(format!("{}.running_mean", self.name), ArrayD::zeros(IxDyn(&[c])), ParamKind::Buffer);
        store.insert(format!("{}.running_var", self.name), ArrayD::ones(IxDyn(&[c])), ParamKind::Buffer);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let gamma = ctx.p(&format!("{}.weight", self.name)).clone();
        let beta = ctx.p(&format!("{}.bias", self.name)).clone();
        let rm_name = format!("{}.running_mean", self.name);
        let rv_name = format!("{}.running_var", self.name);
        if ctx.train {
            let (y, stats) = x.batch_norm_train(&gamma, &beta, self.eps);
            let m = self.momentum;
            let rm = ctx.store.value(&rm_name);
            let rv = ctx.store.value(&rv_name);
            let new_rm = rm * (1.0 - m) + &(ArrayD::from_shape_vec(IxDyn(&[self.channels]), stats.mean).unwrap() * m);
            let new_rv = rv * (1.0 - m) + &(ArrayD::from_shape_vec(IxDyn(&[self.channels]), stats.var).unwrap() * m);
            ctx.buffer_updates.push((rm_name, new_rm));
            ctx.buffer_updates.push((rv_name, new_rv));
            y
        } else {
            let rm = ctx.store.value(&rm_name).clone();
            let rv = ctx.store.value(&rv_name).clone();
            x.batch_norm_eval(&gamma, &beta, &rm, &rv, self.eps)
        }
    }
}

/// Affine map over the last axis. Weight stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear {
            name: name.into(),
            in_features,
            out_features,
            bias: true,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let bound = 1.0 / (self.in_features as f64).sqrt();
        store.insert(
            format!("{}.weight", self.name),
            uniform(&[self.in_features, self.out_features], bound, rng),
            ParamKind::Weight,
        );
        if self.bias {
            store.insert(
                format!("{}.bias", self.name),
                uniform(&[self.out_features], bound, rng),
                ParamKind::Weight,
            );
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let shape = x.shape().to_vec();
        let flat = x.reshape(&[x.len() / self.in_features, self.in_features]);
        let mut y = flat.matmul(ctx.p(&format!("{}.weight", self.name)));
        if self.bias {
            y = y.add(ctx.p(&format!("{}.bias", self.name)));
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_features;
        y.reshape(&out_shape)
    }
}

/// Layer norm over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
            eps: 1e-5,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}.weight", self.name), ArrayD::ones(IxDyn(&[self.dim])), ParamKind::Weight);
        store.insert(format!("{}.bias", self.name), ArrayD::zeros(IxDyn(&[self.dim])), ParamKind::Weight);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        x.layer_norm_last(self.eps)
            .mul(ctx.p(&format!("{}.weight", self.name)))
            .add(ctx.p(&format!("{}.bias", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batchnorm_train_normalises_and_records_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new("bn", 2);
        bn.init(&mut store);
        let bound = store.bind_all();
        let mut ctx = Ctx::new(&store, &bound, true);
        let x = Var::from_vec(&[2, 2, 1, 2], vec![1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 20.0, 20.0]);
        let y = bn.forward(&mut ctx, &x);
        let mean_c0 = (y.data()[0] + y.data()[1] + y.data()[4] + y.data()[5]) / 4.0;
        assert!(mean_c0.abs() < 1e-12);
        let updates = ctx.take_buffer_updates();
        assert_eq!(updates.len(), 2);
        // 0.9 * 0 + 0.1 * mean(1,3,5,7)
        assert!((updates[0].1[[0]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn linear_applies_over_last_axis() {
        let mut store = ParamStore::new();
        let lin = Linear::new("fc", 3, 2);
        lin.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let bound = store.bind_all();
        let mut ctx = Ctx::new(&store, &bound, true);
        let y = lin.forward(&mut ctx, &Var::from_vec(&[2, 2, 3], vec![1.0; 12]));
        assert_eq!(y.shape(), &[2, 2, 2]);
    }
}
