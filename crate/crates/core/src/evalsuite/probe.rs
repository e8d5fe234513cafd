use agri_autograd::nn::{apply_buffer_updates, Ctx, Linear};
use agri_autograd::{LrSchedule, Optimizer, OptimizerSpec, ParamStore, Var};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::weights::{images_to_batch, pooled_features, EncoderWeights};
use super::{cross_entropy, subsample_indices, ClassificationTask, ConfusionMatrix, EvalError, MetricReport};
use crate::encoders::{Network, BACKBONE_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    NonlinearMlp,
    Finetune,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Linear, ProbeKind::NonlinearMlp, ProbeKind::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Linear => "linear",
            ProbeKind::NonlinearMlp => "nonlinear_mlp",
            ProbeKind::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<ProbeKind> {
        ProbeKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn freezes_encoder(self) -> bool {
        self != ProbeKind::Finetune
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeProtocol {
    pub kind: ProbeKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub label_fraction: f64,
    /// Hidden width of the multi-layer head.
    pub hidden_dim: usize,
    /// Standardise pooled features with training-set statistics before the
    /// head.
    pub standardize: bool,
}

impl Default for ProbeProtocol {
    fn default() -> Self {
        ProbeProtocol::linear()
    }
}

impl ProbeProtocol {
    pub fn linear() -> Self {
        ProbeProtocol {
            kind: ProbeKind::Linear,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerSpec::adam(0.0),
            lr: 1e-4,
            schedule: LrSchedule::Constant,
            label_fraction: 1.0,
            hidden_dim: 512,
            standardize: true,
        }
    }

    pub fn nonlinear() -> Self {
        ProbeProtocol {
            kind: ProbeKind::NonlinearMlp,
            epochs: 100,
            ..ProbeProtocol::linear()
        }
    }

    pub fn finetune() -> Self {
        ProbeProtocol {
            kind: ProbeKind::Finetune,
            epochs: 100,
            ..ProbeProtocol::linear()
        }
    }

    pub fn for_kind(kind: ProbeKind) -> Self {
        match kind {
            ProbeKind::Linear => Self::linear(),
            ProbeKind::NonlinearMlp => Self::nonlinear(),
            ProbeKind::Finetune => Self::finetune(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(EvalError::Config("epochs, batch_size and hidden_dim must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(EvalError::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(EvalError::Config(format!(
                "label fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        Ok(())
    }
}

/// Classifier on pooled features: one affine layer, or two with a ReLU.
#[derive(Debug, Clone)]
struct Head {
    layers: Vec<Linear>,
}

impl Head {
    fn new(kind: ProbeKind, in_dim: usize, hidden: usize, classes: usize) -> Head {
        let layers = match kind {
            ProbeKind::Linear => vec![Linear::new("probe.fc", in_dim, classes)],
            _ => vec![
                Linear::new("probe.fc1", in_dim, hidden),
                Linear::new("probe.fc2", hidden, classes),
            ],
        };
        Head { layers }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.relu();
            }
            h = l.forward(ctx, &h);
        }
        h
    }
}

/// Fixed feature standardisation fitted on the training features.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    fn fit(features: &Array2<f64>, enabled: bool) -> Standardizer {
        let d = features.ncols();
        if !enabled {
            return Standardizer {
                mean: Array1::zeros(d),
                inv_std: Array1::ones(d),
            };
        }
        let mean = features.mean_axis(Axis(0)).unwrap();
        let std = features.std_axis(Axis(0), 0.0);
        Standardizer {
            mean,
            inv_std: std.mapv(|s| 1.0 / (s + 1e-6)),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) * &self.inv_std
    }

    fn apply_var(&self, x: &Var) -> Var {
        let d = self.mean.len();
        let shift = Var::constant(self.mean.clone().into_shape_with_order(vec![1, d]).unwrap().into_dyn());
        let scale = Var::constant(self.inv_std.clone().into_shape_with_order(vec![1, d]).unwrap().into_dyn());
        x.sub(&shift).mul(&scale)
    }
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn rows_of(x: &Array2<f64>, idx: &[usize]) -> Var {
    Var::constant(x.select(Axis(0), idx).into_dyn())
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Train a classifier on top of `weights` and report validation accuracy.
/// Linear and MLP heads see frozen features; `finetune` trains everything.
pub fn probe(
    weights: &EncoderWeights,
    task: &ClassificationTask,
    protocol: &ProbeProtocol,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    protocol.validate()?;
    weights.check()?;
    task.train.check()?;
    task.val.check()?;
    if task.train.is_empty() || task.val.is_empty() {
        return Err(EvalError::Config("probing needs non-empty train and validation sets".into()));
    }
    for s in task.train.samples.iter().chain(&task.val.samples) {
        weights.check_channels(s.pixels.shape()[0])?;
    }
    let keep = subsample_indices(&task.train.labels(), protocol.label_fraction, seed)?;
    let train = task.train.subset(&keep);
    let classes = task.train.num_classes();
    let labels = train.labels();
    let train_images: Vec<_> = train.samples.iter().map(|s| &s.pixels).collect();
    let val_images: Vec<_> = task.val.samples.iter().map(|s| &s.pixels).collect();
    let digest_before = weights.digest();

    let train_feats = pooled_features(weights, &train_images)?;
    let standardizer = Standardizer::fit(&train_feats, protocol.standardize);
    let head = Head::new(protocol.kind, train_feats.ncols(), protocol.hidden_dim, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    head.init(&mut store, &mut rng);
    let finetune = protocol.kind == ProbeKind::Finetune;
    if finetune {
        store.merge(&weights.store);
    }
    let net = Network::backbone_only(&weights.spec)?;
    let mut optimizer = Optimizer::new(protocol.optimizer.clone());
    let steps_per_epoch = train.len().div_ceil(protocol.batch_size);
    let total = steps_per_epoch * protocol.epochs;
    let std_train = standardizer.apply(&train_feats);
    let mut train_loss = Vec::with_capacity(protocol.epochs);
    let mut step = 0;
    for epoch in 0..protocol.epochs {
        let mut sum = 0.0;
        for batch in epoch_batches(train.len(), protocol.batch_size, seed, epoch) {
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let bound = store.bind_all();
            let mut ctx = Ctx::new(&store, &bound, true);
            let feats = if finetune {
                let imgs: Vec<_> = batch.iter().map(|&i| train_images[i]).collect();
                let stages = net.backbone.forward(&mut ctx, &images_to_batch(&imgs));
                standardizer.apply_var(&stages.last().unwrap().mean_axes(&[2, 3], false))
            } else {
                rows_of(&std_train, &batch)
            };
            let logits = head.forward(&mut ctx, &feats);
            let updates = ctx.take_buffer_updates();
            let loss = cross_entropy(&logits, &y, None)?;
            sum += loss.item() * batch.len() as f64;
            let grads = bound.grads(&loss.backward());
            let lr = protocol.schedule.lr(protocol.lr, step, total, epoch);
            optimizer.step(&mut store, &grads, lr);
            apply_buffer_updates(&mut store, updates);
            step += 1;
        }
        train_loss.push(sum / train.len() as f64);
    }

    let final_weights = if finetune {
        EncoderWeights::from_store(&weights.spec, &store, weights.provenance.clone())?
    } else {
        weights.clone()
    };
    let val_feats = standardizer.apply(&pooled_features(&final_weights, &val_images)?);
    let bound = store.bind_frozen();
    let mut ctx = Ctx::new(&store, &bound, false);
    let logits = head.forward(&mut ctx, &Var::constant(val_feats.into_dyn()));
    let pred = argmax_rows(&logits.value().clone().into_dimensionality().unwrap());
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(&task.val.labels(), &pred, None)?;
    let digest_after = if finetune {
        store.digest(BACKBONE_PREFIX)
    } else {
        weights.digest()
    };
    Ok(MetricReport {
        task: "classification".into(),
        protocol: protocol.kind.name().into(),
        weights: weights.provenance.clone(),
        seed,
        label_fraction: protocol.label_fraction,
        train_samples: train.len(),
        val_samples: task.val.len(),
        encoder_frozen: !finetune,
        encoder_digest_before: digest_before,
        encoder_digest_after: digest_after,
        class_names: task.train.class_names.clone(),
        top1_accuracy: Some(cm.accuracy()?),
        macro_accuracy: Some(cm.macro_accuracy()?),
        per_class_iou: None,
        mean_iou: None,
        pixel_accuracy: None,
        confusion_matrix: cm,
        train_loss,
    })
}
