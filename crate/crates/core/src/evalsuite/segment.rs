use agri_autograd::nn::{apply_buffer_updates, BatchNorm, Conv2d, Ctx};
use agri_autograd::{LrSchedule, Optimizer, OptimizerSpec, ParamStore, Var};
use ndarray::{ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::dense_logits_rows;
use super::weights::{frozen_stages, images_to_batch, EncoderWeights};
use super::{cross_entropy, focal_loss, subsample_indices, ConfusionMatrix, EvalError, MetricReport, SegmentationTask};
use crate::encoders::{Network, BACKBONE_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegLoss {
    CrossEntropy,
    Focal { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub loss: SegLoss,
    pub freeze_encoder: bool,
    pub label_fraction: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            epochs: 20,
            batch_size: 16,
            optimizer: OptimizerSpec::adam(0.0),
            lr: 0.01,
            schedule: LrSchedule::one_cycle(),
            loss: SegLoss::CrossEntropy,
            freeze_encoder: true,
            label_fraction: 1.0,
        }
    }
}

impl SegConfig {
    /// Focal-loss variant for the class-imbalanced fine-grained task.
    pub fn fine_grained() -> Self {
        SegConfig {
            loss: SegLoss::Focal { gamma: 2.0 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EvalError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(EvalError::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(EvalError::Config(format!("label fraction must lie in (0, 1], got {}", self.label_fraction)));
        }
        if let SegLoss::Focal { gamma } = self.loss {
            if !(gamma >= 0.0) {
                return Err(EvalError::Config(format!("focal gamma must be non-negative, got {gamma}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

/// U-shaped decoder: from the coarsest stage upward, upsample, concatenate
/// the next finer stage and apply conv-BN-ReLU; a 1x1 convolution at input
/// resolution gives the class logits.
#[derive(Debug, Clone)]
pub struct UNetDecoder {
    blocks: Vec<DecoderBlock>,
    classifier: Conv2d,
    pub num_classes: usize,
}

impl UNetDecoder {
    /// `stage_channels` finest first, as produced by the backbone.
    pub fn new(stage_channels: &[usize], num_classes: usize) -> UNetDecoder {
        let l = stage_channels.len();
        let mut blocks = Vec::new();
        let mut cin = stage_channels[l - 1];
        for i in (0..l - 1).rev() {
            let cout = stage_channels[i];
            blocks.push(DecoderBlock {
                conv: Conv2d::new(format!("decoder.up{i}.conv"), cin + cout, cout, 3, 1),
                bn: BatchNorm::new(format!("decoder.up{i}.bn"), cout),
            });
            cin = cout;
        }
        UNetDecoder {
            blocks,
            classifier: Conv2d::new("decoder.classifier", cin, num_classes, 1, 1).with_bias(),
            num_classes,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for b in &self.blocks {
            b.conv.init(store, rng);
            b.bn.init(store);
        }
        self.classifier.init(store, rng);
    }

    /// Logits `N x classes x H x W` for an `H x W` input.
    pub fn forward(&self, ctx: &mut Ctx, stages: &[Var], input_hw: (usize, usize)) -> Result<Var, EvalError> {
        let l = stages.len();
        let mut x = stages[l - 1].clone();
        for (b, i) in self.blocks.iter().zip((0..l - 1).rev()) {
            let skip = &stages[i];
            x = upsample_to(&x, (skip.shape()[2], skip.shape()[3]))?;
            let cat = Var::cat(&[x, skip.clone()], 1);
            let c = b.conv.forward(ctx, &cat);
            x = b.bn.forward(ctx, &c).relu();
        }
        let x = upsample_to(&x, input_hw)?;
        Ok(self.classifier.forward(ctx, &x))
    }
}

fn upsample_to(x: &Var, hw: (usize, usize)) -> Result<Var, EvalError> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if (h, w) == hw {
        return Ok(x.clone());
    }
    if hw.0 % h != 0 || hw.1 % w != 0 || hw.0 / h != hw.1 / w {
        return Err(EvalError::Config(format!(
            "cannot upsample {h}x{w} to {}x{}; use inputs divisible by the map stride",
            hw.0, hw.1
        )));
    }
    Ok(x.upsample_nearest(hw.0 / h))
}

fn stage_rows(stages: &[ArrayD<f64>], idx: &[usize]) -> Vec<Var> {
    stages.iter().map(|s| Var::constant(s.select(Axis(0), idx))).collect()
}

fn argmax_channels(logits: &ArrayD<f64>) -> Vec<usize> {
    let s = logits.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(n * h * w);
    for i in 0..n {
        for p in 0..h * w {
            let (r, col) = (p / w, p % w);
            let mut best = (0, f64::NEG_INFINITY);
            for k in 0..c {
                let v = logits[[i, k, r, col]];
                if v > best.1 {
                    best = (k, v);
                }
            }
            out.push(best.0);
        }
    }
    out
}

/// Train a U-Net decoder over `weights` and report validation IoU.
pub fn train_segmentation(
    weights: &EncoderWeights,
    task: &SegmentationTask,
    config: &SegConfig,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    config.validate()?;
    weights.check()?;
    task.train.check()?;
    task.val.check()?;
    if task.train.num_classes() != task.val.num_classes() {
        return Err(EvalError::Config("train and validation class lists differ".into()));
    }
    if task.train.is_empty() || task.val.is_empty() {
        return Err(EvalError::Config("segmentation needs non-empty train and validation sets".into()));
    }
    for s in task.train.samples.iter().chain(&task.val.samples) {
        weights.check_channels(s.pixels.shape()[0])?;
    }
    let keep = subsample_indices(&task.train.presence_keys(), config.label_fraction, seed)?;
    let train = task.train.subset(&keep);
    let ignore = Some(task.train.ignore_index);
    let classes = task.train.num_classes();
    let loss_fn = |logits: &Var, labels: &[usize]| -> Result<Var, EvalError> {
        let rows = dense_logits_rows(logits);
        match config.loss {
            SegLoss::CrossEntropy => cross_entropy(&rows, labels, ignore),
            SegLoss::Focal { gamma } => focal_loss(&rows, labels, gamma, ignore),
        }
    };
    let train_images: Vec<_> = train.samples.iter().map(|s| &s.pixels).collect();
    let val_images: Vec<_> = task.val.samples.iter().map(|s| &s.pixels).collect();
    let hw = (train_images[0].shape()[1], train_images[0].shape()[2]);
    let digest_before = weights.digest();

    let net = Network::backbone_only(&weights.spec)?;
    let decoder = UNetDecoder::new(&net.backbone.stage_channels(), classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    decoder.init(&mut store, &mut rng);
    let frozen = config.freeze_encoder;
    let cached = if frozen {
        Some(frozen_stages(weights, &train_images, 64)?)
    } else {
        store.merge(&weights.store);
        None
    };
    let mut optimizer = Optimizer::new(config.optimizer.clone());
    let total = train.len().div_ceil(config.batch_size) * config.epochs;
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut erng = ChaCha8Rng::seed_from_u64(seed);
        erng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut erng);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let labels: Vec<usize> = batch.iter().flat_map(|&i| train.samples[i].mask.iter().copied()).collect();
            let bound = store.bind_all();
            let mut ctx = Ctx::new(&store, &bound, true);
            let stages = match &cached {
                Some(c) => stage_rows(c, batch),
                None => {
                    let imgs: Vec<_> = batch.iter().map(|&i| train_images[i]).collect();
                    net.backbone.forward(&mut ctx, &images_to_batch(&imgs))
                }
            };
            let logits = decoder.forward(&mut ctx, &stages, hw)?;
            let updates = ctx.take_buffer_updates();
            let loss = match loss_fn(&logits, &labels) {
                Ok(l) => l,
                // a batch made only of ignored pixels carries no signal
                Err(EvalError::NoLabeledPixels) => continue,
                Err(e) => return Err(e),
            };
            sum += loss.item() * batch.len() as f64;
            let grads = bound.grads(&loss.backward());
            let lr = config.schedule.lr(config.lr, step, total, epoch);
            optimizer.step(&mut store, &grads, lr);
            apply_buffer_updates(&mut store, updates);
            step += 1;
        }
        train_loss.push(sum / train.len() as f64);
    }

    let final_weights = if frozen {
        weights.clone()
    } else {
        EncoderWeights::from_store(&weights.spec, &store, weights.provenance.clone())?
    };
    let val_stages = frozen_stages(&final_weights, &val_images, 64)?;
    let bound = store.bind_frozen();
    let mut cm = ConfusionMatrix::new(classes);
    let idx: Vec<usize> = (0..task.val.len()).collect();
    for chunk in idx.chunks(64) {
        let mut ctx = Ctx::new(&store, &bound, false);
        let logits = decoder.forward(&mut ctx, &stage_rows(&val_stages, chunk), hw)?;
        let pred = argmax_channels(logits.value());
        let truth: Vec<usize> = chunk.iter().flat_map(|&i| task.val.samples[i].mask.iter().copied()).collect();
        cm.accumulate(&truth, &pred, ignore)?;
    }
    let digest_after = if frozen {
        weights.digest()
    } else {
        store.digest(BACKBONE_PREFIX)
    };
    Ok(MetricReport {
        task: "segmentation".into(),
        protocol: if frozen { "segment_frozen" } else { "segment_finetune" }.into(),
        weights: weights.provenance.clone(),
        seed,
        label_fraction: config.label_fraction,
        train_samples: train.len(),
        val_samples: task.val.len(),
        encoder_frozen: frozen,
        encoder_digest_before: digest_before,
        encoder_digest_after: digest_after,
        class_names: task.train.class_names.clone(),
        top1_accuracy: None,
        macro_accuracy: None,
        per_class_iou: Some(cm.per_class_iou()),
        mean_iou: Some(cm.mean_iou()?),
        pixel_accuracy: Some(cm.accuracy()?),
        confusion_matrix: cm,
        train_loss,
    })
}
