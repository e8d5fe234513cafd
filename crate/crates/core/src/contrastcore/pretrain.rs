use agri_autograd::{LrSchedule, OptimizerSpec, ParamKind, ParamStore};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::steps::Batch;
use super::{ContrastConfig, ContrastError, Learner, LossReport, Method, NegativeQueue, Subspace};
use crate::encoders::{Checkpoint, EncoderError, EncoderSpec, BACKBONE_PREFIX};
use crate::fieldstore::{tile_grid, RevisitGroup};
use crate::viewfactory::{
    epoch_order, sample_moco_pair, sample_triplet_from_stack, AugmentConfig, SourceTile, TemcoAssignment,
    TemporalStack,
};

/// Everything that shapes a pre-training run apart from data and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub method: Method,
    pub encoder: EncoderSpec,
    pub augment: AugmentConfig,
    pub contrast: ContrastConfig,
    pub optimizer: OptimizerSpec,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub epochs: u64,
    pub batch_size: usize,
    /// Stop after this many optimisation steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub temco_assignment: TemcoAssignment,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            method: Method::Moco,
            encoder: EncoderSpec::default(),
            augment: AugmentConfig::default(),
            contrast: ContrastConfig::default(),
            optimizer: OptimizerSpec::sgd(0.9, 1e-4),
            lr: 0.03,
            schedule: LrSchedule::Milestones {
                epochs: vec![120, 160],
                gamma: 0.1,
            },
            epochs: 200,
            batch_size: 256,
            max_steps: None,
            temco_assignment: TemcoAssignment::Invariance,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), ContrastError> {
        self.encoder.validate()?;
        self.augment.validate()?;
        self.contrast.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ContrastError::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(ContrastError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Pre-training corpus: plain tiles, or co-registered stacks for the
/// temporal methods.
#[derive(Debug, Clone)]
pub enum PretrainData {
    Tiles(Vec<SourceTile>),
    Stacks(Vec<TemporalStack>),
}

impl PretrainData {
    /// Cut every group into aligned `tile_size` stacks.
    pub fn from_groups(groups: &[RevisitGroup], tile_size: usize) -> Result<PretrainData, ContrastError> {
        let mut stacks = Vec::new();
        for g in groups {
            let grid = tile_grid(g.height(), g.width(), tile_size)
                .map_err(|e| ContrastError::Config(e.to_string()))?;
            for origin in grid {
                stacks.push(TemporalStack::from_group(g, origin, tile_size)?);
            }
        }
        Ok(PretrainData::Stacks(stacks))
    }

    /// All tiles; stacks contribute one tile per flight.
    pub fn tiles(&self) -> Vec<SourceTile> {
        match self {
            PretrainData::Tiles(t) => t.clone(),
            PretrainData::Stacks(s) => s.iter().flat_map(|s| s.flights.iter().cloned()).collect(),
        }
    }
}

enum Items {
    Tiles(Vec<SourceTile>),
    Stacks(Vec<TemporalStack>),
}

impl Items {
    fn len(&self) -> usize {
        match self {
            Items::Tiles(t) => t.len(),
            Items::Stacks(s) => s.len(),
        }
    }
}

/// Drives a [`Learner`] through the configured schedule. View sampling for
/// step `s` depends only on the seed and `s`, so a run resumed from a
/// checkpoint continues exactly as the uninterrupted one would.
pub struct Pretrainer {
    pub config: PretrainConfig,
    pub seed: u64,
    pub learner: Learner,
    items: Items,
    steps_per_epoch: u64,
    total_steps: u64,
}

impl Pretrainer {
    pub fn new(config: PretrainConfig, data: &PretrainData, seed: u64) -> Result<Pretrainer, ContrastError> {
        config.validate()?;
        let items = match (config.method.is_temporal(), data) {
            (false, d) => Items::Tiles(d.tiles()),
            (true, PretrainData::Stacks(s)) => {
                let eligible: Vec<TemporalStack> = s.iter().filter(|s| s.is_eligible()).cloned().collect();
                Items::Stacks(eligible)
            }
            (true, PretrainData::Tiles(_)) => {
                return Err(ContrastError::Config(format!(
                    "{} needs revisit groups, not single tiles",
                    config.method
                )))
            }
        };
        if items.len() == 0 {
            return Err(ContrastError::Config("no usable training data".into()));
        }
        let steps_per_epoch = items.len().div_ceil(config.batch_size) as u64;
        let mut total_steps = steps_per_epoch * config.epochs;
        if let Some(m) = config.max_steps {
            total_steps = total_steps.min(m);
        }
        let learner = Learner::new(
            config.method,
            &config.encoder,
            config.contrast.clone(),
            config.optimizer.clone(),
            seed,
        )?;
        Ok(Pretrainer {
            config,
            seed,
            learner,
            items,
            steps_per_epoch,
            total_steps,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.learner.step >= self.total_steps
    }

    fn batch_for(&self, step: u64) -> Result<Batch, ContrastError> {
        let epoch = step / self.steps_per_epoch;
        let b = (step % self.steps_per_epoch) as usize;
        let order = epoch_order(self.items.len(), self.seed, epoch);
        let end = ((b + 1) * self.config.batch_size).min(order.len());
        let picks = &order[b * self.config.batch_size..end];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step + 1);
        let cfg = &self.config.augment;
        Ok(match &self.items {
            Items::Tiles(t) => Batch::Moco(
                picks
                    .iter()
                    .map(|&i| sample_moco_pair(&t[i], cfg, &mut rng))
                    .collect::<Result<_, _>>()?,
            ),
            Items::Stacks(s) => Batch::Temco(
                picks
                    .iter()
                    .map(|&i| sample_triplet_from_stack(&s[i], cfg, self.config.temco_assignment, &mut rng))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    /// Run the next optimisation step.
    pub fn step(&mut self) -> Result<LossReport, ContrastError> {
        if self.is_done() {
            return Err(ContrastError::Config("training schedule already finished".into()));
        }
        let step = self.learner.step;
        let epoch = step / self.steps_per_epoch;
        let batch = self.batch_for(step)?;
        let lr = self
            .config
            .schedule
            .lr(self.config.lr, step as usize, self.total_steps as usize, epoch as usize);
        self.learner.train_step(&batch, epoch, lr)
    }

    /// Step until the schedule ends or `until` steps have completed.
    pub fn run(
        &mut self,
        until: Option<u64>,
        mut on_step: impl FnMut(&Pretrainer, &LossReport) -> Result<(), ContrastError>,
    ) -> Result<(), ContrastError> {
        let stop = until.unwrap_or(u64::MAX).min(self.total_steps);
        while self.learner.step < stop {
            let report = self.step()?;
            on_step(self, &report)?;
        }
        Ok(())
    }

    /// Online backbone weights and statistics, the part downstream
    /// protocols consume.
    pub fn encoder_store(&self) -> ParamStore {
        self.learner.pair.online.with_prefix(BACKBONE_PREFIX)
    }

    pub fn checkpoint(&self, run_config: &str) -> Checkpoint {
        let l = &self.learner;
        let mut ck = Checkpoint::new(self.config.encoder.clone());
        ck.run_config = run_config.to_string();
        ck.sections.insert("online".into(), l.pair.online.clone());
        ck.sections.insert("offline".into(), l.pair.offline.clone());
        let (opt_steps, state) = l.optimizer.export_state();
        let mut opt = ParamStore::new();
        for (k, v) in state {
            opt.insert(k, v, ParamKind::Buffer);
        }
        ck.sections.insert("optimizer".into(), opt);
        let mut queues = ParamStore::new();
        for (i, q) in l.queues.iter().enumerate() {
            queues.insert(format!("queue{i}"), q.matrix().into_dyn(), ParamKind::Buffer);
        }
        ck.sections.insert("queues".into(), queues);
        ck.meta = serde_json::json!({
            "method": self.config.method.name(),
            "seed": self.seed,
            "step": l.step,
            "optimizer_steps": opt_steps,
            "queues": l.queues.iter().map(|q| serde_json::json!({
                "subspace": q.subspace,
                "capacity": q.capacity,
                "next_seq": q.next_seq(),
            })).collect::<Vec<_>>(),
        });
        ck
    }

    /// Rebuild the trainer state stored by [`Pretrainer::checkpoint`].
    pub fn resume(
        config: PretrainConfig,
        data: &PretrainData,
        seed: u64,
        ck: &Checkpoint,
    ) -> Result<Pretrainer, ContrastError> {
        let mut t = Pretrainer::new(config, data, seed)?;
        let bad = |m: &str| ContrastError::Encoder(EncoderError::Checkpoint(m.to_string()));
        let meta = &ck.meta;
        if meta["method"].as_str() != Some(t.config.method.name()) {
            return Err(bad("checkpoint was written by a different method"));
        }
        if meta["seed"].as_u64() != Some(seed) {
            return Err(bad("checkpoint was written with a different seed"));
        }
        let online = ck.section("online")?.clone();
        let offline = ck.section("offline")?.clone();
        t.learner.pair.online.check_same_layout(&online)?;
        t.learner.pair.online.check_same_layout(&offline)?;
        t.learner.pair.online = online;
        t.learner.pair.offline = offline;
        let opt_steps = meta["optimizer_steps"].as_u64().ok_or_else(|| bad("missing optimizer step count"))?;
        let state = ck
            .section("optimizer")?
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect();
        t.learner.optimizer.import_state(opt_steps, state);
        let qmeta = meta["queues"].as_array().ok_or_else(|| bad("missing queue metadata"))?;
        if qmeta.len() != t.learner.queues.len() {
            return Err(bad("queue count does not match the method"));
        }
        let qs = ck.section("queues")?;
        for (i, m) in qmeta.iter().enumerate() {
            let subspace: Subspace =
                serde_json::from_value(m["subspace"].clone()).map_err(|_| bad("bad queue sub-space"))?;
            let capacity = m["capacity"].as_u64().ok_or_else(|| bad("bad queue capacity"))? as usize;
            let next_seq = m["next_seq"].as_u64().ok_or_else(|| bad("bad queue sequence"))?;
            let keys: Array2<f64> = qs
                .get(&format!("queue{i}"))
                .ok_or_else(|| bad("missing queue"))?
                .value
                .clone()
                .into_dimensionality()
                .map_err(|_| bad("queue is not a matrix"))?;
            let keys = if keys.nrows() == 0 {
                Array2::zeros((0, t.config.encoder.feature_dim))
            } else {
                keys
            };
            t.learner.queues[i] = NegativeQueue::restore(capacity, subspace, &keys, next_seq)?;
        }
        t.learner.step = meta["step"].as_u64().ok_or_else(|| bad("missing step"))?;
        Ok(t)
    }
}
