use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use agri_autograd::nn::{apply_buffer_updates, Ctx};
use agri_autograd::{Optimizer, OptimizerSpec, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{info_nce, match_pixel_pairs, pixpro_loss, ContrastError, NegativeQueue, PixelPairSet, Subspace};
use crate::encoders::{views_to_batch, EncoderSpec, MomentumPair, NetOutput, Network};
use crate::viewfactory::{AugmentedView, TemporalTriplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub queue_capacity: usize,
    pub momentum: f64,
    pub tau_dist: f64,
    /// Weight of the instance term when a pixel term is present.
    pub alpha: f64,
    /// Sharpening exponent of the propagation module.
    pub gamma: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            temperature: 0.2,
            queue_capacity: 4096,
            momentum: 0.999,
            tau_dist: 0.7,
            alpha: 0.4,
            gamma: 2.0,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<(), ContrastError> {
        let bad = |m: String| Err(ContrastError::Config(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1], got {}", self.momentum));
        }
        if !(self.tau_dist > 0.0) {
            return bad(format!("tau_dist must be positive, got {}", self.tau_dist));
        }
        if !(self.alpha >= 0.0) || !(self.gamma >= 0.0) {
            return bad("alpha and gamma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Moco,
    MocoPixpro,
    Temco,
    TemcoPixpro,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Moco, Method::MocoPixpro, Method::Temco, Method::TemcoPixpro];

    pub fn name(self) -> &'static str {
        match self {
            Method::Moco => "moco",
            Method::MocoPixpro => "moco_pixpro",
            Method::Temco => "temco",
            Method::TemcoPixpro => "temco_pixpro",
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Method::Temco | Method::TemcoPixpro)
    }

    pub fn uses_pixels(self) -> bool {
        matches!(self, Method::MocoPixpro | Method::TemcoPixpro)
    }

    /// Queue sub-spaces, in instance-head order.
    pub fn subspaces(self) -> Vec<Subspace> {
        if self.is_temporal() {
            Subspace::TEMCO.to_vec()
        } else {
            vec![Subspace::Default]
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected moco, moco_pixpro, temco or temco_pixpro)"))
    }
}

/// One optimisation step's worth of views.
#[derive(Debug, Clone)]
pub enum Batch {
    Moco(Vec<(AugmentedView, AugmentedView)>),
    Temco(Vec<TemporalTriplet>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Moco(v) => v.len(),
            Batch::Temco(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss terms of one step, also the metrics-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub epoch: u64,
    pub l_inst: f64,
    pub l_pixpro: Option<f64>,
    /// Instance loss of each queue sub-space.
    pub per_subspace: BTreeMap<String, f64>,
    pub total: f64,
    pub num_pixel_pairs: usize,
    /// True when a pixel method found no matched pairs and fell back to
    /// the instance term alone.
    #[serde(default)]
    pub pixel_skipped: bool,
    pub lr: f64,
}

/// Online and momentum networks, queues and optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub method: Method,
    pub contrast: ContrastConfig,
    pub network: Network,
    pub pair: MomentumPair,
    pub queues: Vec<NegativeQueue>,
    pub optimizer: Optimizer,
    /// Completed optimisation steps.
    pub step: u64,
}

fn rows(v: &Var, start: usize, len: usize) -> Var {
    v.narrow(0, start, len)
}

fn to_matrix(v: &Var) -> Array2<f64> {
    v.value().clone().into_dimensionality().expect("embedding is 2-d")
}

impl Learner {
    pub fn new(
        method: Method,
        encoder: &EncoderSpec,
        contrast: ContrastConfig,
        optimizer: OptimizerSpec,
        seed: u64,
    ) -> Result<Learner, ContrastError> {
        contrast.validate()?;
        let subspaces = method.subspaces();
        let network = Network::new(encoder, subspaces.len(), method.uses_pixels())?;
        let online = network.init(&mut ChaCha8Rng::seed_from_u64(seed));
        let queues = subspaces
            .iter()
            .map(|&s| NegativeQueue::new(contrast.queue_capacity, encoder.feature_dim, s))
            .collect();
        Ok(Learner {
            method,
            pair: MomentumPair::new(online, contrast.momentum),
            contrast,
            network,
            queues,
            optimizer: Optimizer::new(optimizer),
            step: 0,
        })
    }

    /// Forward, backward, optimizer step, momentum update and enqueue.
    pub fn train_step(&mut self, batch: &Batch, epoch: u64, lr: f64) -> Result<LossReport, ContrastError> {
        if batch.is_empty() {
            return Err(ContrastError::Shape("empty batch".into()));
        }
        match (batch, self.method.is_temporal()) {
            (Batch::Moco(pairs), false) => self.moco_step(pairs, epoch, lr),
            (Batch::Temco(triplets), true) => self.temco_step(triplets, epoch, lr),
            _ => Err(ContrastError::Config(format!("batch kind does not match method {}", self.method))),
        }
    }

    fn online_pass(&self, x: &Var, bound: &agri_autograd::Bound) -> (NetOutput, Option<Var>, Vec<(String, agri_autograd::Array)>) {
        let mut ctx = Ctx::new(&self.pair.online, bound, true);
        let out = self.network.forward(&mut ctx, x);
        let smooth = out
            .pixel_map
            .as_ref()
            .map(|m| self.network.smooth(&mut ctx, m, self.contrast.gamma));
        let updates = ctx.take_buffer_updates();
        (out, smooth, updates)
    }

    fn offline_pass(&self, x: &Var) -> NetOutput {
        let bound = self.pair.offline.bind_frozen();
        let mut ctx = Ctx::new(&self.pair.offline, &bound, true);
        // running statistics of the momentum copy come from the momentum update only
        self.network.forward(&mut ctx, x)
    }

    fn pixel_term(
        &self,
        smooth: &Var,
        target: &Var,
        a: (usize, &[&AugmentedView]),
        b: (usize, &[&AugmentedView]),
    ) -> Result<(Var, usize), ContrastError> {
        let n = a.1.len();
        let shape = smooth.shape();
        let map_shape = (shape[2], shape[3]);
        let sets: Vec<PixelPairSet> = a
            .1
            .iter()
            .zip(b.1)
            .map(|(va, vb)| match_pixel_pairs(&va.geometry, &vb.geometry, map_shape, self.contrast.tau_dist))
            .collect();
        pixpro_loss(
            &rows(smooth, a.0, n),
            &rows(target, b.0, n),
            &rows(smooth, b.0, n),
            &rows(target, a.0, n),
            &sets,
        )
    }

    fn moco_step(&mut self, pairs: &[(AugmentedView, AugmentedView)], epoch: u64, lr: f64) -> Result<LossReport, ContrastError> {
        let n = pairs.len();
        let v1: Vec<&AugmentedView> = pairs.iter().map(|p| &p.0).collect();
        let v2: Vec<&AugmentedView> = pairs.iter().map(|p| &p.1).collect();
        let pixel = self.method.uses_pixels();
        // with a pixel term both views go through both networks
        let (xq, xk, k_off) = if pixel {
            let both: Vec<&AugmentedView> = v1.iter().chain(&v2).copied().collect();
            let x = views_to_batch(&both);
            (x.clone(), x, n)
        } else {
            (views_to_batch(&v1), views_to_batch(&v2), 0)
        };
        self.network.check_input(&xq)?;
        let bound = self.pair.online.bind_all();
        let (out, smooth, updates) = self.online_pass(&xq, &bound);
        let off = self.offline_pass(&xk);

        let q = rows(&out.embeddings[0], 0, n);
        let k = rows(&off.embeddings[0], k_off, n);
        let l_inst = info_nce(&q, &k, &self.queues[0].matrix(), self.contrast.temperature)?;
        let mut per_subspace = BTreeMap::new();
        per_subspace.insert(Subspace::Default.name().to_string(), l_inst.item());

        let (total, l_pix, count) = if let Some(smooth) = smooth {
            let target = off.pixel_map.as_ref().expect("pixel network");
            let (lp, count) = self.pixel_term(&smooth, target, (0, &v1), (n, &v2))?;
            (l_inst.scale(self.contrast.alpha).add(&lp), Some(lp.item()), count)
        } else {
            (l_inst.clone(), None, 0)
        };
        let keys = vec![to_matrix(&k)];
        self.finish(total, l_inst.item(), l_pix, count, per_subspace, keys, &bound, updates, epoch, lr)
    }

    fn temco_step(&mut self, triplets: &[TemporalTriplet], epoch: u64, lr: f64) -> Result<LossReport, ContrastError> {
        let n = triplets.len();
        let q: Vec<&AugmentedView> = triplets.iter().map(|t| &t.q).collect();
        let k0: Vec<&AugmentedView> = triplets.iter().map(|t| &t.k0).collect();
        let k1: Vec<&AugmentedView> = triplets.iter().map(|t| &t.k1).collect();
        let k2: Vec<&AugmentedView> = triplets.iter().map(|t| &t.k2).collect();
        let pixel = self.method.uses_pixels();

        let online_views: Vec<&AugmentedView> = if pixel { q.iter().chain(&k2).copied().collect() } else { q.clone() };
        let mut offline_views: Vec<&AugmentedView> = k0.iter().chain(&k1).chain(&k2).copied().collect();
        if pixel {
            offline_views.extend(&q);
        }
        let xq = views_to_batch(&online_views);
        self.network.check_input(&xq)?;
        let bound = self.pair.online.bind_all();
        let (out, smooth, updates) = self.online_pass(&xq, &bound);
        let off = self.offline_pass(&views_to_batch(&offline_views));

        let mut per_subspace = BTreeMap::new();
        let mut terms = Vec::new();
        let mut keys = Vec::new();
        for (h, queue) in self.queues.iter().enumerate() {
            let qh = rows(&out.embeddings[h], 0, n);
            let kh = rows(&off.embeddings[h], h * n, n);
            let l = info_nce(&qh, &kh, &queue.matrix(), self.contrast.temperature)?;
            per_subspace.insert(queue.subspace.name().to_string(), l.item());
            terms.push(l);
            keys.push(to_matrix(&kh));
        }
        let l_inst = terms[1..].iter().fold(terms[0].clone(), |acc, t| acc.add(t)).scale(1.0 / terms.len() as f64);

        let (total, l_pix, count) = if let Some(smooth) = smooth {
            // pixel contrast between the query and the artificial-only key;
            // online rows are [q; k2], offline rows are [k0; k1; k2; q]
            let target = off.pixel_map.as_ref().expect("pixel network");
            let shape = target.shape().to_vec();
            let target = Var::cat(&[rows(target, 3 * n, n), rows(target, 2 * n, n)], 0);
            debug_assert_eq!(target.shape()[0], 2 * n);
            debug_assert_eq!(shape[0], 4 * n);
            let (lp, count) = self.pixel_term(&smooth, &target, (0, &q), (n, &k2))?;
            (l_inst.scale(self.contrast.alpha).add(&lp), Some(lp.item()), count)
        } else {
            (l_inst.clone(), None, 0)
        };
        self.finish(total, l_inst.item(), l_pix, count, per_subspace, keys, &bound, updates, epoch, lr)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        total: Var,
        l_inst: f64,
        l_pix: Option<f64>,
        count: usize,
        per_subspace: BTreeMap<String, f64>,
        keys: Vec<Array2<f64>>,
        bound: &agri_autograd::Bound,
        updates: Vec<(String, agri_autograd::Array)>,
        epoch: u64,
        lr: f64,
    ) -> Result<LossReport, ContrastError> {
        let total_value = total.item();
        if !total_value.is_finite() {
            return Err(ContrastError::NonFinite(format!("loss at step {}", self.step)));
        }
        let grads = bound.grads(&total.backward());
        self.optimizer.step(&mut self.pair.online, &grads, lr);
        apply_buffer_updates(&mut self.pair.online, updates);
        self.pair.update()?;
        for (queue, k) in self.queues.iter_mut().zip(&keys) {
            let s = queue.subspace;
            queue.enqueue(k, s)?;
        }
        let report = LossReport {
            step: self.step,
            epoch,
            l_inst,
            l_pixpro: l_pix,
            per_subspace,
            total: total_value,
            num_pixel_pairs: count,
            pixel_skipped: l_pix.is_some() && count == 0,
            lr,
        };
        self.step += 1;
        Ok(report)
    }
}
