//! First-order optimizers and learning-rate schedules.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::var::Array;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    /// Heavy-ball SGD with coupled (L2) weight decay.
    Sgd { momentum: f64, weight_decay: f64 },
    /// Adam with coupled (L2) weight decay.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerSpec {
    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        OptimizerSpec::Sgd { momentum, weight_decay }
    }

    pub fn adam(weight_decay: f64) -> Self {
        OptimizerSpec::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        OptimizerSpec::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Optimizer with per-parameter state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    steps: u64,
    first: BTreeMap<String, Array>,
    second: BTreeMap<String, Array>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Self {
        Optimizer {
            spec,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update to every parameter present in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array>, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        for (name, g) in grads {
            let mut p = store.value(name).clone();
            match self.spec {
                OptimizerSpec::Sgd { momentum, weight_decay } => {
                    let d = g + &(&p * weight_decay);
                    let buf = match self.first.get(name) {
                        Some(b) if momentum != 0.0 => b * momentum + &d,
                        _ => d,
                    };
                    p.scaled_add(-lr, &buf);
                    self.first.insert(name.clone(), buf);
                }
                OptimizerSpec::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                }
                | OptimizerSpec::AdamW {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let decoupled = matches!(self.spec, OptimizerSpec::AdamW { .. });
                    let g = if decoupled || weight_decay == 0.0 {
                        g.clone()
                    } else {
                        g + &(&p * weight_decay)
                    };
                    if decoupled {
                        p *= 1.0 - lr * weight_decay;
                    }
                    let m = self.first.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                    let v = self.second.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                    Zip::from(&mut *m).and(&mut *v).and(&g).for_each(|m, v, &gi| {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    });
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    Zip::from(&mut p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                    });
                }
            }
            store.set_value(name, p);
        }
    }

    /// Flatten state for checkpointing: `(step count, [(key, array)])`.
    pub fn export_state(&self) -> (u64, Vec<(String, Array)>) {
        let mut out = Vec::new();
        for (k, v) in &self.first {
            out.push((format!("m1/{k}"), v.clone()));
        }
        for (k, v) in &self.second {
            out.push((format!("m2/{k}"), v.clone()));
        }
        (self.steps, out)
    }

    pub fn import_state(&mut self, steps: u64, entries: Vec<(String, Array)>) {
        self.steps = steps;
        self.first.clear();
        self.second.clear();
        for (k, v) in entries {
            if let Some(name) = k.strip_prefix("m1/") {
                self.first.insert(name.to_string(), v);
            } else if let Some(name) = k.strip_prefix("m2/") {
                self.second.insert(name.to_string(), v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` at each listed epoch.
    Milestones { epochs: Vec<usize>, gamma: f64 },
    /// Warm up to the base rate over `pct_start` of training, then cosine
    /// anneal; starts at `base/div_factor` and ends at
    /// `base/(div_factor*final_div_factor)`.
    OneCycle {
        pct_start: f64,
        div_factor: f64,
        final_div_factor: f64,
    },
}

impl LrSchedule {
    pub fn one_cycle() -> Self {
        LrSchedule::OneCycle {
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    /// Learning rate for optimizer step `step` (0-based) of `total_steps`,
    /// taken during `epoch` (0-based).
    pub fn lr(&self, base: f64, step: usize, total_steps: usize, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Milestones { epochs, gamma } => {
                let passed = epochs.iter().filter(|&&e| epoch >= e).count();
                base * gamma.powi(passed as i32)
            }
            LrSchedule::OneCycle {
                pct_start,
                div_factor,
                final_div_factor,
            } => {
                let initial = base / div_factor;
                let min_lr = initial / final_div_factor;
                let total = total_steps.max(2) as f64 - 1.0;
                let peak = (pct_start * total).max(1.0);
                let s = step as f64;
                let cos_anneal = |start: f64, end: f64, frac: f64| {
                    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * frac.clamp(0.0, 1.0)).cos())
                };
                if s <= peak {
                    cos_anneal(initial, base, s / peak)
                } else {
                    cos_anneal(base, min_lr, (s - peak) / (total - peak).max(1.0))
                }
            }
        }
    }
}
