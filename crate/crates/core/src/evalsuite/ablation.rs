use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::weights::EncoderWeights;
use super::{probe, ClassificationTask, EvalError, MetricReport, ProbeProtocol};
use crate::contrastcore::{PretrainConfig, PretrainData, Pretrainer};
use crate::fieldstore::RevisitGroup;

pub const ABLATION_HEADER: &str = "pretrain_flights,label_fraction,metric,value,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Size of the pre-training subset, in revisit groups.
    pub pretrain_flights: usize,
    pub label_fraction: f64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv_string(&self) -> Result<String, EvalError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            return Ok(format!("{ABLATION_HEADER}\n"));
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| EvalError::Config(e.to_string()))?).expect("csv is utf-8"))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AblationTable, EvalError> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.join(",") != ABLATION_HEADER {
            return Err(EvalError::Config(format!("unexpected ablation header `{}`", header.join(","))));
        }
        let rows = r.deserialize().collect::<Result<Vec<AblationRow>, _>>()?;
        Ok(AblationTable { rows })
    }

    /// Mean value over seeds for each `(count, fraction)` cell, keyed by the
    /// fraction's bit pattern so the map stays ordered.
    pub fn cell_means(&self) -> BTreeMap<(usize, u64), f64> {
        let mut acc: BTreeMap<(usize, u64), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry((r.pretrain_flights, r.label_fraction.to_bits())).or_default();
            e.0 += r.value;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

/// Nested subsets: a seeded permutation of `0..available`, cut at each
/// count, so every smaller subset is contained in the larger ones.
pub fn nested_subsets(available: usize, counts: &[usize], seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::Config("no subset sizes given".into()));
    }
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Config(format!("subset sizes {counts:?} must be non-decreasing")));
    }
    if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > available) {
        return Err(EvalError::Config(format!("subset size {c} is outside 1..={available}")));
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(counts
        .iter()
        .map(|&c| {
            let mut s = order[..c].to_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    /// Revisit groups per pre-training run.
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub tile_size: usize,
    pub pretrain: PretrainConfig,
    pub protocol: ProbeProtocol,
}

/// Pre-train on nested group subsets and probe each encoder at every label
/// fraction. Returns the table plus the underlying reports.
pub fn ablate_flights(
    groups: &[RevisitGroup],
    plan: &AblationPlan,
    task: &ClassificationTask,
) -> Result<(AblationTable, Vec<MetricReport>), EvalError> {
    let mut table = AblationTable::default();
    let mut reports = Vec::new();
    for &seed in &plan.seeds {
        let subsets = nested_subsets(groups.len(), &plan.counts, seed)?;
        for (&count, subset) in plan.counts.iter().zip(&subsets) {
            let picked: Vec<RevisitGroup> = subset.iter().map(|&i| groups[i].clone()).collect();
            let data = PretrainData::from_groups(&picked, plan.tile_size)?;
            let mut trainer = Pretrainer::new(plan.pretrain.clone(), &data, seed)?;
            trainer.run(None, |_, _| Ok(()))?;
            let weights = EncoderWeights::from_store(
                &plan.pretrain.encoder,
                &trainer.encoder_store(),
                format!("pretrained({}, groups={count}, seed={seed})", plan.pretrain.method),
            )?;
            for &fraction in &plan.fractions {
                let protocol = ProbeProtocol {
                    label_fraction: fraction,
                    ..plan.protocol.clone()
                };
                let report = probe(&weights, task, &protocol, seed)?;
                let (metric, value) = report.headline();
                table.rows.push(AblationRow {
                    pretrain_flights: count,
                    label_fraction: fraction,
                    metric: metric.into(),
                    value,
                    seed,
                });
                reports.push(report);
            }
        }
    }
    Ok((table, reports))
}
