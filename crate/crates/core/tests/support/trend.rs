use std::fmt::Write as _;
use std::time::Instant;

use agri_contrast::cli::{classification_task, pretrain_groups, segmentation_task, RunConfig};
use agri_contrast::contrastcore::{Method, PretrainData, Pretrainer};
use agri_contrast::evalsuite::{
    ablate_flights, probe, train_segmentation, AblationPlan, EncoderWeights, MetricReport, SegConfig,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const MIN_PROBE_GAP: f64 = 0.10;
const MIN_SEG_GAP: f64 = 0.03;
/// Segmentation is compared in the low-label regime; with every label the
/// decoder reaches the same ceiling from random features.
const SEG_FRACTION: f64 = 0.25;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn top1(r: &MetricReport) -> f64 {
    r.top1_accuracy.expect("classification report")
}

fn miou(r: &MetricReport) -> f64 {
    r.mean_iou.expect("segmentation report")
}

/// Desk preset end to end: pre-train every method, probe against a
/// random-init encoder, segment with frozen encoders, then ablate the
/// pre-training corpus size.
pub fn criterion_9() -> Result<String, String> {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let cfg = RunConfig::desk();
    let groups = pretrain_groups(&cfg).map_err(|x| e(&x))?;
    let data = PretrainData::from_groups(&groups, cfg.data.tile_size).map_err(|x| e(&x))?;
    let task = classification_task(&cfg).map_err(|x| e(&x))?;
    let seg_task = segmentation_task(&cfg).map_err(|x| e(&x))?;
    let spec = &cfg.pretrain.encoder;
    let seg_seed = |s: u64| 1000 + s;
    let seg_cfg = SegConfig {
        label_fraction: SEG_FRACTION,
        ..cfg.segmentation.clone()
    };

    let mut log = String::new();
    let mut failures = Vec::new();
    let started = Instant::now();

    let mut random_acc = Vec::new();
    let mut random_miou = Vec::new();
    for &seed in &SEEDS {
        let w = EncoderWeights::random(spec, seed).map_err(|x| e(&x))?;
        random_acc.push(top1(&probe(&w, &task, &cfg.probe, seed).map_err(|x| e(&x))?));
        random_miou.push(miou(&train_segmentation(&w, &seg_task, &seg_cfg, seg_seed(seed)).map_err(|x| e(&x))?));
    }

    for method in Method::ALL {
        let mut acc = Vec::new();
        let mut seg = Vec::new();
        for &seed in &SEEDS {
            let mut pc = cfg.pretrain.clone();
            pc.method = method;
            let mut t = Pretrainer::new(pc, &data, seed).map_err(|x| e(&x))?;
            t.run(None, |_, _| Ok(())).map_err(|x| e(&x))?;
            let w = EncoderWeights::from_store(spec, &t.encoder_store(), format!("{method}")).map_err(|x| e(&x))?;
            acc.push(top1(&probe(&w, &task, &cfg.probe, seed).map_err(|x| e(&x))?));
            seg.push(miou(&train_segmentation(&w, &seg_task, &seg_cfg, seg_seed(seed)).map_err(|x| e(&x))?));
        }
        let gap = mean(&acc) - mean(&random_acc);
        let seg_gap = mean(&seg) - mean(&random_miou);
        let _ = write!(log, "{method}: probe +{:.1} pts, seg +{:.1} pts; ", 100.0 * gap, 100.0 * seg_gap);
        if gap < MIN_PROBE_GAP {
            failures.push(format!("(a) {method} probe gap {:.1} pts < 10", 100.0 * gap));
        }
        if seg_gap < MIN_SEG_GAP {
            failures.push(format!("(b) {method} segmentation gap {:.1} pts < 3", 100.0 * seg_gap));
        }
    }

    let plan = AblationPlan {
        counts: vec![4, 16],
        fractions: vec![1.0],
        seeds: SEEDS.to_vec(),
        tile_size: cfg.data.tile_size,
        pretrain: cfg.pretrain.clone(),
        protocol: cfg.probe.clone(),
    };
    let (table, _) = ablate_flights(&groups, &plan, &task).map_err(|x| e(&x))?;
    let cells = table.cell_means();
    let small = cells[&(4, 1.0f64.to_bits())];
    let large = cells[&(16, 1.0f64.to_bits())];
    let _ = write!(log, "ablation 4 groups {:.1}% vs 16 groups {:.1}%", 100.0 * small, 100.0 * large);
    if large < small {
        failures.push(format!("(c) accuracy drops from {small:.3} to {large:.3} with more groups"));
    }

    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let _ = write!(log, "; {minutes:.1} min");
    if minutes >= 45.0 {
        failures.push(format!("runtime {minutes:.1} min exceeds 45"));
    }
    if failures.is_empty() {
        Ok(log)
    } else {
        Err(format!("{}; {log}", failures.join("; ")))
    }
}
