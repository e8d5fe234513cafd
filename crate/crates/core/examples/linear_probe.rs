//! Linear probe of a random-init encoder against a briefly pre-trained one
//! on the synthetic field classification task.

use agri_contrast::cli::{classification_task, pretrain_groups, RunConfig};
use agri_contrast::contrastcore::{Method, PretrainData, Pretrainer};
use agri_contrast::evalsuite::{probe, EncoderWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::desk();
    cfg.pretrain.method = Method::Moco;
    cfg.pretrain.max_steps = Some(300);
    let task = classification_task(&cfg)?;
    let spec = &cfg.pretrain.encoder;

    let random = EncoderWeights::random(spec, 0)?;
    let data = PretrainData::from_groups(&pretrain_groups(&cfg)?, cfg.data.tile_size)?;
    let mut trainer = Pretrainer::new(cfg.pretrain.clone(), &data, 0)?;
    trainer.run(None, |_, _| Ok(()))?;
    let pretrained = EncoderWeights::from_store(spec, &trainer.encoder_store(), "moco, 300 steps")?;

    for fraction in [0.1, 1.0] {
        let protocol = agri_contrast::evalsuite::ProbeProtocol {
            label_fraction: fraction,
            ..cfg.probe.clone()
        };
        for w in [&random, &pretrained] {
            let r = probe(w, &task, &protocol, 0)?;
            println!(
                "fraction {fraction:<4} {:<20} top-1 {:.3}  macro {:.3}",
                w.provenance,
                r.top1_accuracy.unwrap(),
                r.macro_accuracy.unwrap()
            );
        }
    }
    Ok(())
}
