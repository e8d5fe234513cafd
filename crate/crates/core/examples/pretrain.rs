//! Short pre-training run on a synthetic corpus: loss trace, a mid-run
//! checkpoint and an exact resume.
//!
//!     cargo run --release --example pretrain -- [moco|moco_pixpro|temco|temco_pixpro]

use agri_autograd::LrSchedule;
use agri_contrast::cli::RunConfig;
use agri_contrast::contrastcore::{Method, PretrainData, Pretrainer};
use agri_contrast::encoders::Checkpoint;
use agri_contrast::evalsuite::synthetic_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let method: Method = std::env::args().nth(1).unwrap_or_else(|| "temco_pixpro".into()).parse()?;
    let mut cfg = RunConfig::desk();
    cfg.pretrain.method = method;
    cfg.pretrain.max_steps = Some(60);
    cfg.pretrain.schedule = LrSchedule::Constant;

    let s = &cfg.data.synthetic;
    let groups: Vec<_> = synthetic_corpus(s.seed, 8, &s.field)?.into_iter().map(|c| c.group).collect();
    let data = PretrainData::from_groups(&groups, cfg.data.tile_size)?;

    let mut trainer = Pretrainer::new(cfg.pretrain.clone(), &data, 0)?;
    trainer.run(Some(30), |_, r| {
        if r.step % 10 == 0 {
            println!("step {:>3}  total {:.4}  inst {:.4}  pixel {:?}", r.step, r.total, r.l_inst, r.l_pixpro);
        }
        Ok(())
    })?;
    let bytes = trainer.checkpoint(&cfg.to_toml_string()).to_bytes()?;
    println!("checkpoint at step 30: {} bytes", bytes.len());

    trainer.run(None, |_, _| Ok(()))?;
    let mut resumed = Pretrainer::resume(cfg.pretrain.clone(), &data, 0, &Checkpoint::from_bytes(&bytes)?)?;
    resumed.run(None, |_, _| Ok(()))?;
    let same = trainer.encoder_store() == resumed.encoder_store();
    println!("{method}: resumed run matches uninterrupted run: {same}");
    Ok(())
}
