//! Frozen-encoder segmentation of synthetic fields with the coarse
//! (cross-entropy) and fine-grained (focal) heads.

use agri_contrast::cli::{segmentation_task, RunConfig};
use agri_contrast::evalsuite::{train_segmentation, EncoderWeights, SegConfig};
use agri_contrast::fieldstore::MASK_CLASSES;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::desk();
    let task = segmentation_task(&cfg)?;
    println!("{} train / {} val crops", task.train.len(), task.val.len());
    let weights = EncoderWeights::random(&cfg.pretrain.encoder, 0)?;
    for (name, seg) in [("coarse", SegConfig::default()), ("fine_grained", SegConfig::fine_grained())] {
        let seg = SegConfig { epochs: 5, ..seg };
        let r = train_segmentation(&weights, &task, &seg, 0)?;
        println!("{name}: mIoU {:.3}  pixel accuracy {:.3}", r.mean_iou.unwrap(), r.pixel_accuracy.unwrap());
        for (class, iou) in MASK_CLASSES.iter().zip(r.per_class_iou.unwrap()) {
            match iou {
                Some(v) => println!("  {class:<10} {v:.3}"),
                None => println!("  {class:<10} absent"),
            }
        }
    }
    Ok(())
}
