//! Pre-training corpus size ablation at two label fractions, saved as a
//! CSV table and an SVG plot.
//!
//!     cargo run --release --example ablation -- [out_dir]

use std::path::PathBuf;

use agri_contrast::cli::{classification_task, plot_inputs, pretrain_groups, PlotInput, RunConfig};
use agri_contrast::evalsuite::{ablate_flights, AblationPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("agri-ablation"));
    std::fs::create_dir_all(&out)?;
    let mut cfg = RunConfig::desk();
    cfg.pretrain.max_steps = Some(100);
    let plan = AblationPlan {
        counts: vec![4, 16],
        fractions: vec![0.1, 1.0],
        seeds: vec![0],
        tile_size: cfg.data.tile_size,
        pretrain: cfg.pretrain.clone(),
        protocol: cfg.probe.clone(),
    };
    let (table, _) = ablate_flights(&pretrain_groups(&cfg)?, &plan, &classification_task(&cfg)?)?;
    for ((count, fraction), v) in table.cell_means() {
        println!("{count:>2} groups, fraction {:<4}: {:.3}", f64::from_bits(fraction), v);
    }
    let csv = out.join("ablation.csv");
    table.save(&csv)?;
    let svg = out.join("ablation.svg");
    plot_inputs(&[PlotInput::load(&csv)?], "corpus size ablation", &svg)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
