//! Sample augmented view pairs and temporal triplets, and match pixels
//! between two views.

use agri_contrast::contrastcore::{match_pixel_pairs, DEFAULT_TAU_DIST};
use agri_contrast::fieldstore::{synthesize_field_series, tile_scene, SynthConfig};
use agri_contrast::viewfactory::{
    channel_means, sample_moco_pair, sample_temporal_triplet, triplet_invariants_hold, AugmentConfig, SourceTile,
    TemcoAssignment,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        height: 96,
        width: 96,
        flights: 4,
        illumination: 0.15,
        ..SynthConfig::default()
    };
    let group = synthesize_field_series(3, &cfg)?.group;
    let aug = AugmentConfig {
        crop_size: 32,
        ..AugmentConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let (tiles, _) = tile_scene(&group.scenes[0], 96)?;
    let tile = SourceTile::from_record(&tiles[0]);
    let (a, b) = sample_moco_pair(&tile, &aug, &mut rng)?;
    println!("view a: {:?}", a.geometry);
    println!("view b: {:?}", b.geometry);
    for shape in [(4, 4), (7, 7)] {
        let pairs = match_pixel_pairs(&a.geometry, &b.geometry, shape, DEFAULT_TAU_DIST);
        println!("{}x{} maps: {} positive pixel pairs", shape.0, shape.1, pairs.pairs.len());
    }

    for assignment in [TemcoAssignment::Invariance, TemcoAssignment::Literal] {
        let t = sample_temporal_triplet(&group, (0, 0), 96, &aug, assignment, &mut rng)?;
        let (t1, t2, t3) = &t.times;
        println!(
            "{assignment:?}: t1={} t2={} t3={}, invariants hold: {}",
            t1.normalized(),
            t2.normalized(),
            t3.normalized(),
            triplet_invariants_hold(&t, assignment)
        );
        println!("  query channel means {:.3?}", channel_means(&t.q.pixels));
    }
    Ok(())
}
