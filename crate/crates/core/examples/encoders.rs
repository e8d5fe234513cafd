//! Build each encoder family at a small width, encode one augmented view
//! and print the feature shapes.

use agri_contrast::encoders::{encode, EncoderSpec, Family, Network};
use agri_contrast::fieldstore::{synthesize_field_series, tile_scene, SynthConfig};
use agri_contrast::viewfactory::{augment, AugmentConfig, SourceTile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let group = synthesize_field_series(1, &SynthConfig::default())?.group;
    let (tiles, _) = tile_scene(&group.scenes[0], 64)?;
    let tile = SourceTile::from_record(&tiles[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let view = augment(&tile, &AugmentConfig::identity(64), &mut rng);

    for family in Family::ALL {
        let spec = EncoderSpec {
            family,
            feature_dim: 32,
            map_stride: 8,
            base_width: 8,
            ..EncoderSpec::default()
        };
        let net = Network::new(&spec, 1, true)?;
        let store = net.init(&mut rng);
        let params: usize = store.iter().map(|(_, p)| p.value.len()).sum();
        let out = encode(&view, &net, &store)?;
        println!(
            "{:<15} {:>7} params  embedding {:?}  pixel map {:?}",
            family.name(),
            params,
            out.instance_embedding.len(),
            out.feature_map.shape()
        );
    }
    Ok(())
}
