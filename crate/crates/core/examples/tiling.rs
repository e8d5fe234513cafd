//! Synthesize a field, cut it into tiles, write the tiles as PNG pairs and
//! a manifest, then rebuild the field from disk.
//!
//!     cargo run --example tiling -- [out_dir]

use std::path::PathBuf;

use agri_contrast::fieldstore::{
    ingest_scene, reconstruct_region, synthesize_field_series, tile_scene, write_tile_images, SceneMetadata,
    SynthConfig, TileManifest, TileRecord,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("agri-tiles"));
    let cfg = SynthConfig {
        height: 200,
        width: 150,
        flights: 1,
        ..SynthConfig::default()
    };
    let scene = synthesize_field_series(7, &cfg)?.group.scenes.remove(0);
    let (tiles, manifest) = tile_scene(&scene, 64)?;
    println!("{}x{} scene -> {} tiles of 64 px", scene.height, scene.width, tiles.len());

    for (tile, entry) in tiles.iter().zip(&manifest.entries) {
        write_tile_images(&out, &entry.tile_uri, tile)?;
    }
    let path = out.join("manifest.csv");
    manifest.save(&path)?;

    // read everything back from disk
    let manifest = TileManifest::load(&path)?;
    let mut loaded = Vec::new();
    for e in &manifest.entries {
        let source = agri_contrast::fieldstore::SceneSource::RgbNir {
            rgb: out.join("rgb").join(format!("{}.png", e.tile_uri)),
            nir: out.join("nir").join(format!("{}.png", e.tile_uri)),
        };
        let meta = SceneMetadata {
            field_id: e.field_id.clone(),
            flight_time: e.flight_time,
            gsd_cm: scene.gsd_cm,
        };
        let s = ingest_scene(&source, &meta)?;
        loaded.push(TileRecord {
            field_id: e.field_id.clone(),
            flight_time: e.flight_time,
            row_origin: e.row_origin,
            col_origin: e.col_origin,
            tile_size: e.tile_size,
            pixels: s.pixels,
        });
    }
    let frag = reconstruct_region(&manifest, &loaded)?;
    println!(
        "rebuilt {}x{} region from {}; matches source: {}",
        frag.height,
        frag.width,
        path.display(),
        frag.matches_scene(&scene)
    );
    Ok(())
}
