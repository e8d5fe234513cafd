use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CliError, DataSource, RunConfig};
use crate::contrastcore::PretrainData;
use crate::evalsuite::{
    split_segmentation, synthetic_classification, synthetic_corpus, synthetic_segmentation, ClassificationTask,
    SegmentationTask,
};
use crate::fieldstore::{ingest_scene, RevisitGroup, SceneMetadata, SceneSource, TileManifest, TileRecord};
use crate::viewfactory::SourceTile;

/// Revisit groups of the synthetic pre-training corpus.
pub fn pretrain_groups(cfg: &RunConfig) -> Result<Vec<RevisitGroup>, CliError> {
    let s = &cfg.data.synthetic;
    let corpus = synthetic_corpus(s.seed, s.fields, &s.field).map_err(CliError::usage)?;
    Ok(corpus.into_iter().map(|c| c.group).collect())
}

/// Read every tile listed in a manifest written by the `tile` command.
/// Images are expected in `rgb/` and `nir/` under `dir`.
pub fn load_tile_dir(manifest: &TileManifest, dir: &Path) -> Result<Vec<TileRecord>, CliError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let source = SceneSource::RgbNir {
                rgb: dir.join("rgb").join(format!("{}.png", e.tile_uri)),
                nir: dir.join("nir").join(format!("{}.png", e.tile_uri)),
            };
            let meta = SceneMetadata {
                field_id: e.field_id.clone(),
                flight_time: e.flight_time,
                gsd_cm: 10.0,
            };
            let scene = ingest_scene(&source, &meta).map_err(CliError::runtime)?;
            if (scene.height, scene.width) != (e.tile_size, e.tile_size) {
                return Err(CliError::Runtime(format!(
                    "tile {} is {}x{}, manifest says {}",
                    e.tile_uri, scene.height, scene.width, e.tile_size
                )));
            }
            Ok(TileRecord {
                field_id: e.field_id.clone(),
                flight_time: e.flight_time,
                row_origin: e.row_origin,
                col_origin: e.col_origin,
                tile_size: e.tile_size,
                pixels: scene.pixels,
            })
        })
        .collect()
}

fn pick(n: usize, k: Option<usize>, seed: u64, what: &str) -> Result<Vec<usize>, CliError> {
    let mut idx: Vec<usize> = (0..n).collect();
    let Some(k) = k else { return Ok(idx) };
    if k == 0 || k > n {
        return Err(CliError::Usage(format!("--flights {k}: {n} {what} available")));
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Pre-training data described by `cfg`, limited to `data.flights` revisit
/// groups (tile data: flights) chosen by `seed` when set.
pub fn pretrain_data(cfg: &RunConfig, seed: u64) -> Result<PretrainData, CliError> {
    let flights = cfg.data.flights;
    match cfg.data.source {
        DataSource::Synthetic => {
            let groups = pretrain_groups(cfg)?;
            let keep = pick(groups.len(), flights, seed, "revisit groups")?;
            let picked: Vec<RevisitGroup> = keep.into_iter().map(|i| groups[i].clone()).collect();
            PretrainData::from_groups(&picked, cfg.data.tile_size).map_err(CliError::usage)
        }
        DataSource::Tiles => {
            let path = cfg.data.manifest.as_ref().expect("validated");
            let manifest = TileManifest::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let dir = match &cfg.data.tiles_dir {
                Some(d) => d.clone(),
                None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            let tiles = load_tile_dir(&manifest, &dir)?;
            let captures: Vec<_> = tiles
                .iter()
                .map(|t| (t.field_id.clone(), t.flight_time))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let keep: BTreeSet<_> = pick(captures.len(), flights, seed, "flights")?
                .into_iter()
                .map(|i| captures[i].clone())
                .collect();
            Ok(PretrainData::Tiles(
                tiles
                    .iter()
                    .filter(|t| keep.contains(&(t.field_id.clone(), t.flight_time)))
                    .map(SourceTile::from_record)
                    .collect(),
            ))
        }
    }
}

pub fn classification_task(cfg: &RunConfig) -> Result<ClassificationTask, CliError> {
    let e = &cfg.eval_data;
    let train = synthetic_classification(e.train_seed, e.train_fields, e.crop, &e.field).map_err(CliError::usage)?;
    let val = synthetic_classification(e.val_seed, e.val_fields, e.crop, &e.field).map_err(CliError::usage)?;
    Ok(ClassificationTask { train, val })
}

/// Segmentation set split by flight; the split depends only on the data
/// seed so every encoder sees the same partition.
pub fn segmentation_task(cfg: &RunConfig) -> Result<SegmentationTask, CliError> {
    let e = &cfg.eval_data;
    let set = synthetic_segmentation(e.train_seed, e.segmentation_fields, e.crop, &e.field).map_err(CliError::usage)?;
    split_segmentation(&set, e.split, e.train_seed).map_err(CliError::usage)
}
