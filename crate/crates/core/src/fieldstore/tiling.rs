use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldError, FieldScene, FlightTime, Result, Samples, TileRecord, CHANNELS};

pub const MANIFEST_HEADER: &str = "field_id,flight_time,row_origin,col_origin,tile_size,tile_uri";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub field_id: String,
    pub flight_time: FlightTime,
    pub row_origin: usize,
    pub col_origin: usize,
    pub tile_size: usize,
    pub tile_uri: String,
}

impl ManifestEntry {
    fn key(&self) -> (String, FlightTime, usize, usize) {
        (self.field_id.clone(), self.flight_time, self.row_origin, self.col_origin)
    }

    fn intersects(&self, other: &ManifestEntry) -> bool {
        self.field_id == other.field_id
            && self.flight_time == other.flight_time
            && self.row_origin < other.row_origin + other.tile_size
            && other.row_origin < self.row_origin + self.tile_size
            && self.col_origin < other.col_origin + other.tile_size
            && other.col_origin < self.col_origin + self.tile_size
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TileManifest {
    pub entries: Vec<ManifestEntry>,
}

impl TileManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: TileManifest) {
        self.entries.extend(other.entries);
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        // serialize() only emits a header for a non-empty record list
        wtr.write_record(MANIFEST_HEADER.split(','))?;
        for e in &self.entries {
            wtr.write_record([
                e.field_id.clone(),
                e.flight_time.normalized(),
                e.row_origin.to_string(),
                e.col_origin.to_string(),
                e.tile_size.to_string(),
                e.tile_uri.clone(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("manifest is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<TileManifest> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != MANIFEST_HEADER {
            return Err(FieldError::InconsistentManifest(format!("unexpected header {header:?}")));
        }
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        Ok(TileManifest { entries })
    }

    pub fn load(path: &Path) -> Result<TileManifest> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// `(row_end, col_end)` of the region covered by the entries.
    pub fn covered_extent(&self) -> Option<(usize, usize)> {
        let r = self.entries.iter().map(|e| e.row_origin + e.tile_size).max()?;
        let c = self.entries.iter().map(|e| e.col_origin + e.tile_size).max()?;
        Some((r, c))
    }
}

/// Top-left origins of the non-overlapping grid anchored at `(0, 0)`.
/// Border pixels that do not fill a whole tile are left out.
pub fn tile_grid(height: usize, width: usize, tile_size: usize) -> Result<Vec<(usize, usize)>> {
    if tile_size == 0 {
        return Err(FieldError::ZeroTileSize);
    }
    let (nr, nc) = (height / tile_size, width / tile_size);
    if nr == 0 || nc == 0 {
        return Err(FieldError::EmptyTiling {
            height,
            width,
            tile_size,
        });
    }
    Ok((0..nr)
        .flat_map(|i| (0..nc).map(move |j| (i * tile_size, j * tile_size)))
        .collect())
}

pub fn tile_scene(scene: &FieldScene, tile_size: usize) -> Result<(Vec<TileRecord>, TileManifest)> {
    let origins = tile_grid(scene.height, scene.width, tile_size)?;
    let mut tiles = Vec::with_capacity(origins.len());
    let mut manifest = TileManifest::default();
    for (row, col) in origins {
        let tile = TileRecord {
            field_id: scene.field_id.clone(),
            flight_time: scene.flight_time,
            row_origin: row,
            col_origin: col,
            tile_size,
            pixels: scene.crop_square(row, col, tile_size),
        };
        manifest.entries.push(ManifestEntry {
            field_id: tile.field_id.clone(),
            flight_time: tile.flight_time,
            row_origin: row,
            col_origin: col,
            tile_size,
            tile_uri: tile.default_uri(),
        });
        tiles.push(tile);
    }
    Ok((tiles, manifest))
}

/// A rectangular region of one scene, reassembled from tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFragment {
    pub field_id: String,
    pub flight_time: FlightTime,
    pub row_origin: usize,
    pub col_origin: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Samples,
}

impl SceneFragment {
    /// Whether the fragment equals the same window of `scene`, sample for sample.
    pub fn matches_scene(&self, scene: &FieldScene) -> bool {
        if self.row_origin + self.height > scene.height || self.col_origin + self.width > scene.width {
            return false;
        }
        let span = self.width * CHANNELS;
        (0..self.height).all(|r| {
            let src = scene.index(self.row_origin + r, self.col_origin, 0);
            let dst = r * span;
            (0..span).all(|k| self.pixels.get(dst + k) == scene.pixels.get(src + k))
        })
    }
}

pub fn reconstruct_region(manifest: &TileManifest, tiles: &[TileRecord]) -> Result<SceneFragment> {
    let first = manifest.entries.first().ok_or(FieldError::EmptyManifest)?;
    let size = first.tile_size;
    for e in &manifest.entries {
        if e.field_id != first.field_id || e.flight_time != first.flight_time || e.tile_size != size {
            return Err(FieldError::InconsistentManifest(format!(
                "{} differs from {} in scene or tile size",
                e.tile_uri, first.tile_uri
            )));
        }
    }
    // the entry list is small relative to pixel work, so the quadratic scan is fine
    for (i, a) in manifest.entries.iter().enumerate() {
        for b in &manifest.entries[i + 1..] {
            if a.intersects(b) {
                return Err(FieldError::Overlap(a.tile_uri.clone(), b.tile_uri.clone()));
            }
        }
    }

    let row0 = manifest.entries.iter().map(|e| e.row_origin).min().unwrap();
    let col0 = manifest.entries.iter().map(|e| e.col_origin).min().unwrap();
    let (row_end, col_end) = manifest.covered_extent().unwrap();
    let present: BTreeSet<(usize, usize)> = manifest
        .entries
        .iter()
        .map(|e| ((e.row_origin - row0) / size, (e.col_origin - col0) / size))
        .collect();
    for e in &manifest.entries {
        if (e.row_origin - row0) % size != 0 || (e.col_origin - col0) % size != 0 {
            return Err(FieldError::InconsistentManifest(format!("{} is off the tile grid", e.tile_uri)));
        }
    }
    let (nr, nc) = ((row_end - row0) / size, (col_end - col0) / size);
    let missing: Vec<(usize, usize)> = (0..nr)
        .flat_map(|i| (0..nc).map(move |j| (i, j)))
        .filter(|cell| !present.contains(cell))
        .map(|(i, j)| ((row0 / size) + i, (col0 / size) + j))
        .collect();
    if !missing.is_empty() {
        return Err(FieldError::MissingTiles(missing));
    }

    let by_key: BTreeMap<_, &TileRecord> = tiles
        .iter()
        .map(|t| ((t.field_id.clone(), t.flight_time, t.row_origin, t.col_origin), t))
        .collect();
    let (height, width) = (row_end - row0, col_end - col0);
    let depth = by_key
        .get(&first.key())
        .ok_or_else(|| FieldError::MissingTileRecord(first.tile_uri.clone()))?
        .depth();
    let mut pixels = Samples::zeros(depth, height * width * CHANNELS);
    for e in &manifest.entries {
        let tile = by_key
            .get(&e.key())
            .ok_or_else(|| FieldError::MissingTileRecord(e.tile_uri.clone()))?;
        if tile.tile_size != size || tile.depth() != depth || tile.pixels.len() != size * size * CHANNELS {
            return Err(FieldError::InconsistentManifest(format!(
                "tile record for {} does not match its entry",
                e.tile_uri
            )));
        }
        for r in 0..size {
            let dst = ((e.row_origin - row0 + r) * width + (e.col_origin - col0)) * CHANNELS;
            pixels.copy_span(dst, &tile.pixels, r * size * CHANNELS, size * CHANNELS);
        }
    }
    Ok(SceneFragment {
        field_id: first.field_id.clone(),
        flight_time: first.flight_time,
        row_origin: row0,
        col_origin: col0,
        height,
        width,
        pixels,
    })
}
