//! Full-field four-channel imagery: scenes, non-overlapping tiling with a
//! reversible manifest, revisit grouping, and a synthetic field generator.

mod io;
mod revisit;
mod synth;
mod tiling;

use std::fmt;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{ingest_scene, read_container, write_container, write_tile_images, SceneMetadata, SceneSource};
pub use revisit::{build_revisit_index, RejectedGroup, RevisitGroup, RevisitIndex, MIN_TEMPORAL_FLIGHTS};
pub use synth::{synthesize_field_series, ClassMask, SynthConfig, SyntheticSeries, MASK_CLASSES};
pub use tiling::{reconstruct_region, tile_grid, tile_scene, ManifestEntry, SceneFragment, TileManifest, MANIFEST_HEADER};

/// Samples per pixel, always stored in this order.
pub const CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
    Nir,
}

pub const CHANNEL_ORDER: [Channel; CHANNELS] = [Channel::R, Channel::G, Channel::B, Channel::Nir];

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dimension mismatch: RGB is {rgb_height}x{rgb_width}, NIR is {nir_height}x{nir_width}")]
    DimensionMismatch {
        rgb_height: usize,
        rgb_width: usize,
        nir_height: usize,
        nir_width: usize,
    },
    #[error("unsupported channel count {found} in {what} (expected {expected})")]
    ChannelCount { what: String, found: usize, expected: usize },
    #[error("bit depth mismatch between RGB ({rgb} bit) and NIR ({nir} bit)")]
    DepthMismatch { rgb: u8, nir: u8 },
    #[error("invalid channel list {0:?}: need exactly R, G, B, NIR without duplicates")]
    InvalidChannels(Vec<Channel>),
    #[error("pixel buffer holds {found} samples, expected {expected}")]
    BufferSize { found: usize, expected: usize },
    #[error("scene {height}x{width} is smaller than tile size {tile_size}; no tiles produced")]
    EmptyTiling { height: usize, width: usize, tile_size: usize },
    #[error("tile size must be at least 1")]
    ZeroTileSize,
    #[error("missing tiles at grid cells (row, col): {0:?}")]
    MissingTiles(Vec<(usize, usize)>),
    #[error("manifest entries overlap: {0} and {1}")]
    Overlap(String, String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest mixes scenes or tile sizes: {0}")]
    InconsistentManifest(String),
    #[error("no tile record for manifest entry {0}")]
    MissingTileRecord(String),
    #[error("field `{field_id}` has inconsistent scenes: {detail}")]
    InconsistentGroup { field_id: String, detail: String },
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid timestamp `{0}`: expected ISO-8601 UTC")]
    Timestamp(String),
    #[error("not a four-channel container: {0}")]
    BadContainer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// UTC flight timestamp. Serialises as `YYYY-MM-DDTHH:MM:SSZ`, so the
/// lexicographic order of the text equals chronological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlightTime(pub DateTime<Utc>);

impl FlightTime {
    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(FlightTime(dt.with_timezone(&Utc)));
        }
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
            .map(|n| FlightTime(n.and_utc()))
            .map_err(|_| FieldError::Timestamp(s.to_string()))
    }

    pub fn normalized(&self) -> String {
        self.0.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Compact form usable in file names.
    pub fn compact(&self) -> String {
        self.0.format("%Y%m%dT%H%M%SZ").to_string()
    }

    pub fn from_days(base: &FlightTime, days: i64) -> FlightTime {
        FlightTime(base.0 + chrono::Duration::days(days))
    }
}

impl fmt::Display for FlightTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.normalized())
    }
}

impl Serialize for FlightTime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.normalized())
    }
}

impl<'de> Deserialize<'de> for FlightTime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FlightTime::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Interleaved samples (`H x W x 4`, row-major).
#[derive(Clone, PartialEq, Eq)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl fmt::Debug for Samples {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Samples::U8(v) => write!(f, "U8[{}]", v.len()),
            Samples::U16(v) => write!(f, "U16[{}]", v.len()),
        }
    }
}

impl Samples {
    pub fn zeros(depth: BitDepth, len: usize) -> Samples {
        match depth {
            BitDepth::Eight => Samples::U8(vec![0; len]),
            BitDepth::Sixteen => Samples::U16(vec![0; len]),
        }
    }

    pub fn depth(&self) -> BitDepth {
        match self {
            Samples::U8(_) => BitDepth::Eight,
            Samples::U16(_) => BitDepth::Sixteen,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> u16 {
        match self {
            Samples::U8(v) => v[i] as u16,
            Samples::U16(v) => v[i],
        }
    }

    /// Sample scaled to `[0, 1]`.
    pub fn unit(&self, i: usize) -> f64 {
        self.get(i) as f64 / self.depth().max_value()
    }

    /// Copy `len` samples from `src[src_off..]` into `self[dst_off..]`.
    pub(crate) fn copy_span(&mut self, dst_off: usize, src: &Samples, src_off: usize, len: usize) {
        match (self, src) {
            (Samples::U8(d), Samples::U8(s)) => d[dst_off..dst_off + len].copy_from_slice(&s[src_off..src_off + len]),
            (Samples::U16(d), Samples::U16(s)) => d[dst_off..dst_off + len].copy_from_slice(&s[src_off..src_off + len]),
            _ => panic!("bit depth mismatch in copy"),
        }
    }
}

/// One full-field capture.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldScene {
    pub field_id: String,
    pub flight_time: FlightTime,
    /// Ground sample distance in cm per pixel.
    pub gsd_cm: f64,
    pub channels: [Channel; CHANNELS],
    pub height: usize,
    pub width: usize,
    pub pixels: Samples,
}

impl FieldScene {
    pub fn new(
        field_id: impl Into<String>,
        flight_time: FlightTime,
        gsd_cm: f64,
        height: usize,
        width: usize,
        pixels: Samples,
    ) -> Result<Self> {
        let scene = FieldScene {
            field_id: field_id.into(),
            flight_time,
            gsd_cm,
            channels: CHANNEL_ORDER,
            height,
            width,
            pixels,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.channels.to_vec();
        seen.sort();
        seen.dedup();
        if seen.len() != CHANNELS {
            return Err(FieldError::InvalidChannels(self.channels.to_vec()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(FieldError::InvalidConfig("scene dimensions must be positive".into()));
        }
        if !(self.gsd_cm > 0.0) {
            return Err(FieldError::InvalidConfig(format!("gsd_cm must be positive, got {}", self.gsd_cm)));
        }
        let expected = self.height * self.width * CHANNELS;
        if self.pixels.len() != expected {
            return Err(FieldError::BufferSize {
                found: self.pixels.len(),
                expected,
            });
        }
        Ok(())
    }

    /// Whether `gsd_cm` is one of the resolutions of the source corpus.
    pub fn has_standard_gsd(&self) -> bool {
        [10.0, 15.0, 20.0].contains(&self.gsd_cm)
    }

    pub fn depth(&self) -> BitDepth {
        self.pixels.depth()
    }

    /// Sample index of `(row, col, channel)`.
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * CHANNELS + channel
    }

    /// Copy a `size x size` window with top-left at `(row, col)`.
    pub fn crop_square(&self, row: usize, col: usize, size: usize) -> Samples {
        assert!(row + size <= self.height && col + size <= self.width, "crop outside scene");
        let mut out = Samples::zeros(self.depth(), size * size * CHANNELS);
        for r in 0..size {
            out.copy_span(r * size * CHANNELS, &self.pixels, self.index(row + r, col, 0), size * CHANNELS);
        }
        out
    }
}

/// A `tile_size x tile_size` window cut from a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub field_id: String,
    pub flight_time: FlightTime,
    pub row_origin: usize,
    pub col_origin: usize,
    pub tile_size: usize,
    pub pixels: Samples,
}

impl TileRecord {
    pub fn depth(&self) -> BitDepth {
        self.pixels.depth()
    }

    /// Sample scaled to `[0, 1]`.
    pub fn unit(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels.unit((row * self.tile_size + col) * CHANNELS + channel)
    }

    /// Stable name used for the tile's image files.
    pub fn default_uri(&self) -> String {
        format!(
            "{}_{}_r{}_c{}",
            self.field_id,
            self.flight_time.compact(),
            self.row_origin,
            self.col_origin
        )
    }
}
