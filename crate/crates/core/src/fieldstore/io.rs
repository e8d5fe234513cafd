use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{BitDepth, FieldError, FieldScene, FlightTime, Result, Samples, TileRecord, CHANNELS};

const MAGIC: &[u8; 4] = b"NRGB";
const VERSION: u8 = 1;

/// Where a scene's pixels come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SceneSource {
    /// An RGB image plus a single-channel NIR image of the same size.
    RgbNir { rgb: PathBuf, nir: PathBuf },
    /// A single four-channel raw container (see [`write_container`]).
    Container(PathBuf),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMetadata {
    pub field_id: String,
    pub flight_time: FlightTime,
    pub gsd_cm: f64,
}

enum Plane {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

fn decode(path: &Path, expected_channels: usize, what: &str) -> Result<(usize, usize, Plane)> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let found = img.color().channel_count() as usize;
    if found != expected_channels {
        return Err(FieldError::ChannelCount {
            what: format!("{what} image {}", path.display()),
            found,
            expected: expected_channels,
        });
    }
    let plane = match img {
        DynamicImage::ImageRgb8(b) => Plane::U8(b.into_raw()),
        DynamicImage::ImageLuma8(b) => Plane::U8(b.into_raw()),
        DynamicImage::ImageRgb16(b) => Plane::U16(b.into_raw()),
        DynamicImage::ImageLuma16(b) => Plane::U16(b.into_raw()),
        other => {
            return Err(FieldError::ChannelCount {
                what: format!("{what} image {} ({:?})", path.display(), other.color()),
                found,
                expected: expected_channels,
            })
        }
    };
    Ok((h, w, plane))
}

fn interleave<T: Copy + Default>(rgb: &[T], nir: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); nir.len() * CHANNELS];
    for (i, px) in out.chunks_exact_mut(CHANNELS).enumerate() {
        px[..3].copy_from_slice(&rgb[i * 3..i * 3 + 3]);
        px[3] = nir[i];
    }
    out
}

/// Load and validate one scene. Channel order is normalised to R, G, B, NIR.
pub fn ingest_scene(source: &SceneSource, meta: &SceneMetadata) -> Result<FieldScene> {
    let (height, width, pixels) = match source {
        SceneSource::RgbNir { rgb, nir } => {
            let (rh, rw, rp) = decode(rgb, 3, "RGB")?;
            let (nh, nw, np) = decode(nir, 1, "NIR")?;
            if (rh, rw) != (nh, nw) {
                return Err(FieldError::DimensionMismatch {
                    rgb_height: rh,
                    rgb_width: rw,
                    nir_height: nh,
                    nir_width: nw,
                });
            }
            let pixels = match (rp, np) {
                (Plane::U8(r), Plane::U8(n)) => Samples::U8(interleave(&r, &n)),
                (Plane::U16(r), Plane::U16(n)) => Samples::U16(interleave(&r, &n)),
                (Plane::U8(_), Plane::U16(_)) => return Err(FieldError::DepthMismatch { rgb: 8, nir: 16 }),
                (Plane::U16(_), Plane::U8(_)) => return Err(FieldError::DepthMismatch { rgb: 16, nir: 8 }),
            };
            (rh, rw, pixels)
        }
        SceneSource::Container(path) => read_container(path)?,
    };
    FieldScene::new(meta.field_id.clone(), meta.flight_time, meta.gsd_cm, height, width, pixels)
}

/// Write a raw four-channel container: `NRGB`, version, bit depth, two
/// reserved bytes, little-endian `u32` height and width, then interleaved
/// little-endian samples in R, G, B, NIR order.
pub fn write_container(path: &Path, height: usize, width: usize, pixels: &Samples) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, pixels.depth().bits(), 0, 0])?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&(width as u32).to_le_bytes())?;
    match pixels {
        Samples::U8(v) => w.write_all(v)?,
        Samples::U16(v) => {
            for chunk in v.chunks(1 << 16) {
                let bytes: Vec<u8> = chunk.iter().flat_map(|s| s.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(usize, usize, Samples)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| FieldError::BadContainer(format!("{}: truncated header", path.display())))?;
    if &header[..4] != MAGIC {
        return Err(FieldError::BadContainer(format!("{}: bad magic", path.display())));
    }
    if header[4] != VERSION {
        return Err(FieldError::BadContainer(format!("{}: version {}", path.display(), header[4])));
    }
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let n = height * width * CHANNELS;
    let pixels = match header[5] {
        8 => {
            let mut v = vec![0u8; n];
            r.read_exact(&mut v)?;
            Samples::U8(v)
        }
        16 => {
            let mut bytes = vec![0u8; n * 2];
            r.read_exact(&mut bytes)?;
            Samples::U16(bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
        }
        other => {
            return Err(FieldError::ChannelCount {
                what: format!("container {} bit depth", path.display()),
                found: other as usize,
                expected: 8,
            })
        }
    };
    Ok((height, width, pixels))
}

fn split_planes<T: Copy>(v: &[T]) -> (Vec<T>, Vec<T>) {
    let mut rgb = Vec::with_capacity(v.len() / CHANNELS * 3);
    let mut nir = Vec::with_capacity(v.len() / CHANNELS);
    for px in v.chunks_exact(CHANNELS) {
        rgb.extend_from_slice(&px[..3]);
        nir.push(px[3]);
    }
    (rgb, nir)
}

/// Persist a tile as `<dir>/rgb/<uri>.png` and `<dir>/nir/<uri>.png`.
pub fn write_tile_images(dir: &Path, uri: &str, tile: &TileRecord) -> Result<SceneSource> {
    let rgb_path = dir.join("rgb").join(format!("{uri}.png"));
    let nir_path = dir.join("nir").join(format!("{uri}.png"));
    std::fs::create_dir_all(rgb_path.parent().unwrap())?;
    std::fs::create_dir_all(nir_path.parent().unwrap())?;
    let s = tile.tile_size as u32;
    match &tile.pixels {
        Samples::U8(v) => {
            let (rgb, nir) = split_planes(v);
            ImageBuffer::<Rgb<u8>, _>::from_raw(s, s, rgb).unwrap().save(&rgb_path)?;
            ImageBuffer::<Luma<u8>, _>::from_raw(s, s, nir).unwrap().save(&nir_path)?;
        }
        Samples::U16(v) => {
            let (rgb, nir) = split_planes(v);
            ImageBuffer::<Rgb<u16>, _>::from_raw(s, s, rgb).unwrap().save(&rgb_path)?;
            ImageBuffer::<Luma<u16>, _>::from_raw(s, s, nir).unwrap().save(&nir_path)?;
        }
    }
    Ok(SceneSource::RgbNir {
        rgb: rgb_path,
        nir: nir_path,
    })
}

impl BitDepth {
    pub fn from_bits(bits: u8) -> Option<BitDepth> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}
