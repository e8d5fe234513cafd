use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ColorJitter, GeometricTransform, PhotometricRecipe, ViewError};
use crate::fieldstore::{FlightTime, TileRecord, CHANNELS};

/// Augmentation settings. Defaults follow the MoCo-v2 recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Side of the square output view.
    pub crop_size: usize,
    /// Area fraction range of the random crop.
    pub scale: (f64, f64),
    /// Aspect-ratio range (width / height) of the random crop.
    pub ratio: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub jitter_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_size: 224,
            scale: (0.2, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            hflip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Full-tile crop with every random operation switched off.
    pub fn identity(size: usize) -> Self {
        AugmentConfig {
            crop_size: size,
            scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 2.0),
            hflip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        let ok = self.crop_size > 0
            && 0.0 < self.scale.0
            && self.scale.0 <= self.scale.1
            && self.scale.1 <= 1.0
            && 0.0 < self.ratio.0
            && self.ratio.0 <= self.ratio.1
            && [self.brightness, self.contrast, self.saturation].iter().all(|v| (0.0..=1.0).contains(v))
            && (0.0..=0.5).contains(&self.hue)
            && [self.jitter_prob, self.grayscale_prob, self.blur_prob, self.hflip_prob]
                .iter()
                .all(|p| (0.0..=1.0).contains(p))
            && 0.0 < self.blur_sigma.0
            && self.blur_sigma.0 <= self.blur_sigma.1;
        if ok {
            Ok(())
        } else {
            Err(ViewError::Config(format!("{self:?}")))
        }
    }
}

/// Where a view came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSource {
    pub field_id: String,
    pub flight_time: FlightTime,
    pub row_origin: usize,
    pub col_origin: usize,
}

/// A tile converted once to `4 x H x W` floats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTile {
    pub pixels: Array3<f64>,
    pub source: ViewSource,
}

impl SourceTile {
    pub fn from_record(tile: &TileRecord) -> Self {
        let n = tile.tile_size;
        let pixels = Array3::from_shape_fn((CHANNELS, n, n), |(c, i, j)| tile.unit(i, j, c));
        SourceTile {
            pixels,
            source: ViewSource {
                field_id: tile.field_id.clone(),
                flight_time: tile.flight_time,
                row_origin: tile.row_origin,
                col_origin: tile.col_origin,
            },
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    /// `4 x out_h x out_w`, values in `[0, 1]`.
    pub pixels: Array3<f64>,
    pub geometry: GeometricTransform,
    pub photometric: PhotometricRecipe,
    pub source: ViewSource,
}

/// Random-resized-crop window with the torchvision sampling scheme.
pub fn sample_crop(height: usize, width: usize, cfg: &AugmentConfig, hflip: bool, rng: &mut impl Rng) -> GeometricTransform {
    let area = (height * width) as f64;
    let (lr0, lr1) = (cfg.ratio.0.ln(), cfg.ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.scale.0, cfg.scale.1);
        let ratio = uniform(rng, lr0, lr1).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if (1..=width).contains(&w) && (1..=height).contains(&h) {
            let row = rng.random_range(0..=height - h);
            let col = rng.random_range(0..=width - w);
            return crop(row, col, h, w, cfg.crop_size, hflip);
        }
    }
    // fall back to the largest centred window within the ratio bounds
    let in_ratio = width as f64 / height as f64;
    let (h, w) = if in_ratio < cfg.ratio.0 {
        (((width as f64 / cfg.ratio.0).round() as usize).min(height), width)
    } else if in_ratio > cfg.ratio.1 {
        (height, ((height as f64 * cfg.ratio.1).round() as usize).min(width))
    } else {
        (height, width)
    };
    crop((height - h) / 2, (width - w) / 2, h, w, cfg.crop_size, hflip)
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn crop(row: usize, col: usize, h: usize, w: usize, out: usize, hflip: bool) -> GeometricTransform {
    GeometricTransform {
        crop_row: row,
        crop_col: col,
        crop_h: h,
        crop_w: w,
        out_h: out,
        out_w: out,
        hflip,
    }
}

pub fn sample_photometric(cfg: &AugmentConfig, rng: &mut impl Rng) -> PhotometricRecipe {
    let factor = |rng: &mut dyn rand::RngCore, s: f64| if s > 0.0 { rng.random_range(1.0 - s..1.0 + s) } else { 1.0 };
    let jitter = if rng.random::<f64>() < cfg.jitter_prob {
        Some(ColorJitter {
            brightness: factor(rng, cfg.brightness),
            contrast: factor(rng, cfg.contrast),
            saturation: factor(rng, cfg.saturation),
            hue: if cfg.hue > 0.0 { rng.random_range(-cfg.hue..cfg.hue) } else { 0.0 },
        })
    } else {
        None
    };
    let grayscale = rng.random::<f64>() < cfg.grayscale_prob;
    let blur_sigma = (rng.random::<f64>() < cfg.blur_prob).then(|| uniform(rng, cfg.blur_sigma.0, cfg.blur_sigma.1));
    PhotometricRecipe {
        jitter,
        grayscale,
        blur_sigma,
    }
}

/// Resample the crop window to the output grid. Each output pixel centre
/// is mapped through the geometry and read with bilinear interpolation,
/// clamped to the crop window.
pub fn render_geometry(src: &Array3<f64>, g: &GeometricTransform) -> Array3<f64> {
    let channels = src.shape()[0];
    let mut out = Array3::zeros((channels, g.out_h, g.out_w));
    let (r_lo, r_hi) = (g.crop_row as f64, (g.crop_row + g.crop_h - 1) as f64);
    let (c_lo, c_hi) = (g.crop_col as f64, (g.crop_col + g.crop_w - 1) as f64);
    let cols: Vec<(usize, usize, f64)> = (0..g.out_w)
        .map(|j| {
            let x = (g.to_source(0.0, j as f64 + 0.5).1 - 0.5).clamp(c_lo, c_hi);
            let x0 = x.floor();
            let x1 = (x0 + 1.0).min(c_hi);
            (x0 as usize, x1 as usize, x - x0)
        })
        .collect();
    for i in 0..g.out_h {
        let y = (g.to_source(i as f64 + 0.5, 0.0).0 - 0.5).clamp(r_lo, r_hi);
        let y0 = y.floor();
        let y1 = (y0 + 1.0).min(r_hi);
        let fy = y - y0;
        let (y0, y1) = (y0 as usize, y1 as usize);
        for c in 0..channels {
            for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = src[[c, y0, x0]] * (1.0 - fx) + src[[c, y0, x1]] * fx;
                let bottom = src[[c, y1, x0]] * (1.0 - fx) + src[[c, y1, x1]] * fx;
                out[[c, i, j]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn render_view(tile: &SourceTile, geometry: GeometricTransform, photometric: PhotometricRecipe) -> AugmentedView {
    let mut pixels = render_geometry(&tile.pixels, &geometry);
    photometric.apply(&mut pixels);
    AugmentedView {
        pixels,
        geometry,
        photometric,
        source: tile.source.clone(),
    }
}

pub(crate) fn check_tile(tile: &SourceTile, cfg: &AugmentConfig) -> Result<(), ViewError> {
    if tile.height() < cfg.crop_size || tile.width() < cfg.crop_size {
        return Err(ViewError::TileTooSmall {
            height: tile.height(),
            width: tile.width(),
            min: cfg.crop_size,
        });
    }
    Ok(())
}

/// One fully augmented view (crop, flip, colour, blur).
pub fn augment(tile: &SourceTile, cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentedView {
    let hflip = rng.random::<f64>() < cfg.hflip_prob;
    let g = sample_crop(tile.height(), tile.width(), cfg, hflip, rng);
    let p = sample_photometric(cfg, rng);
    render_view(tile, g, p)
}

/// Crop only: no flip and no photometric change.
pub fn pure_crop(tile: &SourceTile, cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentedView {
    let g = sample_crop(tile.height(), tile.width(), cfg, false, rng);
    render_view(tile, g, PhotometricRecipe::none())
}

pub fn sample_moco_pair(
    tile: &SourceTile,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(AugmentedView, AugmentedView), ViewError> {
    check_tile(tile, cfg)?;
    let a = augment(tile, cfg, rng);
    let b = augment(tile, cfg, rng);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tile(n: usize) -> SourceTile {
        SourceTile {
            pixels: Array3::from_shape_fn((4, n, n), |(c, i, j)| ((c + 3 * i + 5 * j) % 17) as f64 / 16.0),
            source: ViewSource {
                field_id: "f".into(),
                flight_time: FlightTime::parse("2020-01-01T00:00:00Z").unwrap(),
                row_origin: 0,
                col_origin: 0,
            },
        }
    }

    #[test]
    fn identity_config_copies_tile() {
        let t = tile(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = sample_moco_pair(&t, &AugmentConfig::identity(16), &mut rng).unwrap();
        assert_eq!(a.pixels, t.pixels);
        assert_eq!(a, b);
    }

    #[test]
    fn default_views_have_configured_shape() {
        let t = tile(64);
        let cfg = AugmentConfig {
            crop_size: 32,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (a, _) = sample_moco_pair(&t, &cfg, &mut rng).unwrap();
            assert_eq!(a.pixels.shape(), &[4, 32, 32]);
            let g = a.geometry;
            assert!(g.crop_row + g.crop_h <= 64 && g.crop_col + g.crop_w <= 64);
            assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(matches!(
            sample_moco_pair(&tile(16), &cfg, &mut rng),
            Err(ViewError::TileTooSmall { .. })
        ));
    }

    #[test]
    fn flip_reverses_columns() {
        let t = tile(8);
        let g = GeometricTransform::identity(8, 8);
        let a = render_geometry(&t.pixels, &g);
        let b = render_geometry(&t.pixels, &g.flipped());
        for j in 0..8 {
            assert_eq!(a.slice(ndarray::s![.., .., j]), b.slice(ndarray::s![.., .., 7 - j]));
        }
    }
}
