//! Procedural stand-in for multi-flight field imagery.
//!
//! A field has parallel crop rows at a random orientation, weed patches
//! that widen with each flight, and an optional unmanaged strip along one
//! edge. Textures are fixed per field, so with `growth_rate = 0` every
//! flight is the same image.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BitDepth, FieldError, FieldScene, FlightTime, Result, RevisitGroup, Samples, CHANNELS};

pub const MASK_CLASSES: [&str; 4] = ["soil", "crop", "weed", "unmanaged"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub field_id: String,
    pub height: usize,
    pub width: usize,
    pub flights: usize,
    /// Distance between crop-row centre lines, in pixels.
    pub row_spacing: f64,
    /// Row width at the first flight, in pixels.
    pub row_width: f64,
    /// Fraction of the field covered by weeds at the first flight.
    pub weed_density: f64,
    /// Base weed patch radius, in pixels.
    pub weed_radius: f64,
    /// Relative growth of rows and weed patches per flight.
    pub growth_rate: f64,
    /// Probability that the field has an unmanaged strip.
    pub unmanaged_prob: f64,
    /// Strip depth as a fraction of the field side.
    pub unmanaged_extent: f64,
    /// Half-range of the per-flight illumination gain; each channel also
    /// gets its own tint of up to half this amount.
    pub illumination: f64,
    pub days_between_flights: i64,
    pub start_time: FlightTime,
    pub gsd_cm: f64,
    pub depth: BitDepth,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            field_id: "synthetic".into(),
            height: 64,
            width: 64,
            flights: 3,
            row_spacing: 8.0,
            row_width: 2.5,
            weed_density: 0.1,
            weed_radius: 5.0,
            growth_rate: 0.15,
            unmanaged_prob: 0.3,
            unmanaged_extent: 0.25,
            illumination: 0.0,
            days_between_flights: 14,
            start_time: FlightTime::parse("2019-06-01T10:00:00Z").unwrap(),
            gsd_cm: 10.0,
            depth: BitDepth::Eight,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FieldError::InvalidConfig(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("dimensions must be positive, got {}x{}", self.height, self.width));
        }
        if self.flights == 0 {
            return bad("flights must be positive".into());
        }
        if !(self.row_spacing > 0.0 && self.row_width >= 0.0 && self.weed_radius > 0.0) {
            return bad("row spacing and weed radius must be positive".into());
        }
        if !(0.0..1.0).contains(&self.weed_density) {
            return bad(format!("weed_density {} outside [0, 1)", self.weed_density));
        }
        if !(self.growth_rate >= 0.0) {
            return bad("growth_rate must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.unmanaged_prob) || !(0.0..=1.0).contains(&self.unmanaged_extent) {
            return bad("unmanaged settings must lie in [0, 1]".into());
        }
        if !(0.0..=0.5).contains(&self.illumination) {
            return bad(format!("illumination {} outside [0, 0.5]", self.illumination));
        }
        if !(self.gsd_cm > 0.0) {
            return bad("gsd_cm must be positive".into());
        }
        Ok(())
    }
}

/// Per-pixel class labels, indices into [`MASK_CLASSES`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl ClassMask {
    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn crop_square(&self, row: usize, col: usize, size: usize) -> ClassMask {
        let labels = (0..size)
            .flat_map(|r| self.labels[(row + r) * self.width + col..][..size].iter().copied())
            .collect();
        ClassMask {
            height: size,
            width: size,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub group: RevisitGroup,
    /// One mask per flight, aligned with `group.scenes`.
    pub masks: Vec<ClassMask>,
}

struct Blob {
    row: f64,
    col: f64,
    lobes: f64,
    phase: f64,
}

const SOIL: [f64; 4] = [0.46, 0.36, 0.26, 0.30];
const CROP: [f64; 4] = [0.14, 0.46, 0.12, 0.72];
const WEED: [f64; 4] = [0.32, 0.52, 0.10, 0.56];
const UNMANAGED: [f64; 4] = [0.26, 0.34, 0.16, 0.44];

pub fn synthesize_field_series(seed: u64, config: &SynthConfig) -> Result<SyntheticSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height, config.width);

    let angle = rng.random_range(0.0..PI);
    let (nx, ny) = (angle.cos(), angle.sin());
    let row_phase = rng.random_range(0.0..config.row_spacing);

    let blob_area = PI * config.weed_radius * config.weed_radius;
    let n_blobs = (config.weed_density * (h * w) as f64 / blob_area).round() as usize;
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            row: rng.random_range(0.0..h as f64),
            col: rng.random_range(0.0..w as f64),
            lobes: rng.random_range(2..6) as f64,
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();

    let strip = if rng.random::<f64>() < config.unmanaged_prob {
        Some((rng.random_range(0..4u8), config.unmanaged_extent))
    } else {
        None
    };

    let texture: Vec<f64> = (0..h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let speckle: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();

    let mut scenes = Vec::with_capacity(config.flights);
    let mut masks = Vec::with_capacity(config.flights);
    for f in 0..config.flights {
        let scale = 1.0 + config.growth_rate * f as f64;
        let half_row = (config.row_width * scale).min(0.9 * config.row_spacing) / 2.0;
        let radius = config.weed_radius * scale;
        let gain = 1.0 + config.illumination * rng.random_range(-1.0..=1.0);
        let tint: Vec<f64> = (0..CHANNELS)
            .map(|_| 0.5 * config.illumination * rng.random_range(-1.0..=1.0))
            .collect();
        let mut labels = vec![0u8; h * w];
        let mut values = vec![0.0; h * w * CHANNELS];
        for r in 0..h {
            for c in 0..w {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let i = r * w + c;
                let class = if in_strip(strip, y, x, h, w) {
                    3
                } else if blobs.iter().any(|b| in_blob(b, y, x, radius)) {
                    2
                } else {
                    let d = (x * nx + y * ny + row_phase).rem_euclid(config.row_spacing);
                    if d.min(config.row_spacing - d) < half_row {
                        1
                    } else {
                        0
                    }
                };
                labels[i] = class;
                let (base, tex) = match class {
                    0 => (SOIL, 0.06 * texture[i]),
                    1 => (CROP, 0.04 * texture[i]),
                    2 => (WEED, 0.12 * (speckle[i] - 0.5)),
                    _ => (UNMANAGED, 0.25 * (speckle[i] - 0.5) + 0.03 * texture[i]),
                };
                for ch in 0..CHANNELS {
                    values[i * CHANNELS + ch] = ((base[ch] + tex) * (gain + tint[ch])).clamp(0.0, 1.0);
                }
            }
        }
        let pixels = quantize(&values, config.depth);
        let t = FlightTime::from_days(&config.start_time, f as i64 * config.days_between_flights);
        scenes.push(FieldScene::new(config.field_id.clone(), t, config.gsd_cm, h, w, pixels)?);
        masks.push(ClassMask {
            height: h,
            width: w,
            labels,
        });
    }
    let group = RevisitGroup::new(config.field_id.clone(), scenes)?;
    Ok(SyntheticSeries { group, masks })
}

fn in_blob(b: &Blob, y: f64, x: f64, radius: f64) -> bool {
    let (dy, dx) = (y - b.row, x - b.col);
    // lobed outline; the radius scales uniformly so patches only grow
    let theta = dy.atan2(dx);
    let r = radius * (1.0 + 0.3 * (b.lobes * theta + b.phase).sin());
    dy * dy + dx * dx < r * r
}

fn in_strip(strip: Option<(u8, f64)>, y: f64, x: f64, h: usize, w: usize) -> bool {
    match strip {
        None => false,
        Some((0, e)) => y < e * h as f64,
        Some((1, e)) => y > (1.0 - e) * h as f64,
        Some((2, e)) => x < e * w as f64,
        Some((_, e)) => x > (1.0 - e) * w as f64,
    }
}

fn quantize(values: &[f64], depth: BitDepth) -> Samples {
    let max = depth.max_value();
    match depth {
        BitDepth::Eight => Samples::U8(values.iter().map(|v| (v * max).round() as u8).collect()),
        BitDepth::Sixteen => Samples::U16(values.iter().map(|v| (v * max).round() as u16).collect()),
    }
}
