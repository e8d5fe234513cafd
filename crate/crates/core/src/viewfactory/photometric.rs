//! Colour operations on `4 x h x w` arrays in `[0, 1]`. Channels 0..3 are
//! R, G, B and channel 3 is NIR.

use ndarray::{s, Array3, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Sampled colour-jitter factors. Multiplicative factors equal to 1 and a
/// zero hue shift leave the image unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl ColorJitter {
    pub fn neutral() -> Self {
        ColorJitter {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
        }
    }
}

/// The photometric part of an augmentation, as actually applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotometricRecipe {
    pub jitter: Option<ColorJitter>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

impl PhotometricRecipe {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.jitter.is_none() && !self.grayscale && self.blur_sigma.is_none()
    }

    pub fn apply(&self, img: &mut Array3<f64>) {
        if let Some(j) = self.jitter {
            adjust_brightness(img, j.brightness);
            adjust_contrast(img, j.contrast);
            adjust_saturation(img, j.saturation);
            adjust_hue(img, j.hue);
        }
        if self.grayscale {
            grayscale(img);
        }
        if let Some(sigma) = self.blur_sigma {
            gaussian_blur(img, sigma);
        }
    }
}

fn clamp(img: &mut Array3<f64>) {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

fn luminance(img: &Array3<f64>) -> ndarray::Array2<f64> {
    &img.index_axis(Axis(0), 0) * LUMA[0] + &img.index_axis(Axis(0), 1) * LUMA[1] + &img.index_axis(Axis(0), 2) * LUMA[2]
}

/// Scale all channels, NIR included.
pub fn adjust_brightness(img: &mut Array3<f64>, factor: f64) {
    if factor == 1.0 {
        return;
    }
    img.mapv_inplace(|v| v * factor);
    clamp(img);
}

/// Blend towards the mean: RGB towards mean luminance, NIR towards its own mean.
pub fn adjust_contrast(img: &mut Array3<f64>, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let rgb_mean = luminance(img).mean().unwrap_or(0.0);
    let nir_mean = img.index_axis(Axis(0), 3).mean().unwrap_or(0.0);
    for (c, mut plane) in img.axis_iter_mut(Axis(0)).enumerate() {
        let m = if c < 3 { rgb_mean } else { nir_mean };
        plane.mapv_inplace(|v| ((v - m) * factor + m).clamp(0.0, 1.0));
    }
}

/// RGB only.
pub fn adjust_saturation(img: &mut Array3<f64>, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let gray = luminance(img);
    for c in 0..3 {
        let mut plane = img.index_axis_mut(Axis(0), c);
        plane.zip_mut_with(&gray, |v, &g| *v = ((*v - g) * factor + g).clamp(0.0, 1.0));
    }
}

/// Rotate hue by `shift` turns (RGB only).
pub fn adjust_hue(img: &mut Array3<f64>, shift: f64) {
    if shift == 0.0 {
        return;
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    for i in 0..h {
        for j in 0..w {
            let (hh, ss, vv) = rgb_to_hsv(img[[0, i, j]], img[[1, i, j]], img[[2, i, j]]);
            let (r, g, b) = hsv_to_rgb((hh + shift).rem_euclid(1.0), ss, vv);
            img[[0, i, j]] = r;
            img[[1, i, j]] = g;
            img[[2, i, j]] = b;
        }
    }
}

/// RGB replaced by its luminance; NIR untouched.
pub fn grayscale(img: &mut Array3<f64>) {
    let gray = luminance(img);
    for c in 0..3 {
        img.index_axis_mut(Axis(0), c).assign(&gray);
    }
}

/// Separable Gaussian blur on every channel with reflected borders.
pub fn gaussian_blur(img: &mut Array3<f64>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    for mut plane in img.axis_iter_mut(Axis(0)) {
        blur_axis(&mut plane, &kernel, radius, 1);
        blur_axis(&mut plane, &kernel, radius, 0);
    }
}

fn reflect(i: isize, n: isize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

fn blur_axis(plane: &mut ArrayViewMut2<f64>, kernel: &[f64], radius: isize, axis: usize) {
    let n = plane.shape()[axis] as isize;
    let src = plane.to_owned();
    for (mut out, line) in plane.lanes_mut(Axis(axis)).into_iter().zip(src.lanes(Axis(axis))) {
        for i in 0..n {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                acc += k * line[reflect(i + t as isize - radius, n)];
            }
            out[i as usize] = acc;
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Mean of each channel, handy for checks.
pub fn channel_means(img: &Array3<f64>) -> Vec<f64> {
    (0..img.shape()[0]).map(|c| img.slice(s![c, .., ..]).mean().unwrap_or(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp() -> Array3<f64> {
        Array::from_shape_fn((4, 5, 6), |(c, i, j)| ((c * 7 + i * 3 + j) % 11) as f64 / 10.0)
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (0.9, 0.1, 0.3), (0.4, 0.4, 0.4), (0.0, 1.0, 0.5)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() + (g - g2).abs() + (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn colour_ops_spare_nir() {
        let base = ramp();
        let mut img = base.clone();
        adjust_saturation(&mut img, 0.3);
        adjust_hue(&mut img, 0.2);
        grayscale(&mut img);
        assert_eq!(img.index_axis(Axis(0), 3), base.index_axis(Axis(0), 3));
        assert_eq!(img.index_axis(Axis(0), 0), img.index_axis(Axis(0), 1));
    }

    #[test]
    fn blur_preserves_constant_and_mean() {
        let mut flat = Array3::from_elem((4, 7, 7), 0.25);
        gaussian_blur(&mut flat, 1.5);
        assert!(flat.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let mut img = ramp();
        let before = img.clone();
        gaussian_blur(&mut img, 0.8);
        assert_ne!(img, before);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn neutral_recipe_is_identity() {
        let mut img = ramp();
        PhotometricRecipe {
            jitter: Some(ColorJitter::neutral()),
            grayscale: false,
            blur_sigma: None,
        }
        .apply(&mut img);
        assert_eq!(img, ramp());
    }
}
