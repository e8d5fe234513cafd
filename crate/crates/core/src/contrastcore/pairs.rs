use serde::{Deserialize, Serialize};

use crate::viewfactory::GeometricTransform;

/// Default pixel-distance threshold for a positive pair.
pub const DEFAULT_TAU_DIST: f64 = 0.7;

/// Positive pixel pairs between two feature maps. `i` indexes cells of map A
/// and `j` cells of map B, both in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelPairSet {
    pub pairs: Vec<(usize, usize)>,
    /// Threshold in units of the larger source-space bin diagonal.
    pub tau_dist: f64,
}

impl PixelPairSet {
    pub fn empty(tau_dist: f64) -> Self {
        PixelPairSet {
            pairs: Vec::new(),
            tau_dist,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Source-tile coordinates of every feature-map cell centre, row-major.
pub fn cell_centers(g: &GeometricTransform, map_shape: (usize, usize)) -> Vec<(f64, f64)> {
    let (h, w) = map_shape;
    let (bh, bw) = (g.out_h as f64 / h as f64, g.out_w as f64 / w as f64);
    (0..h)
        .flat_map(|r| (0..w).map(move |c| ((r as f64 + 0.5) * bh, (c as f64 + 0.5) * bw)))
        .map(|(r, c)| g.to_source(r, c))
        .collect()
}

/// Diagonal of one feature-map cell, measured in the source tile.
pub fn bin_diagonal(g: &GeometricTransform, map_shape: (usize, usize)) -> f64 {
    let dh = g.crop_h as f64 / map_shape.0 as f64;
    let dw = g.crop_w as f64 / map_shape.1 as f64;
    dh.hypot(dw)
}

/// Cells whose source-space centres lie closer than `tau_dist` times the
/// larger of the two bin diagonals.
pub fn match_pixel_pairs_shapes(
    a: &GeometricTransform,
    shape_a: (usize, usize),
    b: &GeometricTransform,
    shape_b: (usize, usize),
    tau_dist: f64,
) -> PixelPairSet {
    let ca = cell_centers(a, shape_a);
    let cb = cell_centers(b, shape_b);
    let norm = bin_diagonal(a, shape_a).max(bin_diagonal(b, shape_b));
    let mut pairs = Vec::new();
    for (i, pa) in ca.iter().enumerate() {
        for (j, pb) in cb.iter().enumerate() {
            if (pa.0 - pb.0).hypot(pa.1 - pb.1) / norm < tau_dist {
                pairs.push((i, j));
            }
        }
    }
    PixelPairSet {
        pairs,
        tau_dist,
    }
}

pub fn match_pixel_pairs(
    a: &GeometricTransform,
    b: &GeometricTransform,
    map_shape: (usize, usize),
    tau_dist: f64,
) -> PixelPairSet {
    match_pixel_pairs_shapes(a, map_shape, b, map_shape, tau_dist)
}
