use serde::{Deserialize, Serialize};

/// Crop window in the source tile, output size after resizing, and flip.
///
/// View coordinates are continuous: pixel `(i, j)` of the view covers
/// `[i, i + 1) x [j, j + 1)` and its centre is `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeometricTransform {
    pub crop_row: usize,
    pub crop_col: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub hflip: bool,
}

impl GeometricTransform {
    pub fn identity(height: usize, width: usize) -> Self {
        GeometricTransform {
            crop_row: 0,
            crop_col: 0,
            crop_h: height,
            crop_w: width,
            out_h: height,
            out_w: width,
            hflip: false,
        }
    }

    pub fn scale(&self) -> (f64, f64) {
        (self.crop_h as f64 / self.out_h as f64, self.crop_w as f64 / self.out_w as f64)
    }

    pub fn to_source(&self, row: f64, col: f64) -> (f64, f64) {
        let (sy, sx) = self.scale();
        let c = if self.hflip { self.out_w as f64 - col } else { col };
        (self.crop_row as f64 + row * sy, self.crop_col as f64 + c * sx)
    }

    pub fn to_view(&self, row: f64, col: f64) -> (f64, f64) {
        let (sy, sx) = self.scale();
        let v = (col - self.crop_col as f64) / sx;
        let c = if self.hflip { self.out_w as f64 - v } else { v };
        ((row - self.crop_row as f64) / sy, c)
    }

    pub fn flipped(&self) -> Self {
        GeometricTransform {
            hflip: !self.hflip,
            ..*self
        }
    }

    /// Source-space size of one view pixel.
    pub fn pixel_extent(&self) -> (f64, f64) {
        self.scale()
    }
}

/// Map view-space coordinates into the source tile.
pub fn warp_to_source(geometry: &GeometricTransform, coords: &[(f64, f64)]) -> Vec<(f64, f64)> {
    coords.iter().map(|&(r, c)| geometry.to_source(r, c)).collect()
}

pub fn warp_to_view(geometry: &GeometricTransform, coords: &[(f64, f64)]) -> Vec<(f64, f64)> {
    coords.iter().map(|&(r, c)| geometry.to_view(r, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_only() {
        let g = GeometricTransform {
            crop_row: 10,
            crop_col: 20,
            crop_h: 50,
            crop_w: 50,
            out_h: 50,
            out_w: 50,
            hflip: false,
        };
        assert_eq!(g.to_source(0.0, 0.0), (10.0, 20.0));
        assert_eq!(GeometricTransform::identity(8, 8).to_source(3.5, 1.25), (3.5, 1.25));
    }

    #[test]
    fn flip_mirrors_within_window() {
        let g = GeometricTransform {
            crop_row: 0,
            crop_col: 4,
            crop_h: 8,
            crop_w: 8,
            out_h: 4,
            out_w: 4,
            hflip: true,
        };
        // left edge of the view is the right edge of the window
        assert_eq!(g.to_source(0.0, 0.0), (0.0, 12.0));
        assert_eq!(g.to_source(4.0, 4.0), (8.0, 4.0));
    }
}
