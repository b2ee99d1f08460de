//! Sampling grids for images and sinograms.
//!
//! Images live on a regular pixel grid centred on the origin: pixel
//! `(row i, col j)` has its centre at physical coordinates
//!
//! ```text
//! x = (j - (width  - 1) / 2) * pixel_size
//! y = ((height - 1) / 2 - i) * pixel_size
//! ```
//!
//! so `x` grows to the right along columns and `y` grows upward as the row
//! index decreases. Sinograms are indexed `(bin b, view v)`; view `v` looks
//! along the angle `theta_v = 2*pi*v / n_views` and bin `b` sits at signed
//! detector offset `t_b = (b - (n_bins - 1) / 2) * bin_spacing` from the
//! rotation centre (plus any global detector offset, see the projector).

use crate::error::{invalid, Result};

/// A `height x width` pixel grid with square pixels of side `pixel_size`
/// (arbitrary physical length unit, default 1.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    pixel_size: f64,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::with_pixel_size(height, width, 1.0)
    }

    pub fn with_pixel_size(height: usize, width: usize, pixel_size: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image grid must have nonzero height and width"));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        Ok(Self { height, width, pixel_size })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical length of the image diagonal.
    pub fn diagonal(&self) -> f64 {
        (self.height as f64).hypot(self.width as f64) * self.pixel_size
    }

    /// Physical centre coordinates `(x, y)` of pixel `(i, j)`.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let x = (j as f64 - (self.width as f64 - 1.0) / 2.0) * self.pixel_size;
        let y = ((self.height as f64 - 1.0) / 2.0 - i as f64) * self.pixel_size;
        (x, y)
    }

    /// Half-extent of the grid along x: pixels span `[-x, x]`.
    pub fn half_extent_x(&self) -> f64 {
        self.width as f64 * self.pixel_size / 2.0
    }

    /// Half-extent of the grid along y: pixels span `[-y, y]`.
    pub fn half_extent_y(&self) -> f64 {
        self.height as f64 * self.pixel_size / 2.0
    }
}

/// A `n_bins x n_views` sinogram grid. Views are uniformly spaced over
/// `[0, 2*pi)`; bins are uniformly spaced with pitch `bin_spacing` and
/// centred on the rotation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinogramGrid {
    n_bins: usize,
    n_views: usize,
    bin_spacing: f64,
}

impl SinogramGrid {
    pub fn new(n_bins: usize, n_views: usize, bin_spacing: f64) -> Result<Self> {
        if n_bins == 0 || n_views == 0 {
            return Err(invalid("sinogram grid must have nonzero bins and views"));
        }
        if !(bin_spacing.is_finite() && bin_spacing > 0.0) {
            return Err(invalid(format!("bin spacing must be positive, got {bin_spacing}")));
        }
        Ok(Self { n_bins, n_views, bin_spacing })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_spacing
    }

    pub fn len(&self) -> usize {
        self.n_bins * self.n_views
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Angle of view `v` in radians: `2*pi*v / n_views`.
    pub fn view_angle(&self, v: usize) -> f64 {
        debug_assert!(v < self.n_views);
        2.0 * std::f64::consts::PI * v as f64 / self.n_views as f64
    }

    /// Signed detector offset of bin `b` relative to the rotation centre,
    /// before any global detector shift.
    pub fn bin_offset(&self, b: usize) -> f64 {
        debug_assert!(b < self.n_bins);
        (b as f64 - (self.n_bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }

    /// Physical width of the detector: `n_bins * bin_spacing`.
    pub fn detector_width(&self) -> f64 {
        self.n_bins as f64 * self.bin_spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(ImageGrid::new(0, 4).is_err());
        assert!(ImageGrid::new(4, 0).is_err());
        assert!(ImageGrid::with_pixel_size(4, 4, 0.0).is_err());
        assert!(ImageGrid::with_pixel_size(4, 4, -1.0).is_err());
        assert!(ImageGrid::with_pixel_size(4, 4, f64::NAN).is_err());
        assert!(SinogramGrid::new(0, 4, 1.0).is_err());
        assert!(SinogramGrid::new(4, 0, 1.0).is_err());
        assert!(SinogramGrid::new(4, 4, 0.0).is_err());
    }

    #[test]
    fn pixel_centers_are_symmetric() {
        // 3x3 grid, unit pixels: centre pixel at the origin, corners at +-1.
        let g = ImageGrid::new(3, 3).unwrap();
        assert_eq!(g.pixel_center(1, 1), (0.0, 0.0));
        assert_eq!(g.pixel_center(0, 0), (-1.0, 1.0));
        assert_eq!(g.pixel_center(2, 2), (1.0, -1.0));

        // Even size: centres straddle the origin.
        let g = ImageGrid::with_pixel_size(2, 2, 2.0).unwrap();
        assert_eq!(g.pixel_center(0, 0), (-1.0, 1.0));
        assert_eq!(g.pixel_center(1, 1), (1.0, -1.0));
        assert_relative_eq!(g.diagonal(), 2.0 * 8.0f64.sqrt());
    }

    #[test]
    fn view_angles_cover_the_full_circle() {
        let g = SinogramGrid::new(5, 8, 1.0).unwrap();
        assert_eq!(g.view_angle(0), 0.0);
        assert_relative_eq!(g.view_angle(4), std::f64::consts::PI);
        assert_relative_eq!(g.view_angle(6), 1.5 * std::f64::consts::PI);
        // Strictly increasing, last angle short of 2*pi.
        for v in 1..8 {
            assert!(g.view_angle(v) > g.view_angle(v - 1));
        }
        assert!(g.view_angle(7) < 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn bin_offsets_are_centred() {
        let g = SinogramGrid::new(5, 4, 0.5).unwrap();
        assert_eq!(g.bin_offset(2), 0.0);
        assert_eq!(g.bin_offset(0), -1.0);
        assert_eq!(g.bin_offset(4), 1.0);
        let g = SinogramGrid::new(4, 4, 1.0).unwrap();
        assert_eq!(g.bin_offset(1), -0.5);
        assert_eq!(g.bin_offset(2), 0.5);
    }
}
