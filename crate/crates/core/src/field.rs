//! Tagged scalar fields: images and sinograms.
//!
//! Every array in the pipeline carries a tag saying what its values mean.
//! Images are either CT numbers (`Hu`), linear attenuation coefficients
//! (`Mu`), `{0,1}` masks (`Binary`), or nonnegative per-pixel weights
//! (`Weight`). Sinograms are line integrals (`Raw`), ratios of line
//! integrals (`Normalized`), or `{0,1}` detector masks (`Trace`).
//!
//! Pointwise operations check grids and combine tags; combinations without
//! a physical reading are rejected rather than silently mislabelled.
//! Constructors validate that values are finite and inside the range the
//! tag promises, so downstream code can rely on the tag alone.

use ndarray::{Array2, Zip};

use crate::consts::{EPS_DIV, WEIGHT_MAX};
use crate::error::{invalid, CtError, Result};
use crate::grid::{ImageGrid, SinogramGrid};

/// Meaning of image pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// CT numbers: air = -1000, water = 0.
    Hu,
    /// Linear attenuation coefficient. Physical values are nonnegative but
    /// reconstructed images may ring below zero, so only finiteness is
    /// enforced.
    Mu,
    /// Mask with values exactly 0 or 1.
    Binary,
    /// Multiplicative weight in `[0, WEIGHT_MAX]`.
    Weight,
}

/// Meaning of sinogram bin values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinogramKind {
    /// Line integrals of attenuation (or of any projected image).
    Raw,
    /// Ratio of two raw sinograms, dimensionless and close to 1 where the
    /// normalisation is faithful.
    Normalized,
    /// Detector mask with values exactly 0 or 1.
    Trace,
}

fn check_values(values: &Array2<f64>, range: Option<(f64, f64)>, what: &str) -> Result<()> {
    for &v in values.iter() {
        if !v.is_finite() {
            return Err(invalid(format!("{what} contains a non-finite value")));
        }
        if let Some((lo, hi)) = range {
            if v < lo || v > hi {
                return Err(invalid(format!("{what} value {v} outside [{lo}, {hi}]")));
            }
        }
    }
    Ok(())
}

fn check_binary(values: &Array2<f64>, what: &str) -> Result<()> {
    for &v in values.iter() {
        if v != 0.0 && v != 1.0 {
            return Err(invalid(format!("{what} value {v} is not exactly 0 or 1")));
        }
    }
    Ok(())
}

/// A scalar field on an [`ImageGrid`], tagged with its [`Unit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: ImageGrid,
    unit: Unit,
    values: Array2<f64>,
}

impl Image {
    pub fn new(grid: ImageGrid, values: Array2<f64>, unit: Unit) -> Result<Self> {
        if values.dim() != (grid.height(), grid.width()) {
            return Err(invalid(format!(
                "image values have shape {:?}, grid expects ({}, {})",
                values.dim(),
                grid.height(),
                grid.width()
            )));
        }
        match unit {
            Unit::Hu => check_values(&values, None, "HU image")?,
            Unit::Mu => check_values(&values, None, "attenuation image")?,
            Unit::Binary => check_binary(&values, "binary image")?,
            Unit::Weight => check_values(&values, Some((0.0, WEIGHT_MAX)), "weight image")?,
        }
        Ok(Self { grid, unit, values })
    }

    pub fn constant(grid: ImageGrid, value: f64, unit: Unit) -> Result<Self> {
        Self::new(grid, Array2::from_elem((grid.height(), grid.width()), value), unit)
    }

    pub fn zeros(grid: ImageGrid, unit: Unit) -> Self {
        // Zero is valid under every unit tag.
        Self { grid, unit, values: Array2::zeros((grid.height(), grid.width())) }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    fn check_same_grid(&self, rhs: &Self) -> Result<()> {
        if self.grid != rhs.grid {
            return Err(CtError::GridMismatch(format!(
                "image grids differ: {:?} vs {:?}",
                self.grid, rhs.grid
            )));
        }
        Ok(())
    }

    /// Elementwise product. One operand must be a mask or weight (or both
    /// binary); multiplying two absolute-scale images has no unit.
    pub fn mul_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        let unit = match (self.unit, rhs.unit) {
            (Unit::Binary, Unit::Binary) => Unit::Binary,
            (Unit::Binary, u) | (u, Unit::Binary) => u,
            (Unit::Weight, u) | (u, Unit::Weight) => u,
            (a, b) => {
                return Err(CtError::UnitMismatch(format!(
                    "cannot multiply {a:?} image by {b:?} image"
                )))
            }
        };
        Self::new(self.grid, &self.values * &rhs.values, unit)
    }

    /// Elementwise sum; both operands must share a unit.
    pub fn add_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        if self.unit != rhs.unit {
            return Err(CtError::UnitMismatch(format!(
                "cannot add {:?} image to {:?} image",
                rhs.unit, self.unit
            )));
        }
        Self::new(self.grid, &self.values + &rhs.values, self.unit)
    }

    /// Elementwise difference; both operands must share a unit.
    pub fn sub_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        if self.unit != rhs.unit {
            return Err(CtError::UnitMismatch(format!(
                "cannot subtract {:?} image from {:?} image",
                rhs.unit, self.unit
            )));
        }
        Self::new(self.grid, &self.values - &rhs.values, self.unit)
    }

    /// Elementwise quotient guarding small denominators: where
    /// `|rhs| <= EPS_DIV` the output is 0. The divisor must be a mask or
    /// weight so the result keeps the numerator's unit.
    pub fn safe_div(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        if !matches!(rhs.unit, Unit::Binary | Unit::Weight) {
            return Err(CtError::UnitMismatch(format!(
                "image division only supports mask or weight divisors, got {:?}",
                rhs.unit
            )));
        }
        let values = Zip::from(&self.values)
            .and(&rhs.values)
            .map_collect(|&a, &b| if b.abs() <= EPS_DIV { 0.0 } else { a / b });
        Self::new(self.grid, values, self.unit)
    }

    /// `1 - v` for a binary mask; exact because values are exactly 0 or 1.
    pub fn complement(&self) -> Result<Self> {
        if self.unit != Unit::Binary {
            return Err(CtError::UnitMismatch(format!(
                "complement needs a binary image, got {:?}",
                self.unit
            )));
        }
        let values = self.values.mapv(|v| 1.0 - v);
        Ok(Self { grid: self.grid, unit: Unit::Binary, values })
    }

    /// Sum of squared values (Frobenius norm squared).
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}

/// A scalar field on a [`SinogramGrid`], tagged with its [`SinogramKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    grid: SinogramGrid,
    kind: SinogramKind,
    values: Array2<f64>,
}

impl Sinogram {
    pub fn new(grid: SinogramGrid, values: Array2<f64>, kind: SinogramKind) -> Result<Self> {
        if values.dim() != (grid.n_bins(), grid.n_views()) {
            return Err(invalid(format!(
                "sinogram values have shape {:?}, grid expects ({}, {})",
                values.dim(),
                grid.n_bins(),
                grid.n_views()
            )));
        }
        match kind {
            SinogramKind::Raw | SinogramKind::Normalized => {
                check_values(&values, None, "sinogram")?
            }
            SinogramKind::Trace => check_binary(&values, "trace sinogram")?,
        }
        Ok(Self { grid, kind, values })
    }

    pub fn constant(grid: SinogramGrid, value: f64, kind: SinogramKind) -> Result<Self> {
        Self::new(grid, Array2::from_elem((grid.n_bins(), grid.n_views()), value), kind)
    }

    pub fn zeros(grid: SinogramGrid, kind: SinogramKind) -> Self {
        Self { grid, kind, values: Array2::zeros((grid.n_bins(), grid.n_views())) }
    }

    pub fn grid(&self) -> SinogramGrid {
        self.grid
    }

    pub fn kind(&self) -> SinogramKind {
        self.kind
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    fn check_same_grid(&self, rhs: &Self) -> Result<()> {
        if self.grid != rhs.grid {
            return Err(CtError::GridMismatch(format!(
                "sinogram grids differ: {:?} vs {:?}",
                self.grid, rhs.grid
            )));
        }
        Ok(())
    }

    /// Elementwise product. A trace masks anything; a normalized sinogram
    /// rescales a raw one (and ratios of ratios stay ratios).
    pub fn mul_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        use SinogramKind::*;
        let kind = match (self.kind, rhs.kind) {
            (Trace, Trace) => Trace,
            (Trace, k) | (k, Trace) => k,
            (Normalized, Raw) | (Raw, Normalized) => Raw,
            (Normalized, Normalized) => Normalized,
            (a, b) => {
                return Err(CtError::UnitMismatch(format!(
                    "cannot multiply {a:?} sinogram by {b:?} sinogram"
                )))
            }
        };
        Self::new(self.grid, &self.values * &rhs.values, kind)
    }

    /// Elementwise sum; both operands must share a kind.
    pub fn add_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        if self.kind != rhs.kind {
            return Err(CtError::UnitMismatch(format!(
                "cannot add {:?} sinogram to {:?} sinogram",
                rhs.kind, self.kind
            )));
        }
        Self::new(self.grid, &self.values + &rhs.values, self.kind)
    }

    /// Elementwise difference; both operands must share a kind.
    pub fn sub_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        if self.kind != rhs.kind {
            return Err(CtError::UnitMismatch(format!(
                "cannot subtract {:?} sinogram from {:?} sinogram",
                rhs.kind, self.kind
            )));
        }
        Self::new(self.grid, &self.values - &rhs.values, self.kind)
    }

    /// Elementwise quotient guarding small denominators: where
    /// `|rhs| <= EPS_DIV` the output is 0. Dividing raw by raw produces a
    /// normalized sinogram; dividing by a trace masks.
    pub fn safe_div(&self, rhs: &Self) -> Result<Self> {
        self.check_same_grid(rhs)?;
        use SinogramKind::*;
        let kind = match (self.kind, rhs.kind) {
            (Raw, Raw) => Normalized,
            (Normalized, Normalized) => Normalized,
            (k, Trace) => k,
            (a, b) => {
                return Err(CtError::UnitMismatch(format!(
                    "cannot divide {a:?} sinogram by {b:?} sinogram"
                )))
            }
        };
        let values = Zip::from(&self.values)
            .and(&rhs.values)
            .map_collect(|&a, &b| if b.abs() <= EPS_DIV { 0.0 } else { a / b });
        Self::new(self.grid, values, kind)
    }

    /// `1 - v` for a trace; exact because values are exactly 0 or 1.
    pub fn complement(&self) -> Result<Self> {
        if self.kind != SinogramKind::Trace {
            return Err(CtError::UnitMismatch(format!(
                "complement needs a trace sinogram, got {:?}",
                self.kind
            )));
        }
        let values = self.values.mapv(|v| 1.0 - v);
        Ok(Self { grid: self.grid, kind: SinogramKind::Trace, values })
    }

    /// Sum of squared values (Frobenius norm squared).
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}

/// `mu = mu_water * (1 + hu / 1000)`, clamped below at 0 so strongly
/// negative CT numbers cannot produce negative attenuation.
pub fn hu_to_mu_scalar(hu: f64, mu_water: f64) -> f64 {
    (mu_water * (1.0 + hu / 1000.0)).max(0.0)
}

/// Inverse of [`hu_to_mu_scalar`] on its unclamped range:
/// `hu = 1000 * (mu / mu_water - 1)`, so `mu = 0` maps to -1000.
pub fn mu_to_hu_scalar(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu / mu_water - 1.0)
}

fn check_mu_water(mu_water: f64) -> Result<()> {
    if !(mu_water.is_finite() && mu_water > 0.0) {
        return Err(invalid(format!("mu_water must be positive, got {mu_water}")));
    }
    Ok(())
}

/// Convert a CT-number image to attenuation.
pub fn hu_to_mu(img: &Image, mu_water: f64) -> Result<Image> {
    check_mu_water(mu_water)?;
    if img.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!(
            "hu_to_mu expects an HU image, got {:?}",
            img.unit()
        )));
    }
    let values = img.values().mapv(|v| hu_to_mu_scalar(v, mu_water));
    Image::new(img.grid(), values, Unit::Mu)
}

/// Convert an attenuation image to CT numbers.
pub fn mu_to_hu(img: &Image, mu_water: f64) -> Result<Image> {
    check_mu_water(mu_water)?;
    if img.unit() != Unit::Mu {
        return Err(CtError::UnitMismatch(format!(
            "mu_to_hu expects an attenuation image, got {:?}",
            img.unit()
        )));
    }
    let values = img.values().mapv(|v| mu_to_hu_scalar(v, mu_water));
    Image::new(img.grid(), values, Unit::Hu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn grid22() -> ImageGrid {
        ImageGrid::new(2, 2).unwrap()
    }

    #[test]
    fn constructors_enforce_tag_ranges() {
        let g = grid22();
        assert!(Image::new(g, array![[0.0, 1.0], [1.0, 0.0]], Unit::Binary).is_ok());
        assert!(Image::new(g, array![[0.0, 0.5], [1.0, 0.0]], Unit::Binary).is_err());
        assert!(Image::new(g, array![[0.0, 2.0], [1.0, 0.0]], Unit::Weight).is_ok());
        assert!(Image::new(g, array![[0.0, 2.1], [1.0, 0.0]], Unit::Weight).is_err());
        assert!(Image::new(g, array![[0.0, -0.1], [1.0, 0.0]], Unit::Weight).is_err());
        assert!(Image::new(g, array![[f64::NAN, 0.0], [1.0, 0.0]], Unit::Hu).is_err());
        assert!(Image::new(g, array![[0.0, 1.0, 2.0], [1.0, 0.0, 2.0]], Unit::Hu).is_err());
    }

    #[test]
    fn hu_mu_reference_points() {
        assert_relative_eq!(hu_to_mu_scalar(0.0, 0.192), 0.192);
        assert_relative_eq!(hu_to_mu_scalar(-1000.0, 0.192), 0.0);
        assert_relative_eq!(hu_to_mu_scalar(1000.0, 0.192), 0.384);
        // Below air the clamp engages.
        assert_eq!(hu_to_mu_scalar(-2000.0, 0.192), 0.0);
        assert_relative_eq!(mu_to_hu_scalar(0.0, 0.192), -1000.0);
        assert_relative_eq!(mu_to_hu_scalar(0.192, 0.192), 0.0);
    }

    #[test]
    fn unit_conversion_checks_tags() {
        let g = grid22();
        let hu = Image::constant(g, 100.0, Unit::Hu).unwrap();
        let mu = hu_to_mu(&hu, 0.192).unwrap();
        assert_eq!(mu.unit(), Unit::Mu);
        assert!(hu_to_mu(&mu, 0.192).is_err());
        assert!(mu_to_hu(&hu, 0.192).is_err());
        assert!(hu_to_mu(&hu, 0.0).is_err());
        assert!(hu_to_mu(&hu, -1.0).is_err());
    }

    #[test]
    fn image_mul_combines_tags() {
        let g = grid22();
        let hu = Image::new(g, array![[10.0, -20.0], [30.0, 40.0]], Unit::Hu).unwrap();
        let mask = Image::new(g, array![[1.0, 0.0], [0.0, 1.0]], Unit::Binary).unwrap();
        let w = Image::new(g, array![[0.5, 1.0], [1.5, 2.0]], Unit::Weight).unwrap();

        let masked = hu.mul_elem(&mask).unwrap();
        assert_eq!(masked.unit(), Unit::Hu);
        assert_eq!(masked.values()[[0, 1]], 0.0);
        assert_eq!(masked.values()[[0, 0]], 10.0);

        assert_eq!(mask.mul_elem(&mask).unwrap().unit(), Unit::Binary);
        assert_eq!(w.mul_elem(&mask).unwrap().unit(), Unit::Weight);
        assert_eq!(hu.mul_elem(&w).unwrap().unit(), Unit::Hu);
        assert!(hu.mul_elem(&hu).is_err());
    }

    #[test]
    fn add_sub_require_matching_units() {
        let g = grid22();
        let a = Image::constant(g, 1.0, Unit::Hu).unwrap();
        let b = Image::constant(g, 2.0, Unit::Hu).unwrap();
        let m = Image::constant(g, 0.1, Unit::Mu).unwrap();
        assert_eq!(a.add_elem(&b).unwrap().values()[[0, 0]], 3.0);
        assert_eq!(b.sub_elem(&a).unwrap().values()[[0, 0]], 1.0);
        assert!(a.add_elem(&m).is_err());
        let other = Image::constant(ImageGrid::new(3, 3).unwrap(), 1.0, Unit::Hu).unwrap();
        assert!(a.add_elem(&other).is_err());
    }

    #[test]
    fn safe_div_guards_small_denominators() {
        let g = SinogramGrid::new(2, 2, 1.0).unwrap();
        let y = Sinogram::new(g, array![[4.0, 5.0], [6.0, 7.0]], SinogramKind::Raw).unwrap();
        let yt =
            Sinogram::new(g, array![[2.0, 0.0], [1e-9, -2.0]], SinogramKind::Raw).unwrap();
        let s = y.safe_div(&yt).unwrap();
        assert_eq!(s.kind(), SinogramKind::Normalized);
        assert_eq!(s.values()[[0, 0]], 2.0);
        assert_eq!(s.values()[[0, 1]], 0.0); // exact zero denominator
        assert_eq!(s.values()[[1, 0]], 0.0); // below EPS_DIV
        assert_eq!(s.values()[[1, 1]], -3.5);
    }

    #[test]
    fn trace_complement_is_exact() {
        let g = SinogramGrid::new(2, 2, 1.0).unwrap();
        let tr = Sinogram::new(g, array![[1.0, 0.0], [0.0, 1.0]], SinogramKind::Trace).unwrap();
        let c = tr.complement().unwrap();
        assert_eq!(c.values()[[0, 0]], 0.0);
        assert_eq!(c.values()[[0, 1]], 1.0);
        assert_eq!(c.complement().unwrap(), tr);
        let raw = Sinogram::constant(g, 1.0, SinogramKind::Raw).unwrap();
        assert!(raw.complement().is_err());
    }

    #[test]
    fn sinogram_kind_rules() {
        let g = SinogramGrid::new(2, 2, 1.0).unwrap();
        let raw = Sinogram::constant(g, 3.0, SinogramKind::Raw).unwrap();
        let norm = Sinogram::constant(g, 0.9, SinogramKind::Normalized).unwrap();
        let tr = Sinogram::new(g, array![[1.0, 0.0], [0.0, 1.0]], SinogramKind::Trace).unwrap();

        assert_eq!(raw.mul_elem(&norm).unwrap().kind(), SinogramKind::Raw);
        assert_eq!(norm.mul_elem(&raw).unwrap().kind(), SinogramKind::Raw);
        assert_eq!(tr.mul_elem(&raw).unwrap().kind(), SinogramKind::Raw);
        assert_eq!(tr.mul_elem(&tr).unwrap().kind(), SinogramKind::Trace);
        assert!(raw.mul_elem(&raw).is_err());
        assert!(raw.add_elem(&norm).is_err());
        assert!(norm.safe_div(&raw).is_err());
    }

    proptest! {
        #[test]
        fn hu_mu_round_trip(hu in -1000.0..3000.0f64, mu_water in 0.05..0.5f64) {
            let back = mu_to_hu_scalar(hu_to_mu_scalar(hu, mu_water), mu_water);
            prop_assert!((back - hu).abs() <= 1e-9 * hu.abs().max(1.0));
        }

        #[test]
        fn hu_below_air_clamps_to_air(hu in -5000.0..-1000.0f64) {
            let back = mu_to_hu_scalar(hu_to_mu_scalar(hu, 0.192), 0.192);
            prop_assert_eq!(back, -1000.0);
        }

        #[test]
        fn safe_div_times_divisor_recovers(a in -1e6..1e6f64, b in -1e6..1e6f64) {
            let g = SinogramGrid::new(1, 1, 1.0).unwrap();
            let num = Sinogram::constant(g, a, SinogramKind::Raw).unwrap();
            let den = Sinogram::constant(g, b, SinogramKind::Raw).unwrap();
            let q = num.safe_div(&den).unwrap().values()[[0, 0]];
            if b.abs() <= crate::consts::EPS_DIV {
                prop_assert_eq!(q, 0.0);
            } else {
                prop_assert!((q * b - a).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
