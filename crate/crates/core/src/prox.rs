//! Proximal operators plugged into the iterative solver.
//!
//! Each operator is tagged with the domain it acts on so a sinogram prox
//! cannot be applied to an image by accident. All operators preserve the
//! input's unit or kind tag, and a strength of zero is a bit-exact
//! identity.

use ndarray::Array2;

use crate::error::{invalid, CtError, Result};
use crate::field::{Image, Sinogram};

/// Which kind of field an operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxDomain {
    Image,
    Sinogram,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxKind {
    /// Returns the input unchanged.
    Identity,
    /// Soft-shrinks deviations from the field's median by `strength`.
    SoftThreshold { strength: f64 },
    /// Total-variation denoising, `argmin 1/2 ||u - v||^2 + strength * TV(u)`,
    /// approximated by `iters` dual projection sweeps.
    TvDenoise { strength: f64, iters: usize },
    /// Clamps values into `[lo, hi]`.
    BoxClamp { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOperator {
    pub kind: ProxKind,
    pub domain: ProxDomain,
}

impl ProxOperator {
    pub fn identity(domain: ProxDomain) -> Self {
        Self { kind: ProxKind::Identity, domain }
    }

    pub fn soft_threshold(domain: ProxDomain, strength: f64) -> Self {
        Self { kind: ProxKind::SoftThreshold { strength }, domain }
    }

    pub fn tv_denoise(domain: ProxDomain, strength: f64, iters: usize) -> Self {
        Self { kind: ProxKind::TvDenoise { strength, iters }, domain }
    }

    pub fn box_clamp(domain: ProxDomain, lo: f64, hi: f64) -> Self {
        Self { kind: ProxKind::BoxClamp { lo, hi }, domain }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProxKind::Identity => Ok(()),
            ProxKind::SoftThreshold { strength } => {
                if !(strength.is_finite() && strength >= 0.0) {
                    return Err(invalid(format!("soft threshold strength {strength} must be >= 0")));
                }
                Ok(())
            }
            ProxKind::TvDenoise { strength, iters } => {
                if !(strength.is_finite() && strength >= 0.0) {
                    return Err(invalid(format!("tv strength {strength} must be >= 0")));
                }
                if iters == 0 {
                    return Err(invalid("tv denoise needs at least one iteration"));
                }
                Ok(())
            }
            ProxKind::BoxClamp { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(invalid(format!("box clamp needs finite lo < hi, got [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }

    pub(crate) fn apply_array(&self, values: &Array2<f64>) -> Array2<f64> {
        match self.kind {
            ProxKind::Identity => values.clone(),
            ProxKind::SoftThreshold { strength } => {
                if strength == 0.0 {
                    return values.clone();
                }
                let med = median(values);
                values.mapv(|v| {
                    let d = v - med;
                    med + d.signum() * (d.abs() - strength).max(0.0)
                })
            }
            ProxKind::TvDenoise { strength, iters } => {
                if strength == 0.0 {
                    return values.clone();
                }
                tv_denoise(values, strength, iters)
            }
            ProxKind::BoxClamp { lo, hi } => values.mapv(|v| v.clamp(lo, hi)),
        }
    }

    pub fn apply_image(&self, img: &Image) -> Result<Image> {
        if self.domain != ProxDomain::Image {
            return Err(CtError::InvalidArgument(
                "sinogram-domain operator applied to an image".into(),
            ));
        }
        self.validate()?;
        Image::new(img.grid(), self.apply_array(img.values()), img.unit())
    }

    pub fn apply_sinogram(&self, sino: &Sinogram) -> Result<Sinogram> {
        if self.domain != ProxDomain::Sinogram {
            return Err(CtError::InvalidArgument(
                "image-domain operator applied to a sinogram".into(),
            ));
        }
        self.validate()?;
        Sinogram::new(sino.grid(), self.apply_array(sino.values()), sino.kind())
    }
}

/// Median with the usual convention: middle element for odd counts, mean
/// of the two middle elements for even counts.
fn median(values: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Anisotropic-step dual projection for isotropic TV (fixed step 0.25,
/// the classic stability bound for the 2-D discrete gradient).
fn tv_denoise(v: &Array2<f64>, lambda: f64, iters: usize) -> Array2<f64> {
    let (rows, cols) = v.dim();
    let mut px = Array2::<f64>::zeros((rows, cols));
    let mut py = Array2::<f64>::zeros((rows, cols));
    let tau = 0.25;

    let mut div = Array2::<f64>::zeros((rows, cols));
    for _ in 0..iters {
        // div p with backward differences (adjoint of forward gradient).
        for i in 0..rows {
            for j in 0..cols {
                let mut d = 0.0;
                d += px[[i, j]];
                if j > 0 {
                    d -= px[[i, j - 1]];
                }
                d += py[[i, j]];
                if i > 0 {
                    d -= py[[i - 1, j]];
                }
                div[[i, j]] = d;
            }
        }
        // u = v - lambda div p; forward gradient of u with Neumann edges,
        // then the projected dual ascent step.
        for i in 0..rows {
            for j in 0..cols {
                let u = |a: usize, b: usize| v[[a, b]] - lambda * div[[a, b]];
                let gx = if j + 1 < cols { u(i, j + 1) - u(i, j) } else { 0.0 };
                let gy = if i + 1 < rows { u(i + 1, j) - u(i, j) } else { 0.0 };
                let nx = px[[i, j]] - (tau / lambda) * gx;
                let ny = py[[i, j]] - (tau / lambda) * gy;
                let mag = 1.0 + (tau / lambda) * (gx * gx + gy * gy).sqrt();
                px[[i, j]] = nx / mag;
                py[[i, j]] = ny / mag;
            }
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            let mut d = 0.0;
            d += px[[i, j]];
            if j > 0 {
                d -= px[[i, j - 1]];
            }
            d += py[[i, j]];
            if i > 0 {
                d -= py[[i - 1, j]];
            }
            div[[i, j]] = d;
        }
    }
    v - &(lambda * &div)
}

/// Isotropic total variation with forward differences and Neumann edges.
pub fn total_variation(values: &Array2<f64>) -> f64 {
    let (rows, cols) = values.dim();
    let mut tv = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let gx = if j + 1 < cols { values[[i, j + 1]] - values[[i, j]] } else { 0.0 };
            let gy = if i + 1 < rows { values[[i + 1, j]] - values[[i, j]] } else { 0.0 };
            tv += (gx * gx + gy * gy).sqrt();
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{SinogramKind, Unit};
    use crate::grid::{ImageGrid, SinogramGrid};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_strength_is_bit_exact_identity() {
        let vals = array![[1.0, -2.5], [0.25, 1e-17]];
        for op in [
            ProxOperator::identity(ProxDomain::Image),
            ProxOperator::soft_threshold(ProxDomain::Image, 0.0),
            ProxOperator::tv_denoise(ProxDomain::Image, 0.0, 10),
        ] {
            let out = op.apply_array(&vals);
            assert_eq!(out, vals);
        }
    }

    #[test]
    fn soft_threshold_shrinks_toward_median() {
        // Median of [1,2,3,4,5] is 3; strength 1 pulls everything 1 closer.
        let vals = array![[1.0, 2.0, 3.0, 4.0, 5.0]];
        let op = ProxOperator::soft_threshold(ProxDomain::Image, 1.0);
        let out = op.apply_array(&vals);
        assert_eq!(out, array![[2.0, 3.0, 3.0, 3.0, 4.0]]);

        // Strength beyond the largest deviation flattens to the median.
        let op = ProxOperator::soft_threshold(ProxDomain::Image, 10.0);
        let out = op.apply_array(&vals);
        assert!(out.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn box_clamp_is_exact_inside_range() {
        let vals = array![[-5.0, 0.5], [2.0, 7.0]];
        let op = ProxOperator::box_clamp(ProxDomain::Image, 0.0, 2.0);
        let out = op.apply_array(&vals);
        assert_eq!(out, array![[0.0, 0.5], [2.0, 2.0]]);
    }

    #[test]
    fn tv_denoise_reduces_total_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let vals = ndarray::Array2::from_shape_simple_fn((24, 20), || rng.gen_range(-1.0..1.0));
            let tv_in = total_variation(&vals);
            let out = tv_denoise(&vals, 0.2, 30);
            let tv_out = total_variation(&out);
            assert!(
                tv_out <= tv_in * (1.0 + 1e-9),
                "tv increased: {tv_in} -> {tv_out}"
            );
            // Smoothing never drifts the mean: div p sums to zero up to
            // rounding, so the mean is preserved.
            let m_in = vals.sum() / vals.len() as f64;
            let m_out = out.sum() / out.len() as f64;
            assert!((m_in - m_out).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_denoise_flattens_a_step_less_than_noise() {
        // Piecewise-constant input: TV denoising should keep the step
        // mostly intact while removing small oscillations.
        let mut vals = Array2::zeros((16, 16));
        for i in 0..16 {
            for j in 8..16 {
                vals[[i, j]] = 1.0;
            }
        }
        let mut noisy = vals.clone();
        for i in 0..16 {
            for j in 0..16 {
                noisy[[i, j]] += if (i + j) % 2 == 0 { 0.05 } else { -0.05 };
            }
        }
        let out = tv_denoise(&noisy, 0.1, 50);
        // Checkerboard mostly gone.
        let osc: f64 = out
            .indexed_iter()
            .map(|((i, j), &v)| (v - vals[[i, j]]).abs())
            .sum::<f64>()
            / 256.0;
        assert!(osc < 0.04, "residual oscillation {osc}");
        // Step preserved.
        assert!(out[[8, 12]] - out[[8, 3]] > 0.8);
    }

    #[test]
    fn domains_are_enforced() {
        let img = Image::constant(ImageGrid::new(2, 2).unwrap(), 1.0, Unit::Hu).unwrap();
        let sino = Sinogram::constant(SinogramGrid::new(2, 2, 1.0).unwrap(), 1.0, SinogramKind::Raw)
            .unwrap();
        let img_op = ProxOperator::identity(ProxDomain::Image);
        let sino_op = ProxOperator::identity(ProxDomain::Sinogram);
        assert!(img_op.apply_image(&img).is_ok());
        assert!(img_op.apply_sinogram(&sino).is_err());
        assert!(sino_op.apply_sinogram(&sino).is_ok());
        assert!(sino_op.apply_image(&img).is_err());
        // Tags survive.
        assert_eq!(sino_op.apply_sinogram(&sino).unwrap().kind(), SinogramKind::Raw);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(ProxOperator::soft_threshold(ProxDomain::Image, -1.0).validate().is_err());
        assert!(ProxOperator::tv_denoise(ProxDomain::Image, 1.0, 0).validate().is_err());
        assert!(ProxOperator::box_clamp(ProxDomain::Image, 2.0, 1.0).validate().is_err());
        assert!(ProxOperator::box_clamp(ProxDomain::Image, 0.0, f64::INFINITY)
            .validate()
            .is_err());
    }
}
