//! Polychromatic metal-artifact simulation.
//!
//! A clean HU image gets a metal insert, is decomposed into water-like,
//! bone-like, and metal pixels, and is projected once per spectral bin
//! with material- and energy-dependent attenuation scales. The detector
//! integrates over the spectrum, so the measured line integral is
//!
//! ```text
//! y = -log( sum_e w_e * exp(-l_e) ),   l_e = P(mu_e)
//! ```
//!
//! which is strictly below the spectrum-averaged integral whenever the
//! per-energy integrals differ (beam hardening). Optional Poisson counting
//! noise is applied to `N0 * exp(-y)` with counts clamped at 1.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::consts::DEFAULT_METAL_HU;
use crate::error::{invalid, CtError, Result};
use crate::fbp::{fbp, RampFilter};
use crate::field::{hu_to_mu, mu_to_hu, Image, Sinogram, SinogramKind, Unit};
use crate::projector::{forward_project, ProjectionGeometry};

/// One spectral bin: its weight in the spectrum and the attenuation of
/// each material class at this energy relative to the reference energy
/// (the energy HU values are calibrated at, where every scale is 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBin {
    pub weight: f64,
    pub water: f64,
    pub bone: f64,
    pub metal: f64,
}

/// Spectrum plus the acquisition parameters that shape the artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumConfig {
    pub bins: Vec<EnergyBin>,
    /// Photons per detector bin entering the object; 0 disables noise.
    pub photon_count: f64,
    /// Pixels at or above this CT number (and not metal) count as bone.
    pub bone_threshold_hu: f64,
}

impl SpectrumConfig {
    /// Single reference-energy bin, no noise: projection becomes exactly
    /// the monochromatic line integral.
    pub fn monochromatic() -> Self {
        Self {
            bins: vec![EnergyBin { weight: 1.0, water: 1.0, bone: 1.0, metal: 1.0 }],
            photon_count: 0.0,
            bone_threshold_hu: 350.0,
        }
    }

    /// Five-bin spectrum with representative hardening: low-energy bins
    /// attenuate more, and the effect grows from water to bone to metal.
    pub fn polychromatic() -> Self {
        Self {
            bins: vec![
                EnergyBin { weight: 0.15, water: 1.40, bone: 2.00, metal: 3.50 },
                EnergyBin { weight: 0.25, water: 1.08, bone: 1.25, metal: 1.80 },
                EnergyBin { weight: 0.25, water: 0.95, bone: 0.95, metal: 1.10 },
                EnergyBin { weight: 0.20, water: 0.88, bone: 0.82, metal: 0.80 },
                EnergyBin { weight: 0.15, water: 0.83, bone: 0.75, metal: 0.65 },
            ],
            photon_count: 1e5,
            bone_threshold_hu: 350.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(invalid("spectrum needs at least one energy bin"));
        }
        let mut total = 0.0;
        for b in &self.bins {
            for v in [b.weight, b.water, b.bone, b.metal] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("spectrum entries must be >= 0, got {v}")));
                }
            }
            total += b.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("spectrum weights sum to {total}, expected 1")));
        }
        if !(self.photon_count.is_finite() && self.photon_count >= 0.0) {
            return Err(invalid(format!("photon count must be >= 0, got {}", self.photon_count)));
        }
        if !self.bone_threshold_hu.is_finite() {
            return Err(invalid("bone threshold must be finite"));
        }
        Ok(())
    }
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self::polychromatic()
    }
}

/// Metal insert: where it sits and how dense it is.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalSpec {
    pub mask: Image,
    pub metal_hu: f64,
}

impl MetalSpec {
    pub fn new(mask: Image) -> Result<Self> {
        Self::with_hu(mask, DEFAULT_METAL_HU)
    }

    pub fn with_hu(mask: Image, metal_hu: f64) -> Result<Self> {
        if mask.unit() != Unit::Binary {
            return Err(CtError::UnitMismatch(format!(
                "metal mask must be binary, got {:?}",
                mask.unit()
            )));
        }
        if !metal_hu.is_finite() {
            return Err(invalid("metal HU must be finite"));
        }
        Ok(Self { mask, metal_hu })
    }
}

/// Detector bins shadowed by the metal: `trace = P(mask) > threshold`.
/// The default threshold 0 marks every ray that touches any metal pixel.
pub fn compute_metal_trace(
    mask: &Image,
    geom: &ProjectionGeometry,
    threshold: f64,
) -> Result<Sinogram> {
    if mask.unit() != Unit::Binary {
        return Err(CtError::UnitMismatch(format!(
            "metal trace needs a binary mask, got {:?}",
            mask.unit()
        )));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(invalid(format!("trace threshold must be >= 0, got {threshold}")));
    }
    let proj = forward_project(mask, geom)?;
    let values = proj.values().mapv(|v| if v > threshold { 1.0 } else { 0.0 });
    Sinogram::new(geom.sinogram_grid(), values, SinogramKind::Trace)
}

/// Everything a simulated case provides.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Measured (artifact-bearing) sinogram.
    pub y: Sinogram,
    /// Clean monochromatic sinogram of the metal-free image.
    pub y_gt: Sinogram,
    /// Direct FBP of `y`: the uncorrected, artifact-bearing image.
    pub x_ma: Image,
    /// The metal-free HU image the metrics compare against.
    pub x_gt: Image,
}

/// Material class per pixel, decided on the metal-inserted HU image.
fn material_scale(hu: f64, is_metal: bool, bin: &EnergyBin, bone_threshold: f64) -> f64 {
    if is_metal {
        bin.metal
    } else if hu >= bone_threshold {
        bin.bone
    } else {
        bin.water
    }
}

/// Simulates a metal-corrupted acquisition of `clean`.
///
/// With a single-bin spectrum and no noise the result is exactly
/// `forward(hu_to_mu(clean with metal inserted))` scaled by that bin, so
/// the monochromatic path is bitwise identical to a plain projection.
pub fn simulate_artifacts(
    clean: &Image,
    metal: &MetalSpec,
    spectrum: &SpectrumConfig,
    geom: &ProjectionGeometry,
    filter: &RampFilter,
    mu_water: f64,
    seed: u64,
) -> Result<Simulation> {
    spectrum.validate()?;
    if clean.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!(
            "clean image must be in HU, got {:?}",
            clean.unit()
        )));
    }
    if clean.grid() != geom.image_grid() || metal.mask.grid() != geom.image_grid() {
        return Err(CtError::GridMismatch("image, mask, and geometry grids must agree".into()));
    }

    let grid = geom.image_grid();
    let mask = metal.mask.values();

    // Metal-inserted HU image and its reference-energy attenuation.
    let mut hu_metal = clean.values().clone();
    for (v, &m) in hu_metal.iter_mut().zip(mask.iter()) {
        if m == 1.0 {
            *v = metal.metal_hu;
        }
    }
    let hu_metal = Image::new(grid, hu_metal, Unit::Hu)?;
    let mu_ref = hu_to_mu(&hu_metal, mu_water)?;

    // Per-energy composite images, assembled in image space so the
    // single-bin case projects the identical array.
    let mut y_vals: Array2<f64> = if spectrum.bins.len() == 1 {
        let bin = &spectrum.bins[0];
        let mu_e = scale_by_material(&mu_ref, &hu_metal, mask, bin, spectrum.bone_threshold_hu);
        forward_project(&Image::new(grid, mu_e, Unit::Mu)?, geom)?.into_values()
    } else {
        let mut acc: Option<Array2<f64>> = None;
        for bin in &spectrum.bins {
            let mu_e = scale_by_material(&mu_ref, &hu_metal, mask, bin, spectrum.bone_threshold_hu);
            let l = forward_project(&Image::new(grid, mu_e, Unit::Mu)?, geom)?;
            let term = l.values().mapv(|v| (-v).exp() * bin.weight);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.expect("at least one bin").mapv(|v| -v.ln())
    };

    if spectrum.photon_count > 0.0 {
        apply_poisson_noise(&mut y_vals, spectrum.photon_count, seed);
    }

    let sg = geom.sinogram_grid();
    let y = Sinogram::new(sg, y_vals, SinogramKind::Raw)?;
    let y_gt = forward_project(&hu_to_mu(clean, mu_water)?, geom)?;
    let x_ma = mu_to_hu(&fbp(&y, geom, filter)?, mu_water)?;

    Ok(Simulation { y, y_gt, x_ma, x_gt: clean.clone() })
}

fn scale_by_material(
    mu_ref: &Image,
    hu_metal: &Image,
    mask: &Array2<f64>,
    bin: &EnergyBin,
    bone_threshold: f64,
) -> Array2<f64> {
    let mut mu_e = mu_ref.values().clone();
    for ((v, &hu), &m) in mu_e.iter_mut().zip(hu_metal.values().iter()).zip(mask.iter()) {
        *v *= material_scale(hu, m == 1.0, bin, bone_threshold);
    }
    mu_e
}

/// Poisson counting noise: each bin draws `k ~ Poisson(N0 exp(-y))`,
/// clamped at 1 count, and records `y = log(N0 / k)`. Every view gets its
/// own RNG stream, so results are independent of evaluation order.
fn apply_poisson_noise(y: &mut Array2<f64>, photon_count: f64, seed: u64) {
    let (n_bins, n_views) = y.dim();
    let columns: Vec<Vec<f64>> = (0..n_views)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64);
            (0..n_bins)
                .map(|b| {
                    let lambda = photon_count * (-y[[b, v]]).exp();
                    let k: f64 = if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive mean").sample(&mut rng)
                    } else {
                        0.0
                    };
                    (photon_count / k.max(1.0)).ln()
                })
                .collect()
        })
        .collect();
    for (v, col) in columns.iter().enumerate() {
        for (b, &val) in col.iter().enumerate() {
            y[[b, v]] = val;
        }
    }
}
