//! Prior image construction and sinogram normalization.
//!
//! The corrected-but-blurry image a baseline produces is segmented into
//! air / soft tissue / bone by 1-D k-means on its smoothed histogram. Air
//! pixels become -1000 HU, soft tissue becomes 0 HU, and bone keeps its
//! smoothed value. Projecting the prior gives the normalization sinogram
//! `y_tilde = P(hu_to_mu(prior))`: dividing a measured sinogram by it
//! flattens the smooth anatomy-driven profile, which is what makes
//! interpolation across the metal trace safe.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consts::HU_AIR;
use crate::error::{invalid, CtError, Result};
use crate::field::{hu_to_mu, hu_to_mu_scalar, mu_to_hu_scalar, Image, Sinogram, Unit};
use crate::metrics::gaussian_blur;
use crate::projector::{forward_project, ProjectionGeometry};

/// Thresholds used when the histogram is too degenerate to cluster.
const FALLBACK_AIR_HU: f64 = -500.0;
const FALLBACK_BONE_HU: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Gaussian smoothing applied before clustering, in pixels.
    pub sigma: f64,
    /// Random restarts of the clustering; the best inertia wins.
    pub restarts: usize,
    /// Iteration cap per restart.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { sigma: 1.5, restarts: 20, max_iters: 100, seed: 0 }
    }
}

impl PriorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid(format!("prior sigma must be >= 0, got {}", self.sigma)));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(invalid("prior clustering needs restarts >= 1 and max_iters >= 1"));
        }
        Ok(())
    }
}

/// Exact 1-D Lloyd iterations on sorted data via prefix sums.
/// Returns `(centers, inertia)` with centers ascending.
fn kmeans3(sorted: &[f64], init: [f64; 3], max_iters: usize) -> ([f64; 3], f64) {
    let n = sorted.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (k, &v) in sorted.iter().enumerate() {
        s1[k + 1] = s1[k] + v;
        s2[k + 1] = s2[k] + v * v;
    }
    let seg = |a: usize, b: usize| (b - a, s1[b] - s1[a], s2[b] - s2[a]);

    let mut c = init;
    for _ in 0..max_iters {
        let b01 = 0.5 * (c[0] + c[1]);
        let b12 = 0.5 * (c[1] + c[2]);
        let i1 = sorted.partition_point(|&v| v < b01);
        let i2 = sorted.partition_point(|&v| v < b12).max(i1);
        let bounds = [(0, i1), (i1, i2), (i2, n)];
        let mut next = c;
        for (k, &(a, b)) in bounds.iter().enumerate() {
            let (cnt, sum, _) = seg(a, b);
            if cnt > 0 {
                next[k] = sum / cnt as f64;
            }
        }
        if next == c {
            break;
        }
        c = next;
    }

    let b01 = 0.5 * (c[0] + c[1]);
    let b12 = 0.5 * (c[1] + c[2]);
    let i1 = sorted.partition_point(|&v| v < b01);
    let i2 = sorted.partition_point(|&v| v < b12).max(i1);
    let mut inertia = 0.0;
    for (k, &(a, b)) in [(0, i1), (i1, i2), (i2, n)].iter().enumerate() {
        let (cnt, sum, sq) = seg(a, b);
        inertia += sq - 2.0 * c[k] * sum + cnt as f64 * c[k] * c[k];
    }
    (c, inertia)
}

/// Segments a reconstructed HU image into air / soft tissue / bone.
///
/// The image is blurred (sigma in pixels), thresholds are placed midway
/// between the three cluster centres, and the classes map to -1000 HU,
/// 0 HU, and the smoothed value respectively. Degenerate histograms (fewer
/// than three distinct values) fall back to fixed thresholds at -500 and
/// 300 HU with a warning.
pub fn coarse_prior(x: &Image, cfg: &PriorConfig) -> Result<Image> {
    cfg.validate()?;
    if x.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!(
            "coarse_prior expects an HU image, got {:?}",
            x.unit()
        )));
    }
    let radius = (4.0 * cfg.sigma).ceil() as usize;
    let smoothed = gaussian_blur(x.values(), cfg.sigma, radius);

    let mut sorted: Vec<f64> = smoothed.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            distinct += 1;
            if distinct >= 3 {
                break;
            }
        }
    }

    let (t_air, t_bone) = if distinct < 3 {
        log::warn!(
            "histogram has {distinct} distinct value(s); falling back to fixed thresholds \
             ({FALLBACK_AIR_HU}, {FALLBACK_BONE_HU})"
        );
        (FALLBACK_AIR_HU, FALLBACK_BONE_HU)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = (sorted[sorted.len() - 1] - sorted[0]).max(1.0);
        let mut best: Option<([f64; 3], f64)> = None;
        for _ in 0..cfg.restarts {
            // Three distinct starting values drawn from the data.
            let mut init = [0.0; 3];
            loop {
                for v in &mut init {
                    *v = sorted[rng.gen_range(0..sorted.len())];
                }
                init.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                if init[0] < init[1] && init[1] < init[2] {
                    break;
                }
            }
            let (c, inertia) = kmeans3(&sorted, init, cfg.max_iters);
            let better = match &best {
                None => true,
                Some((bc, bi)) => {
                    // Strictly better inertia, or a tie resolved toward
                    // the lower thresholds for determinism.
                    inertia < bi - 1e-12 * scale * scale
                        || ((inertia - bi).abs() <= 1e-12 * scale * scale && c < *bc)
                }
            };
            if better {
                best = Some((c, inertia));
            }
        }
        let (c, _) = best.expect("at least one restart");
        (0.5 * (c[0] + c[1]), 0.5 * (c[1] + c[2]))
    };

    let values = smoothed.mapv(|v| {
        if v < t_air {
            HU_AIR
        } else if v < t_bone {
            0.0
        } else {
            v
        }
    });
    Image::new(x.grid(), values, Unit::Hu)
}

/// Refines a coarse prior with a per-pixel multiplicative weight applied
/// in attenuation space. Weight 1 keeps the pixel bit-for-bit; other
/// weights scale `hu_to_mu(v)` and convert back.
pub fn refine_prior(coarse: &Image, weights: &Image, mu_water: f64) -> Result<Image> {
    if coarse.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!(
            "refine_prior expects an HU prior, got {:?}",
            coarse.unit()
        )));
    }
    if weights.unit() != Unit::Weight {
        return Err(CtError::UnitMismatch(format!(
            "refine_prior expects a weight map, got {:?}",
            weights.unit()
        )));
    }
    if coarse.grid() != weights.grid() {
        return Err(CtError::GridMismatch("prior and weight grids differ".into()));
    }
    let mut values = coarse.values().clone();
    for (v, &w) in values.iter_mut().zip(weights.values().iter()) {
        if w != 1.0 {
            *v = mu_to_hu_scalar(hu_to_mu_scalar(*v, mu_water) * w, mu_water);
        }
    }
    Image::new(coarse.grid(), values, Unit::Hu)
}

/// Projects a prior image into the sinogram domain:
/// `y_tilde = P(hu_to_mu(prior))`.
pub fn normalization_coefficient(
    prior: &Image,
    geom: &ProjectionGeometry,
    mu_water: f64,
) -> Result<Sinogram> {
    forward_project(&hu_to_mu(prior, mu_water)?, geom)
}

/// A prior image together with its projection.
#[derive(Debug, Clone)]
pub struct PriorImages {
    pub image: Image,
    pub y_tilde: Sinogram,
}

/// Full prior pipeline: segment `x_base`, optionally refine with a weight
/// map, force metal pixels to soft tissue (their true anatomy is unknown),
/// and project.
pub fn build_prior(
    x_base: &Image,
    metal_mask: Option<&Image>,
    weights: Option<&Image>,
    cfg: &PriorConfig,
    geom: &ProjectionGeometry,
    mu_water: f64,
) -> Result<PriorImages> {
    let mut prior = coarse_prior(x_base, cfg)?;
    if let Some(w) = weights {
        prior = refine_prior(&prior, w, mu_water)?;
    }
    if let Some(mask) = metal_mask {
        if mask.unit() != Unit::Binary {
            return Err(CtError::UnitMismatch(format!(
                "metal mask must be binary, got {:?}",
                mask.unit()
            )));
        }
        if mask.grid() != prior.grid() {
            return Err(CtError::GridMismatch("metal mask grid differs from prior".into()));
        }
        let mut values = prior.into_values();
        for (v, &m) in values.iter_mut().zip(mask.values().iter()) {
            if m == 1.0 {
                *v = 0.0;
            }
        }
        prior = Image::new(x_base.grid(), values, Unit::Hu)?;
    }
    let y_tilde = normalization_coefficient(&prior, geom, mu_water)?;
    Ok(PriorImages { image: prior, y_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;
    use approx::assert_relative_eq;

    #[test]
    fn kmeans_recovers_well_separated_clusters() {
        let data = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 100.0, 100.0, 100.0];
        let (c, inertia) = kmeans3(&data, [0.0, 10.0, 100.0], 50);
        assert_eq!(c, [0.0, 10.0, 100.0]);
        assert_eq!(inertia, 0.0);

        // From a bad start Lloyd still lands on the global optimum here.
        let (c, _) = kmeans3(&data, [0.0, 1.0, 2.0], 50);
        assert_eq!(c, [0.0, 10.0, 100.0]);
    }

    #[test]
    fn kmeans_inertia_of_paired_points() {
        let data = [0.0, 1.0, 10.0, 11.0, 100.0, 101.0];
        let (c, inertia) = kmeans3(&data, [0.5, 10.0, 100.0], 50);
        assert_eq!(c, [0.5, 10.5, 100.5]);
        // Three pairs, each contributing 2 * 0.5^2.
        assert_relative_eq!(inertia, 1.5, epsilon = 1e-12);
    }

    fn three_tissue_image(grid: ImageGrid) -> Image {
        // Left third air, middle soft tissue, right bone, with small
        // deterministic texture.
        let (h, w) = (grid.height(), grid.width());
        let mut vals = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let texture = ((i * 7 + j * 13) % 5) as f64 - 2.0;
                vals[[i, j]] = if j < w / 3 {
                    -990.0 + texture
                } else if j < 2 * w / 3 {
                    30.0 + texture
                } else {
                    900.0 + texture
                };
            }
        }
        Image::new(grid, vals, Unit::Hu).unwrap()
    }

    use ndarray::Array2;

    #[test]
    fn coarse_prior_maps_tissue_classes() {
        let grid = ImageGrid::new(30, 30).unwrap();
        let img = three_tissue_image(grid);
        let prior = coarse_prior(&img, &PriorConfig::default()).unwrap();
        let v = prior.values();
        // Deep inside each band (away from the smoothing transition).
        assert_eq!(v[[15, 2]], -1000.0);
        assert_eq!(v[[15, 15]], 0.0);
        let bone = v[[15, 27]];
        assert!((bone - 900.0).abs() < 20.0, "bone kept near its value, got {bone}");
    }

    #[test]
    fn coarse_prior_is_deterministic() {
        let grid = ImageGrid::new(20, 20).unwrap();
        let img = three_tissue_image(grid);
        let a = coarse_prior(&img, &PriorConfig::default()).unwrap();
        let b = coarse_prior(&img, &PriorConfig::default()).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn degenerate_histogram_uses_fallback() {
        let grid = ImageGrid::new(8, 8).unwrap();
        // Constant image: one distinct value.
        let img = Image::constant(grid, 100.0, Unit::Hu).unwrap();
        let prior = coarse_prior(&img, &PriorConfig::default()).unwrap();
        // 100 is between -500 and 300: everything is soft tissue.
        assert!(prior.values().iter().all(|&v| v == 0.0));

        let img = Image::constant(grid, -800.0, Unit::Hu).unwrap();
        let prior = coarse_prior(&img, &PriorConfig::default()).unwrap();
        assert!(prior.values().iter().all(|&v| v == -1000.0));
    }

    #[test]
    fn refine_keeps_unit_weights_bitwise() {
        let grid = ImageGrid::new(4, 4).unwrap();
        let mut vals = Array2::zeros((4, 4));
        for (k, v) in vals.iter_mut().enumerate() {
            *v = k as f64 * 13.7 - 20.0;
        }
        let prior = Image::new(grid, vals, Unit::Hu).unwrap();
        let ones = Image::constant(grid, 1.0, Unit::Weight).unwrap();
        let out = refine_prior(&prior, &ones, 0.192).unwrap();
        assert_eq!(out.values(), prior.values());
    }

    #[test]
    fn refine_scales_in_attenuation_space() {
        let grid = ImageGrid::new(1, 2).unwrap();
        let prior = Image::new(grid, Array2::from_elem((1, 2), 1000.0), Unit::Hu).unwrap();
        let mut w = Array2::from_elem((1, 2), 1.0);
        w[[0, 1]] = 0.5;
        let weights = Image::new(grid, w, Unit::Weight).unwrap();
        let out = refine_prior(&prior, &weights, 0.192).unwrap();
        assert_eq!(out.values()[[0, 0]], 1000.0);
        // mu(1000 HU) = 0.384; halved -> 0.192 -> 0 HU.
        assert_relative_eq!(out.values()[[0, 1]], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn build_prior_flattens_metal_and_projects() {
        let grid = ImageGrid::new(24, 24).unwrap();
        let geom = crate::projector::ProjectionGeometry::with_default_spacing(grid, 37, 12)
            .unwrap();
        let img = three_tissue_image(grid);
        let mut mask_vals = Array2::zeros((24, 24));
        mask_vals[[12, 27 - 4]] = 1.0; // inside the bone band
        let mask = Image::new(grid, mask_vals, Unit::Binary).unwrap();
        let prior =
            build_prior(&img, Some(&mask), None, &PriorConfig::default(), &geom, 0.192).unwrap();
        assert_eq!(prior.image.values()[[12, 23]], 0.0);
        assert_eq!(prior.y_tilde.grid(), geom.sinogram_grid());
        // The projection of a nonnegative prior is nonnegative.
        assert!(prior.y_tilde.values().iter().all(|&v| v >= 0.0));
    }
}
