//! Parallel-beam projection: forward operator, matched adjoint, and an
//! operator-norm estimate.
//!
//! The forward projector computes exact line integrals: for each detector
//! bin it traces the ray through the pixel grid and accumulates
//! `length * value` over every pixel the ray crosses, where `length` is the
//! physical intersection length. The back-projector applies the transpose
//! of the same sparse operator, using the identical traversal, so
//! `<P x, y> = <x, P^T y>` holds to rounding error by construction.
//!
//! Ray for bin `b`, view `v`:
//!
//! ```text
//! p(u) = (t_b + offset) * n + u * d,   n = (cos t, sin t),  d = (-sin t, cos t)
//! ```
//!
//! with `t = 2*pi*v / n_views` and `u` the (signed) arc length, so
//! intersection lengths come out in physical units and scale with
//! `pixel_size`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, CtError, Result};
use crate::field::{Image, Sinogram, SinogramKind, Unit};
use crate::grid::{ImageGrid, SinogramGrid};

/// Detector width relative to the image diagonal under default spacing.
pub const DEFAULT_DETECTOR_MARGIN: f64 = 1.02;

/// Direction components smaller than this are treated as axis-parallel.
const EPS_PARALLEL: f64 = 1e-12;

/// Pairing of an image grid with a sinogram grid and a global detector
/// shift. Valid geometries have the detector at least as wide as the image
/// diagonal, so every pixel is seen from every view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGeometry {
    image_grid: ImageGrid,
    sinogram_grid: SinogramGrid,
    detector_offset: f64,
}

impl ProjectionGeometry {
    pub fn new(
        image_grid: ImageGrid,
        sinogram_grid: SinogramGrid,
        detector_offset: f64,
    ) -> Result<Self> {
        if !detector_offset.is_finite() {
            return Err(invalid("detector offset must be finite"));
        }
        let width = sinogram_grid.detector_width();
        let diag = image_grid.diagonal();
        if width < diag {
            return Err(invalid(format!(
                "detector width {width:.6} does not cover image diagonal {diag:.6}"
            )));
        }
        Ok(Self { image_grid, sinogram_grid, detector_offset })
    }

    /// Geometry with `bin_spacing = 1.02 * diagonal / n_bins` and no
    /// detector shift, giving a 2% margin around the image.
    pub fn with_default_spacing(
        image_grid: ImageGrid,
        n_bins: usize,
        n_views: usize,
    ) -> Result<Self> {
        if n_bins == 0 {
            return Err(invalid("n_bins must be nonzero"));
        }
        let spacing = DEFAULT_DETECTOR_MARGIN * image_grid.diagonal() / n_bins as f64;
        let sinogram_grid = SinogramGrid::new(n_bins, n_views, spacing)?;
        Self::new(image_grid, sinogram_grid, 0.0)
    }

    pub fn image_grid(&self) -> ImageGrid {
        self.image_grid
    }

    pub fn sinogram_grid(&self) -> SinogramGrid {
        self.sinogram_grid
    }

    pub fn detector_offset(&self) -> f64 {
        self.detector_offset
    }
}

/// Scratch buffers for one ray traversal, reused across rays of a view.
struct RayScratch {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl RayScratch {
    fn new(grid: &ImageGrid) -> Self {
        Self { xs: Vec::with_capacity(grid.width() + 1), ys: Vec::with_capacity(grid.height() + 1) }
    }
}

/// Visits every pixel the ray crosses, passing `(row, col, length)`.
///
/// Crossing parameters of the ray with the vertical and horizontal grid
/// lines are enumerated in increasing `u` and merged; each sub-segment lies
/// inside exactly one pixel, identified from its midpoint. Pixels are
/// half-open (`[x_lo, x_hi)` horizontally, `(y_lo, y_hi]` vertically, the
/// intervals `floor` induces) so a ray running exactly along a shared edge
/// is charged to one pixel, never both.
fn for_each_pixel_on_ray(
    grid: &ImageGrid,
    cos_t: f64,
    sin_t: f64,
    t: f64,
    scratch: &mut RayScratch,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let s = grid.pixel_size();
    let hx = grid.half_extent_x();
    let hy = grid.half_extent_y();
    let (xc, yc) = (t * cos_t, t * sin_t);
    // Snap near-axis directions to exact zero so a ray lying on a grid
    // line stays on it for the whole traversal: sin(pi) is ~1e-16, and
    // letting it leak into midpoints would flip floor() across the line.
    let (mut vx, mut vy) = (-sin_t, cos_t);
    if vx.abs() < EPS_PARALLEL {
        vx = 0.0;
    }
    if vy.abs() < EPS_PARALLEL {
        vy = 0.0;
    }
    let eps_seg = 1e-12 * s;

    // Clip against the grid bounding box (slab method).
    let mut u0 = f64::NEG_INFINITY;
    let mut u1 = f64::INFINITY;
    if vx.abs() < EPS_PARALLEL {
        if !(-hx..hx).contains(&xc) {
            return;
        }
    } else {
        let a = (-hx - xc) / vx;
        let b = (hx - xc) / vx;
        u0 = u0.max(a.min(b));
        u1 = u1.min(a.max(b));
    }
    if vy.abs() < EPS_PARALLEL {
        if !(yc > -hy && yc <= hy) {
            return;
        }
    } else {
        let a = (-hy - yc) / vy;
        let b = (hy - yc) / vy;
        u0 = u0.max(a.min(b));
        u1 = u1.min(a.max(b));
    }
    if !(u1 - u0 > eps_seg) {
        return;
    }

    // Interior grid-line crossings, ascending in u.
    scratch.xs.clear();
    scratch.ys.clear();
    if vx.abs() >= EPS_PARALLEL {
        let xa = xc + vx * u0;
        let xb = xc + vx * u1;
        let k_lo = (((xa.min(xb) + hx) / s).ceil().max(0.0)) as usize;
        let k_hi = ((((xa.max(xb) + hx) / s).floor()) as isize).min(grid.width() as isize);
        let mut push = |k: usize| {
            let u = ((-hx + k as f64 * s) - xc) / vx;
            scratch.xs.push(u);
        };
        if k_hi >= k_lo as isize {
            if vx > 0.0 {
                for k in k_lo..=(k_hi as usize) {
                    push(k);
                }
            } else {
                for k in (k_lo..=(k_hi as usize)).rev() {
                    push(k);
                }
            }
        }
    }
    if vy.abs() >= EPS_PARALLEL {
        let ya = yc + vy * u0;
        let yb = yc + vy * u1;
        let k_lo = (((ya.min(yb) + hy) / s).ceil().max(0.0)) as usize;
        let k_hi = ((((ya.max(yb) + hy) / s).floor()) as isize).min(grid.height() as isize);
        let mut push = |k: usize| {
            let u = ((-hy + k as f64 * s) - yc) / vy;
            scratch.ys.push(u);
        };
        if k_hi >= k_lo as isize {
            if vy > 0.0 {
                for k in k_lo..=(k_hi as usize) {
                    push(k);
                }
            } else {
                for k in (k_lo..=(k_hi as usize)).rev() {
                    push(k);
                }
            }
        }
    }

    // Merge the two ascending crossing lists and emit sub-segments.
    let w = grid.width() as isize;
    let h = grid.height() as isize;
    let mut emit = |a: f64, b: f64| {
        let len = b - a;
        if len > eps_seg {
            let um = 0.5 * (a + b);
            let x = xc + vx * um;
            let y = yc + vy * um;
            let j = (((x + hx) / s).floor() as isize).clamp(0, w - 1) as usize;
            let i = (((hy - y) / s).floor() as isize).clamp(0, h - 1) as usize;
            visit(i, j, len);
        }
    };
    let mut prev = u0;
    let (mut ix, mut iy) = (0usize, 0usize);
    loop {
        let next = match (scratch.xs.get(ix), scratch.ys.get(iy)) {
            (Some(&ux), Some(&uy)) => {
                if ux <= uy {
                    ix += 1;
                    ux
                } else {
                    iy += 1;
                    uy
                }
            }
            (Some(&ux), None) => {
                ix += 1;
                ux
            }
            (None, Some(&uy)) => {
                iy += 1;
                uy
            }
            (None, None) => break,
        };
        let next = next.clamp(prev, u1);
        emit(prev, next);
        prev = next;
    }
    emit(prev, u1);
}

fn check_image_grid(img: &Image, geom: &ProjectionGeometry) -> Result<()> {
    if img.grid() != geom.image_grid {
        return Err(CtError::GridMismatch(format!(
            "image grid {:?} does not match geometry {:?}",
            img.grid(),
            geom.image_grid
        )));
    }
    Ok(())
}

fn check_sinogram_grid(sino: &Sinogram, geom: &ProjectionGeometry) -> Result<()> {
    if sino.grid() != geom.sinogram_grid {
        return Err(CtError::GridMismatch(format!(
            "sinogram grid {:?} does not match geometry {:?}",
            sino.grid(),
            geom.sinogram_grid
        )));
    }
    Ok(())
}

/// Line integrals of `img` along every (bin, view) ray. Accepts any image
/// unit: the operator is linear in the pixel values regardless of their
/// meaning. Bins whose rays miss the pixel grid are exactly zero.
pub fn forward_project(img: &Image, geom: &ProjectionGeometry) -> Result<Sinogram> {
    check_image_grid(img, geom)?;
    let grid = geom.image_grid;
    let sg = geom.sinogram_grid;
    let vals = img.values();

    // Views are independent, so per-view parallelism cannot change results.
    let columns: Vec<Vec<f64>> = (0..sg.n_views())
        .into_par_iter()
        .map(|v| {
            let (sin_t, cos_t) = sg.view_angle(v).sin_cos();
            let mut scratch = RayScratch::new(&grid);
            (0..sg.n_bins())
                .map(|b| {
                    let t = sg.bin_offset(b) + geom.detector_offset;
                    let mut acc = 0.0;
                    for_each_pixel_on_ray(&grid, cos_t, sin_t, t, &mut scratch, |i, j, len| {
                        acc += len * vals[[i, j]];
                    });
                    acc
                })
                .collect()
        })
        .collect();

    let mut out = Array2::zeros((sg.n_bins(), sg.n_views()));
    for (v, col) in columns.iter().enumerate() {
        for (b, &val) in col.iter().enumerate() {
            out[[b, v]] = val;
        }
    }
    Sinogram::new(sg, out, SinogramKind::Raw)
}

/// Number of views accumulated per partial image in [`back_project`].
/// Fixed (not derived from the thread count) so sums keep a fixed order
/// and results are bit-identical for any parallelism.
const BACKPROJECT_CHUNK: usize = 32;

/// Transpose of [`forward_project`]: smears every bin value back along its
/// ray, weighted by the same intersection lengths.
pub fn back_project(sino: &Sinogram, geom: &ProjectionGeometry) -> Result<Image> {
    check_sinogram_grid(sino, geom)?;
    let grid = geom.image_grid;
    let sg = geom.sinogram_grid;
    let vals = sino.values();

    let views: Vec<usize> = (0..sg.n_views()).collect();
    let partials: Vec<Array2<f64>> = views
        .par_chunks(BACKPROJECT_CHUNK)
        .map(|chunk| {
            let mut img = Array2::zeros((grid.height(), grid.width()));
            let mut scratch = RayScratch::new(&grid);
            for &v in chunk {
                let (sin_t, cos_t) = sg.view_angle(v).sin_cos();
                for b in 0..sg.n_bins() {
                    let t = sg.bin_offset(b) + geom.detector_offset;
                    let val = vals[[b, v]];
                    for_each_pixel_on_ray(&grid, cos_t, sin_t, t, &mut scratch, |i, j, len| {
                        img[[i, j]] += len * val;
                    });
                }
            }
            img
        })
        .collect();

    let mut total = Array2::zeros((grid.height(), grid.width()));
    for p in &partials {
        total += p;
    }
    Image::new(grid, total, Unit::Mu)
}

/// Estimates `||P||` (largest singular value of the projector) by power
/// iteration on `P^T P` from a seeded random start. The returned estimate
/// is a lower bound that is nondecreasing in `n_iters`.
pub fn operator_norm(geom: &ProjectionGeometry, n_iters: usize, seed: u64) -> Result<f64> {
    if n_iters == 0 {
        return Err(invalid("operator_norm needs at least one iteration"));
    }
    let grid = geom.image_grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::from_shape_simple_fn((grid.height(), grid.width()), || {
        StandardNormal.sample(&mut rng)
    });
    let norm = x.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("degenerate random start"));
    }
    x /= norm;

    let mut lambda = 0.0;
    for _ in 0..n_iters {
        let xi = Image::new(grid, x.clone(), Unit::Mu)?;
        let w = back_project(&forward_project(&xi, geom)?, geom)?.into_values();
        // x is unit norm, so this is the Rayleigh quotient of P^T P.
        lambda = x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
        let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if wn == 0.0 {
            return Ok(0.0);
        }
        x = w / wn;
    }
    Ok(lambda.sqrt())
}
