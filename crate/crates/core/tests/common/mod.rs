//! Shared helpers for integration tests, chiefly an independent dense
//! projector built by per-pixel slab clipping. The production projector
//! enumerates grid-line crossings along each ray; this one intersects the
//! ray with every pixel box separately, so agreement between the two is
//! meaningful evidence that both compute the same line integrals.

use ctmar::{ImageGrid, Sinogram, SinogramKind};
use ctmar::projector::ProjectionGeometry;
use ndarray::Array2;

/// Direction components this close to zero are treated as exactly
/// axis-parallel, mirroring the production convention so that rays lying
/// on a grid line are charged to the same pixels.
const EPS_PARALLEL: f64 = 1e-12;

/// Intersection length of one ray with one pixel box.
///
/// Pixels are half-open, `[x_lo, x_hi)` horizontally and `(y_lo, y_hi]`
/// vertically, which only matters for rays running exactly along a shared
/// edge: those belong to one pixel, never both.
fn ray_pixel_length(
    grid: &ImageGrid,
    i: usize,
    j: usize,
    cos_t: f64,
    sin_t: f64,
    t: f64,
) -> f64 {
    let s = grid.pixel_size();
    let hx = grid.half_extent_x();
    let hy = grid.half_extent_y();
    let x_lo = -hx + j as f64 * s;
    let x_hi = x_lo + s;
    let y_hi = hy - i as f64 * s;
    let y_lo = y_hi - s;

    let (xc, yc) = (t * cos_t, t * sin_t);
    let (mut vx, mut vy) = (-sin_t, cos_t);
    if vx.abs() < EPS_PARALLEL {
        vx = 0.0;
    }
    if vy.abs() < EPS_PARALLEL {
        vy = 0.0;
    }

    let mut u0 = f64::NEG_INFINITY;
    let mut u1 = f64::INFINITY;
    if vx == 0.0 {
        if !(x_lo..x_hi).contains(&xc) {
            return 0.0;
        }
    } else {
        let a = (x_lo - xc) / vx;
        let b = (x_hi - xc) / vx;
        u0 = u0.max(a.min(b));
        u1 = u1.min(a.max(b));
    }
    if vy == 0.0 {
        if !(yc > y_lo && yc <= y_hi) {
            return 0.0;
        }
    } else {
        let a = (y_lo - yc) / vy;
        let b = (y_hi - yc) / vy;
        u0 = u0.max(a.min(b));
        u1 = u1.min(a.max(b));
    }
    let len = u1 - u0;
    // Same degenerate-segment cutoff as the production traversal.
    if len > 1e-12 * s {
        len
    } else {
        0.0
    }
}

/// Dense projector matrix, `(n_bins * n_views) x (height * width)`, row
/// index `b * n_views + v`, column index `i * width + j`.
pub fn dense_projector(geom: &ProjectionGeometry) -> Array2<f64> {
    let ig = geom.image_grid();
    let sg = geom.sinogram_grid();
    let (h, w) = (ig.height(), ig.width());
    let mut p = Array2::zeros((sg.n_bins() * sg.n_views(), h * w));
    for v in 0..sg.n_views() {
        let theta = sg.view_angle(v);
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        for b in 0..sg.n_bins() {
            let t = sg.bin_offset(b) + geom.detector_offset();
            let row = b * sg.n_views() + v;
            for i in 0..h {
                for j in 0..w {
                    let len = ray_pixel_length(&ig, i, j, cos_t, sin_t, t);
                    if len > 0.0 {
                        p[[row, i * w + j]] = len;
                    }
                }
            }
        }
    }
    p
}

/// Applies a dense matrix from [`dense_projector`] to image values.
pub fn dense_forward(p: &Array2<f64>, geom: &ProjectionGeometry, img: &Array2<f64>) -> Sinogram {
    let sg = geom.sinogram_grid();
    let w = geom.image_grid().width();
    let mut out = Array2::zeros((sg.n_bins(), sg.n_views()));
    for b in 0..sg.n_bins() {
        for v in 0..sg.n_views() {
            let row = b * sg.n_views() + v;
            let mut acc = 0.0;
            for (col, &weight) in p.row(row).iter().enumerate() {
                if weight != 0.0 {
                    acc += weight * img[[col / w, col % w]];
                }
            }
            out[[b, v]] = acc;
        }
    }
    Sinogram::new(sg, out, SinogramKind::Raw).unwrap()
}
