//! Test phantoms in CT numbers.

use std::path::PathBuf;

use ndarray::Array2;

use crate::error::{invalid, CtError, Result};
use crate::field::{Image, Unit};
use crate::grid::ImageGrid;

/// The classic ten-ellipse head phantom: `(value, a, b, x0, y0, phi_deg)`
/// with additive values on the unit square, rescaled to CT numbers by
/// `hu = 1000 * (v - 1)` so the background is air (-1000), soft tissue
/// lands near 0-100, and the skull at 1000.
const HEAD_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (2.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.01, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Renders the head phantom onto `grid`, mapping the grid onto the unit
/// square (each axis independently).
pub fn shepp_logan(grid: ImageGrid) -> Image {
    let (h, w) = (grid.height(), grid.width());
    let mut values = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let x = (j as f64 - (w as f64 - 1.0) / 2.0) * 2.0 / w as f64;
            let y = ((h as f64 - 1.0) / 2.0 - i as f64) * 2.0 / h as f64;
            let mut v = 0.0;
            for &(a_val, a, b, x0, y0, phi_deg) in &HEAD_ELLIPSES {
                let phi = phi_deg.to_radians();
                let (dx, dy) = (x - x0, y - y0);
                let xr = dx * phi.cos() + dy * phi.sin();
                let yr = -dx * phi.sin() + dy * phi.cos();
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    v += a_val;
                }
            }
            values[[i, j]] = 1000.0 * (v - 1.0);
        }
    }
    Image::new(grid, values, Unit::Hu).expect("finite by construction")
}

/// One circular insert. Centre and radius are fractions of the half
/// min-extent of the grid, so `radius: 0.5` spans a quarter of the short
/// side regardless of resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub hu: f64,
}

/// Disc phantom: discs painted in order over a uniform background, each
/// blended across a smooth edge band so projections vary smoothly.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscsParams {
    pub background_hu: f64,
    /// Width of the edge transition band in pixels; 0 gives hard edges.
    pub edge_width: f64,
    pub discs: Vec<Disc>,
}

impl Default for DiscsParams {
    fn default() -> Self {
        Self { background_hu: -1000.0, edge_width: 1.0, discs: Vec::new() }
    }
}

pub fn discs(grid: ImageGrid, params: &DiscsParams) -> Result<Image> {
    if !params.background_hu.is_finite() {
        return Err(invalid("background HU must be finite"));
    }
    if !(params.edge_width.is_finite() && params.edge_width >= 0.0) {
        return Err(invalid(format!("edge width must be >= 0, got {}", params.edge_width)));
    }
    for d in &params.discs {
        if !(d.radius.is_finite() && d.radius > 0.0) {
            return Err(invalid(format!("disc radius must be positive, got {}", d.radius)));
        }
        if !(d.cx.is_finite() && d.cy.is_finite() && d.hu.is_finite()) {
            return Err(invalid("disc parameters must be finite"));
        }
    }
    let (h, w) = (grid.height(), grid.width());
    let half = grid.half_extent_x().min(grid.half_extent_y());
    let edge = params.edge_width * grid.pixel_size();
    let mut values = Array2::from_elem((h, w), params.background_hu);
    for d in &params.discs {
        let (cx, cy, r) = (d.cx * half, d.cy * half, d.radius * half);
        for i in 0..h {
            for j in 0..w {
                let (x, y) = grid.pixel_center(i, j);
                let rho = (x - cx).hypot(y - cy);
                let cov = if edge == 0.0 {
                    if rho <= r {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let t = ((r + edge / 2.0 - rho) / edge).clamp(0.0, 1.0);
                    t * t * (3.0 - 2.0 * t)
                };
                if cov > 0.0 {
                    let v = &mut values[[i, j]];
                    *v = *v * (1.0 - cov) + d.hu * cov;
                }
            }
        }
    }
    Image::new(grid, values, Unit::Hu)
}

/// One case of the bundled evaluation suite.
#[derive(Debug, Clone)]
pub struct MetalCase {
    pub name: String,
    /// Metal-free tissue phantom in HU, the reconstruction target.
    pub clean: Image,
    /// Binary metal mask to insert during simulation.
    pub mask: Image,
}

/// Deterministic family of metal-artifact cases.
///
/// Each case is a body disc holding a few randomized soft-tissue discs
/// (low contrast, wide edges, so the background is not piecewise
/// constant), one or two bone discs, and metal inserts whose total area
/// shrinks with the case index: early cases get two large inserts, late
/// cases a single small one. The same `grid`, `n_cases`, and `seed`
/// always produce identical cases.
pub fn metal_suite(grid: ImageGrid, n_cases: usize, seed: u64) -> Result<Vec<MetalCase>> {
    use rand::{Rng, SeedableRng};
    if n_cases == 0 {
        return Err(invalid("suite needs at least one case"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let half = grid.half_extent_x().min(grid.half_extent_y());
    let mut cases = Vec::with_capacity(n_cases);
    for k in 0..n_cases {
        let mut parts = vec![Disc { cx: 0.0, cy: 0.0, radius: 0.88, hu: 0.0 }];
        // Smooth low-contrast structures keep tissue from clustering into
        // a single exact value.
        for _ in 0..rng.gen_range(2..=4usize) {
            parts.push(Disc {
                cx: rng.gen_range(-0.45..0.45),
                cy: rng.gen_range(-0.45..0.45),
                radius: rng.gen_range(0.12..0.30),
                hu: rng.gen_range(-90.0..90.0),
            });
        }
        for _ in 0..rng.gen_range(1..=2usize) {
            parts.push(Disc {
                cx: rng.gen_range(-0.42..0.42),
                cy: rng.gen_range(-0.42..0.42),
                radius: rng.gen_range(0.07..0.16),
                hu: rng.gen_range(350.0..900.0),
            });
        }
        let clean = discs(
            grid,
            &DiscsParams { background_hu: -1000.0, edge_width: 2.0, discs: parts },
        )?;

        // Metal area shrinks across the suite; even cases get a pair of
        // inserts, which throws the strongest streaks between them.
        let frac = if n_cases > 1 { k as f64 / (n_cases - 1) as f64 } else { 0.0 };
        let r_metal = (0.15 - 0.10 * frac) * half;
        let n_metal = if k % 2 == 0 { 2 } else { 1 };
        let mut mask = Array2::zeros((grid.height(), grid.width()));
        for _ in 0..n_metal {
            let cx = rng.gen_range(-0.4..0.4) * half;
            let cy = rng.gen_range(-0.4..0.4) * half;
            for i in 0..grid.height() {
                for j in 0..grid.width() {
                    let (x, y) = grid.pixel_center(i, j);
                    if (x - cx).hypot(y - cy) <= r_metal {
                        mask[[i, j]] = 1.0;
                    }
                }
            }
        }
        let mask = Image::new(grid, mask, Unit::Binary)?;
        cases.push(MetalCase { name: format!("case{k:02}"), clean, mask });
    }
    Ok(cases)
}

/// How to obtain a phantom image.
#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSpec {
    SheppLogan,
    Discs(DiscsParams),
    /// Load a stored HU image; its grid must match the requested one.
    FromFile(PathBuf),
}

pub fn make_phantom(spec: &PhantomSpec, grid: ImageGrid) -> Result<Image> {
    match spec {
        PhantomSpec::SheppLogan => Ok(shepp_logan(grid)),
        PhantomSpec::Discs(params) => discs(grid, params),
        PhantomSpec::FromFile(path) => {
            let img = crate::io::load_image(path)?;
            if img.unit() != Unit::Hu {
                return Err(CtError::UnitMismatch(format!(
                    "phantom file must hold HU values, got {:?}",
                    img.unit()
                )));
            }
            if img.grid() != grid {
                return Err(CtError::GridMismatch(format!(
                    "phantom file grid {:?} does not match requested {:?}",
                    img.grid(),
                    grid
                )));
            }
            Ok(img)
        }
    }
}
