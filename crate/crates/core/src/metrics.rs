//! Image quality metrics and grouped reporting.

use ndarray::Array2;

use crate::consts::PSNR_PEAK_HU;
use crate::error::{invalid, CtError, Result};
use crate::field::{Image, Unit};

/// PSNR is capped here so identical inputs report a finite number.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW_RADIUS: usize = 5; // 11x11 window
const SSIM_SIGMA: f64 = 1.5;

fn check_pair(x: &Image, reference: &Image) -> Result<()> {
    if x.grid() != reference.grid() {
        return Err(CtError::GridMismatch(format!(
            "metric inputs on different grids: {:?} vs {:?}",
            x.grid(),
            reference.grid()
        )));
    }
    if x.unit() != reference.unit() {
        return Err(CtError::UnitMismatch(format!(
            "metric inputs with different units: {:?} vs {:?}",
            x.unit(),
            reference.unit()
        )));
    }
    Ok(())
}

fn check_exclude(x: &Image, exclude: Option<&Image>) -> Result<()> {
    if let Some(m) = exclude {
        if m.grid() != x.grid() {
            return Err(CtError::GridMismatch("exclusion mask grid differs".into()));
        }
        if m.unit() != Unit::Binary {
            return Err(CtError::UnitMismatch(format!(
                "exclusion mask must be binary, got {:?}",
                m.unit()
            )));
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, `10 log10(peak^2 / mse)`, capped at
/// [`PSNR_CAP_DB`]. Pixels where `exclude` is 1 are left out of the mean.
pub fn psnr(x: &Image, reference: &Image, peak: f64, exclude: Option<&Image>) -> Result<f64> {
    check_pair(x, reference)?;
    check_exclude(x, exclude)?;
    if !(peak.is_finite() && peak > 0.0) {
        return Err(invalid(format!("peak must be positive, got {peak}")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (a, b)) in x.values().iter().zip(reference.values().iter()).enumerate() {
        if let Some(m) = exclude {
            let (cols, idx) = (x.grid().width(), k);
            if m.values()[[idx / cols, idx % cols]] == 1.0 {
                continue;
            }
        }
        let d = a - b;
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(invalid("exclusion mask covers every pixel"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Shifts CT numbers by +1000 and clamps to `[0, 4096]`, the display range
/// the metrics are defined on.
fn shift_hu(img: &Image) -> Array2<f64> {
    img.values().mapv(|v| (v + 1000.0).clamp(0.0, PSNR_PEAK_HU))
}

/// PSNR of two HU images on the shifted `[0, 4096]` scale.
pub fn psnr_hu(x: &Image, reference: &Image, exclude: Option<&Image>) -> Result<f64> {
    check_pair(x, reference)?;
    if x.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!("psnr_hu expects HU images, got {:?}", x.unit())));
    }
    let grid = x.grid();
    let xs = Image::new(grid, shift_hu(x), Unit::Hu)?;
    let rs = Image::new(grid, shift_hu(reference), Unit::Hu)?;
    psnr(&xs, &rs, PSNR_PEAK_HU, exclude)
}

fn gaussian_kernel_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Reflect index `i + off` into `[0, n)` (mirror without edge repeat,
/// matching reflect padding).
fn reflect(i: usize, off: isize, n: usize) -> usize {
    let mut k = i as isize + off;
    let n = n as isize;
    // A couple of bounces suffice for |off| < n.
    loop {
        if k < 0 {
            k = -k;
        } else if k >= n {
            k = 2 * n - 2 - k;
        } else {
            return k as usize;
        }
    }
}

/// Separable Gaussian blur with reflect boundary handling.
pub(crate) fn gaussian_blur(values: &Array2<f64>, sigma: f64, radius: usize) -> Array2<f64> {
    if sigma == 0.0 || radius == 0 {
        return values.clone();
    }
    let k = gaussian_kernel_1d(sigma, radius);
    let (rows, cols) = values.dim();
    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (o, &w) in k.iter().enumerate() {
                acc += w * values[[i, reflect(j, o as isize - radius as isize, cols)]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (o, &w) in k.iter().enumerate() {
                acc += w * tmp[[reflect(i, o as isize - radius as isize, rows), j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5)
/// and reflect padding. Identical inputs return exactly 1.0.
pub fn ssim(x: &Image, reference: &Image, peak: f64) -> Result<f64> {
    check_pair(x, reference)?;
    if !(peak.is_finite() && peak > 0.0) {
        return Err(invalid(format!("peak must be positive, got {peak}")));
    }
    let a = x.values();
    let b = reference.values();
    let r = SSIM_WINDOW_RADIUS;
    let mu_a = gaussian_blur(a, SSIM_SIGMA, r);
    let mu_b = gaussian_blur(b, SSIM_SIGMA, r);
    let aa = gaussian_blur(&(a * a), SSIM_SIGMA, r);
    let bb = gaussian_blur(&(b * b), SSIM_SIGMA, r);
    let ab = gaussian_blur(&(a * b), SSIM_SIGMA, r);

    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (rows, cols) = a.dim();
    let mut total = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let (ma, mb) = (mu_a[[i, j]], mu_b[[i, j]]);
            let va = aa[[i, j]] - ma * ma;
            let vb = bb[[i, j]] - mb * mb;
            let cov = ab[[i, j]] - ma * mb;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (rows * cols) as f64)
}

/// SSIM of two HU images on the shifted `[0, 4096]` scale.
pub fn ssim_hu(x: &Image, reference: &Image) -> Result<f64> {
    check_pair(x, reference)?;
    if x.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch(format!("ssim_hu expects HU images, got {:?}", x.unit())));
    }
    let grid = x.grid();
    let xs = Image::new(grid, shift_hu(x), Unit::Hu)?;
    let rs = Image::new(grid, shift_hu(reference), Unit::Hu)?;
    ssim(&xs, &rs, PSNR_PEAK_HU)
}

/// Per-case metric record used for grouped summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub name: String,
    /// Metal footprint in pixels; cases are ranked by this, largest first.
    pub metal_px: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    /// Metal sizes covered by the group, largest first.
    pub label: String,
    pub case_names: Vec<String>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub groups: Vec<GroupSummary>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Sorts cases by metal size (descending, ties by name) and averages the
/// metrics over consecutive groups of the given sizes, which must sum to
/// the number of cases.
pub fn group_report(cases: &[CaseMetrics], group_sizes: &[usize]) -> Result<GroupReport> {
    if cases.is_empty() {
        return Err(invalid("group_report needs at least one case"));
    }
    if group_sizes.iter().sum::<usize>() != cases.len() || group_sizes.iter().any(|&g| g == 0) {
        return Err(invalid(format!(
            "group sizes {group_sizes:?} do not partition {} cases",
            cases.len()
        )));
    }
    let mut order: Vec<&CaseMetrics> = cases.iter().collect();
    order.sort_by(|a, b| b.metal_px.cmp(&a.metal_px).then_with(|| a.name.cmp(&b.name)));

    let mut groups = Vec::with_capacity(group_sizes.len());
    let mut start = 0;
    for &size in group_sizes {
        let slice = &order[start..start + size];
        let label = if size == 1 {
            format!("{} px", slice[0].metal_px)
        } else {
            format!("{}-{} px", slice[0].metal_px, slice[size - 1].metal_px)
        };
        groups.push(GroupSummary {
            label,
            case_names: slice.iter().map(|c| c.name.clone()).collect(),
            mean_psnr: slice.iter().map(|c| c.psnr).sum::<f64>() / size as f64,
            mean_ssim: slice.iter().map(|c| c.ssim).sum::<f64>() / size as f64,
        });
        start += size;
    }
    Ok(GroupReport {
        groups,
        mean_psnr: cases.iter().map(|c| c.psnr).sum::<f64>() / cases.len() as f64,
        mean_ssim: cases.iter().map(|c| c.ssim).sum::<f64>() / cases.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn img(grid: ImageGrid, f: impl Fn(usize, usize) -> f64) -> Image {
        let mut v = Array2::zeros((grid.height(), grid.width()));
        for i in 0..grid.height() {
            for j in 0..grid.width() {
                v[[i, j]] = f(i, j);
            }
        }
        Image::new(grid, v, Unit::Hu).unwrap()
    }

    #[test]
    fn psnr_of_identical_images_hits_the_cap() {
        let g = ImageGrid::new(8, 8).unwrap();
        let a = img(g, |i, j| (i * 8 + j) as f64);
        assert_eq!(psnr(&a, &a, 255.0, None).unwrap(), PSNR_CAP_DB);
        assert_eq!(ssim(&a, &a, 255.0).unwrap(), 1.0);
        assert_eq!(ssim_hu(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn psnr_known_value() {
        // Constant error d: psnr = 10 log10(peak^2 / d^2).
        let g = ImageGrid::new(4, 4).unwrap();
        let a = img(g, |_, _| 0.0);
        let b = img(g, |_, _| 10.0);
        let got = psnr(&a, &b, 100.0, None).unwrap();
        assert_relative_eq!(got, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn exclusion_mask_removes_pixels() {
        let g = ImageGrid::new(2, 2).unwrap();
        let a = img(g, |_, _| 0.0);
        // One huge outlier, masked out.
        let b = img(g, |i, j| if i == 0 && j == 0 { 4000.0 } else { 1.0 });
        let mut mv = Array2::zeros((2, 2));
        mv[[0, 0]] = 1.0;
        let mask = Image::new(g, mv, Unit::Binary).unwrap();
        let with = psnr(&a, &b, 100.0, Some(&mask)).unwrap();
        assert_relative_eq!(with, 40.0, epsilon = 1e-12);
        let without = psnr(&a, &b, 100.0, None).unwrap();
        assert!(without < with);
        // Masking everything is an error.
        let all = Image::constant(g, 1.0, Unit::Binary).unwrap();
        assert!(psnr(&a, &b, 100.0, Some(&all)).is_err());
    }

    #[test]
    fn psnr_hu_clamps_outside_display_range() {
        let g = ImageGrid::new(2, 2).unwrap();
        // Both below -1000: clamp maps both to 0, so they compare equal.
        let a = img(g, |_, _| -3000.0);
        let b = img(g, |_, _| -2000.0);
        assert_eq!(psnr_hu(&a, &b, None).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_penalizes_structure_loss() {
        let g = ImageGrid::new(32, 32).unwrap();
        let a = img(g, |i, j| if (i / 4 + j / 4) % 2 == 0 { 200.0 } else { -200.0 });
        let flat = img(g, |_, _| 0.0);
        let noisy = img(g, |i, j| {
            let base = if (i / 4 + j / 4) % 2 == 0 { 200.0 } else { -200.0 };
            base + ((i * 31 + j * 17) % 13) as f64
        });
        let s_flat = ssim_hu(&flat, &a).unwrap();
        let s_noisy = ssim_hu(&noisy, &a).unwrap();
        assert!(s_noisy > 0.9, "mild noise should keep ssim high, got {s_noisy}");
        assert!(s_flat < 0.5, "flat image should lose structure, got {s_flat}");
    }

    #[test]
    fn group_report_sorts_and_partitions() {
        let cases: Vec<CaseMetrics> = [("a", 50, 30.0), ("b", 2000, 20.0), ("c", 500, 25.0), ("d", 100, 28.0)]
            .iter()
            .map(|&(n, px, p)| CaseMetrics {
                name: n.into(),
                metal_px: px,
                psnr: p,
                ssim: p / 40.0,
            })
            .collect();
        let rep = group_report(&cases, &[2, 2]).unwrap();
        assert_eq!(rep.groups[0].case_names, vec!["b", "c"]);
        assert_eq!(rep.groups[1].case_names, vec!["d", "a"]);
        assert_relative_eq!(rep.groups[0].mean_psnr, 22.5);
        assert_relative_eq!(rep.groups[1].mean_psnr, 29.0);
        assert_relative_eq!(rep.mean_psnr, 25.75);
        assert_eq!(rep.groups[0].label, "2000-500 px");

        assert!(group_report(&cases, &[2, 3]).is_err());
        assert!(group_report(&cases, &[4, 0]).is_err());
        assert!(group_report(&[], &[]).is_err());
    }
}
