//! File formats.
//!
//! Arrays travel as little-endian `f32`, row-major, in a `.f32` file with a
//! plain-text `.hdr` sidecar describing shape, sampling, and tag:
//!
//! ```text
//! type = image            type = sinogram
//! height = 416            n_bins = 641
//! width = 416             n_views = 640
//! pixel_size = 1.0        bin_spacing = 0.9375
//! unit = hu               kind = raw
//! ```
//!
//! Masks load from PNG (any nonzero luma is 1). Previews are written as
//! 16-bit grayscale PNG after windowing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CtError, Result};
use crate::field::{Image, Sinogram, SinogramKind, Unit};
use crate::grid::{ImageGrid, SinogramGrid};

fn hdr_path(data_path: &Path) -> std::path::PathBuf {
    data_path.with_extension("hdr")
}

fn write_f32(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    let expect = rows * cols * 4;
    if bytes.len() != expect {
        return Err(CtError::Io(format!(
            "{} holds {} bytes, expected {expect} ({rows}x{cols} f32)",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = Array2::zeros((rows, cols));
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        values[[k / cols, k % cols]] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
    }
    Ok(values)
}

fn parse_hdr(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CtError::Io(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CtError::Io(format!("{}: malformed header line {line:?}", path.display()))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn hdr_get<'a>(map: &'a HashMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| CtError::Io(format!("{}: missing header field {key}", path.display())))
}

fn hdr_parse<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    hdr_get(map, key, path)?
        .parse()
        .map_err(|_| CtError::Io(format!("{}: cannot parse header field {key}", path.display())))
}

fn unit_name(unit: Unit) -> &'static str {
    match unit {
        Unit::Hu => "hu",
        Unit::Mu => "mu",
        Unit::Binary => "binary",
        Unit::Weight => "weight",
    }
}

fn parse_unit(s: &str) -> Option<Unit> {
    match s {
        "hu" => Some(Unit::Hu),
        "mu" => Some(Unit::Mu),
        "binary" => Some(Unit::Binary),
        "weight" => Some(Unit::Weight),
        _ => None,
    }
}

fn kind_name(kind: SinogramKind) -> &'static str {
    match kind {
        SinogramKind::Raw => "raw",
        SinogramKind::Normalized => "normalized",
        SinogramKind::Trace => "trace",
    }
}

fn parse_kind(s: &str) -> Option<SinogramKind> {
    match s {
        "raw" => Some(SinogramKind::Raw),
        "normalized" => Some(SinogramKind::Normalized),
        "trace" => Some(SinogramKind::Trace),
        _ => None,
    }
}

/// Writes `<path>` (f32 data) plus `<path with .hdr>` describing it.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_f32(path, img.values())?;
    let g = img.grid();
    let hdr = format!(
        "type = image\nheight = {}\nwidth = {}\npixel_size = {}\nunit = {}\n",
        g.height(),
        g.width(),
        g.pixel_size(),
        unit_name(img.unit())
    );
    fs::write(hdr_path(path), hdr)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let hp = hdr_path(path);
    let map = parse_hdr(&hp)?;
    if hdr_get(&map, "type", &hp)? != "image" {
        return Err(CtError::Io(format!("{}: not an image header", hp.display())));
    }
    let height: usize = hdr_parse(&map, "height", &hp)?;
    let width: usize = hdr_parse(&map, "width", &hp)?;
    let pixel_size: f64 = hdr_parse(&map, "pixel_size", &hp)?;
    let unit = parse_unit(hdr_get(&map, "unit", &hp)?)
        .ok_or_else(|| CtError::Io(format!("{}: unknown unit", hp.display())))?;
    let grid = ImageGrid::with_pixel_size(height, width, pixel_size)?;
    let values = read_f32(path, height, width)?;
    Image::new(grid, values, unit)
}

pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    write_f32(path, sino.values())?;
    let g = sino.grid();
    let hdr = format!(
        "type = sinogram\nn_bins = {}\nn_views = {}\nbin_spacing = {}\nkind = {}\n",
        g.n_bins(),
        g.n_views(),
        g.bin_spacing(),
        kind_name(sino.kind())
    );
    fs::write(hdr_path(path), hdr)?;
    Ok(())
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let hp = hdr_path(path);
    let map = parse_hdr(&hp)?;
    if hdr_get(&map, "type", &hp)? != "sinogram" {
        return Err(CtError::Io(format!("{}: not a sinogram header", hp.display())));
    }
    let n_bins: usize = hdr_parse(&map, "n_bins", &hp)?;
    let n_views: usize = hdr_parse(&map, "n_views", &hp)?;
    let bin_spacing: f64 = hdr_parse(&map, "bin_spacing", &hp)?;
    let kind = parse_kind(hdr_get(&map, "kind", &hp)?)
        .ok_or_else(|| CtError::Io(format!("{}: unknown kind", hp.display())))?;
    let grid = SinogramGrid::new(n_bins, n_views, bin_spacing)?;
    let values = read_f32(path, n_bins, n_views)?;
    Sinogram::new(grid, values, kind)
}

/// Loads a PNG as a binary mask: any nonzero luma maps to 1.
pub fn load_mask_png(path: &Path, pixel_size: f64) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| CtError::Io(format!("{}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = ImageGrid::with_pixel_size(h, w, pixel_size)?;
    let mut values = Array2::zeros((h, w));
    for (x, y, p) in img.enumerate_pixels() {
        values[[y as usize, x as usize]] = if p.0[0] != 0 { 1.0 } else { 0.0 };
    }
    Image::new(grid, values, Unit::Binary)
}

/// Writes a 16-bit grayscale preview: values windowed to `[lo, hi]` and
/// mapped linearly onto the full u16 range.
pub fn save_preview_png(path: &Path, values: &Array2<f64>, window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(CtError::InvalidArgument(format!("bad preview window [{lo}, {hi}]")));
    }
    let (rows, cols) = values.dim();
    let mut out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(cols as u32, rows as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let v = values[[y as usize, x as usize]];
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        p.0[0] = (t * 65535.0).round() as u16;
    }
    out.save(path).map_err(|e| CtError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Soft-tissue display window used for preview PNGs of HU images.
pub const PREVIEW_WINDOW_HU: (f64, f64) = (-175.0, 275.0);

/// Serializes a solver run into `dir`: per stage `n`, the image in HU
/// (`x_nnn.f32` plus a windowed `x_nnn.png` preview), the normalized
/// sinogram (`s_tilde_nnn.f32`), and the corrected sinogram (`s_nnn.f32`);
/// a `stages.csv` of diagnostics, with a PSNR column when a ground-truth
/// HU image is given; and a `run.hdr` recording the stepsizes.
pub fn save_stage_trace(
    dir: &Path,
    trace: &crate::solver::StageTrace,
    mu_water: f64,
    gt: Option<&Image>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("stage,objective,trace_residual");
    if gt.is_some() {
        csv.push_str(",psnr_hu");
    }
    csv.push('\n');
    for (n, stage) in trace.stages.iter().enumerate() {
        let x_hu = crate::field::mu_to_hu(&stage.x, mu_water)?;
        save_image(&dir.join(format!("x_{n:03}.f32")), &x_hu)?;
        save_preview_png(&dir.join(format!("x_{n:03}.png")), x_hu.values(), PREVIEW_WINDOW_HU)?;
        save_sinogram(&dir.join(format!("s_tilde_{n:03}.f32")), &stage.s_tilde)?;
        save_sinogram(&dir.join(format!("s_{n:03}.f32")), &stage.s)?;
        csv.push_str(&format!("{n},{},{}", stage.objective, stage.trace_residual));
        if let Some(reference) = gt {
            let p = crate::metrics::psnr_hu(&x_hu, reference, None)?;
            csv.push_str(&format!(",{p}"));
        }
        csv.push('\n');
    }
    fs::write(dir.join("stages.csv"), csv)?;
    let mut hdr = format!("eta1 = {}\neta2 = {}\n", trace.eta1, trace.eta2);
    if let Some(norm) = trace.op_norm {
        hdr.push_str(&format!("op_norm = {norm}\n"));
    }
    fs::write(dir.join("run.hdr"), hdr)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn image_round_trip_preserves_grid_and_unit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32");
        let grid = ImageGrid::with_pixel_size(2, 3, 0.5).unwrap();
        let img =
            Image::new(grid, array![[0.0, -1000.0, 250.5], [1.5, 2.5, 3.5]], Unit::Hu).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.grid(), grid);
        assert_eq!(back.unit(), Unit::Hu);
        // Values pass through f32, exact for these inputs.
        assert_eq!(back.values(), img.values());
    }

    #[test]
    fn sinogram_round_trip_preserves_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.f32");
        let grid = SinogramGrid::new(3, 2, 1.25).unwrap();
        let sino = Sinogram::new(
            grid,
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            SinogramKind::Raw,
        )
        .unwrap();
        save_sinogram(&path, &sino).unwrap();
        let back = load_sinogram(&path).unwrap();
        assert_eq!(back.grid(), grid);
        assert_eq!(back.kind(), SinogramKind::Raw);
        assert_eq!(back.values(), sino.values());
    }

    #[test]
    fn loads_reject_mismatched_sizes_and_types() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32");
        let grid = ImageGrid::new(2, 2).unwrap();
        let img = Image::zeros(grid, Unit::Mu);
        save_image(&path, &img).unwrap();
        // Image header, sinogram loader.
        assert!(load_sinogram(&path).is_err());
        // Truncated data.
        std::fs::write(&path, [0u8; 7]).unwrap();
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn mask_png_binarizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut buf = image::GrayImage::new(3, 2);
        buf.put_pixel(0, 0, image::Luma([255]));
        buf.put_pixel(2, 1, image::Luma([1]));
        buf.save(&path).unwrap();
        let mask = load_mask_png(&path, 1.0).unwrap();
        assert_eq!(mask.unit(), Unit::Binary);
        assert_eq!(mask.values()[[0, 0]], 1.0);
        assert_eq!(mask.values()[[1, 2]], 1.0);
        assert_eq!(mask.values()[[0, 1]], 0.0);
        assert_eq!(mask.values().sum(), 2.0);
    }

    #[test]
    fn stage_trace_serializes_completely() {
        let ig = ImageGrid::new(8, 8).unwrap();
        let geom =
            crate::projector::ProjectionGeometry::with_default_spacing(ig, 13, 6).unwrap();
        let phantom = crate::phantom::shepp_logan(ig);
        let x_mu = crate::field::hu_to_mu(&phantom, 0.192).unwrap();
        let y = crate::projector::forward_project(&x_mu, &geom).unwrap();
        let tr = Sinogram::zeros(geom.sinogram_grid(), SinogramKind::Trace);
        let init = crate::solver::WarmStart::new(y.clone(), phantom.clone()).unwrap();
        let cfg = crate::solver::SolverConfig {
            n_stages: 2,
            ..crate::solver::SolverConfig::default()
        };
        let trace = crate::solver::run(&y, &tr, &y, &cfg, &geom, &init).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_stage_trace(dir.path(), &trace, 0.192, Some(&phantom)).unwrap();
        for n in 0..3 {
            let x = load_image(&dir.path().join(format!("x_{n:03}.f32"))).unwrap();
            assert_eq!(x.unit(), Unit::Hu);
            assert!(dir.path().join(format!("x_{n:03}.png")).exists());
            let st = load_sinogram(&dir.path().join(format!("s_tilde_{n:03}.f32"))).unwrap();
            assert_eq!(st.kind(), SinogramKind::Normalized);
            let s = load_sinogram(&dir.path().join(format!("s_{n:03}.f32"))).unwrap();
            assert_eq!(s.kind(), SinogramKind::Raw);
        }
        let csv = std::fs::read_to_string(dir.path().join("stages.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "stage,objective,trace_residual,psnr_hu");
        assert!(lines[1].starts_with("0,"));
        assert_eq!(lines[1].split(',').count(), 4);
        let hdr = std::fs::read_to_string(dir.path().join("run.hdr")).unwrap();
        assert!(hdr.contains("eta1 = ") && hdr.contains("op_norm = "));
    }

    #[test]
    fn preview_windows_and_saves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let vals = array![[-200.0, -175.0], [50.0, 300.0]];
        save_preview_png(&path, &vals, (-175.0, 275.0)).unwrap();
        let img = image::open(&path).unwrap().to_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 0); // clamped below
        assert_eq!(img.get_pixel(1, 1).0[0], 65535); // clamped above
        let mid = img.get_pixel(0, 1).0[0];
        assert_eq!(mid, ((225.0 / 450.0) * 65535.0f64).round() as u16);
        assert!(save_preview_png(&path, &vals, (1.0, 1.0)).is_err());
    }
}
