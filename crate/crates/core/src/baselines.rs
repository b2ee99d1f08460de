//! Classical sinogram-inpainting corrections.
//!
//! Both baselines replace the metal-shadowed bins of each view and keep
//! every other bin bit-for-bit. Linear interpolation (LI) fills the gap
//! directly in the raw sinogram. The normalized variant (NMAR) first
//! divides by a projected prior, interpolates the nearly-flat ratio, and
//! multiplies back, which avoids the bias LI picks up where the true
//! profile is strongly curved.

use crate::error::{CtError, Result};
use crate::fbp::{fbp, RampFilter};
use crate::field::{mu_to_hu, Image, Sinogram, SinogramKind};
use crate::projector::ProjectionGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Extra bins masked on each side of the trace before interpolation,
    /// guarding against faint artifact tails at the trace boundary.
    pub dilation_bins: usize,
    pub filter: RampFilter,
    pub mu_water: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            dilation_bins: 1,
            filter: RampFilter::default(),
            mu_water: crate::consts::DEFAULT_MU_WATER,
        }
    }
}

fn check_trace(tr: &Sinogram) -> Result<()> {
    if tr.kind() != SinogramKind::Trace {
        return Err(CtError::UnitMismatch(format!("expected a trace sinogram, got {:?}", tr.kind())));
    }
    Ok(())
}

/// Widens the trace along the bin axis by `bins` on each side, per view.
pub fn dilate_trace(tr: &Sinogram, bins: usize) -> Result<Sinogram> {
    check_trace(tr)?;
    if bins == 0 {
        return Ok(tr.clone());
    }
    let (n_bins, n_views) = tr.values().dim();
    let mut out = tr.values().clone();
    for v in 0..n_views {
        for b in 0..n_bins {
            if tr.values()[[b, v]] == 1.0 {
                let lo = b.saturating_sub(bins);
                let hi = (b + bins).min(n_bins - 1);
                for k in lo..=hi {
                    out[[k, v]] = 1.0;
                }
            }
        }
    }
    Sinogram::new(tr.grid(), out, SinogramKind::Trace)
}

/// Replaces masked bins of each view by 1-D linear interpolation between
/// the nearest unmasked neighbours. Runs touching the detector edge are
/// extended with the inner boundary value; a fully masked view falls back
/// to its own mean with a warning. Unmasked bins pass through bitwise.
pub fn interpolate_trace(values: &Sinogram, tr: &Sinogram) -> Result<Sinogram> {
    check_trace(tr)?;
    if values.grid() != tr.grid() {
        return Err(CtError::GridMismatch("sinogram and trace grids differ".into()));
    }
    let (n_bins, n_views) = values.values().dim();
    let mut out = values.values().clone();
    for v in 0..n_views {
        let masked = |b: usize| tr.values()[[b, v]] == 1.0;
        let mut b = 0;
        while b < n_bins {
            if !masked(b) {
                b += 1;
                continue;
            }
            let start = b;
            while b < n_bins && masked(b) {
                b += 1;
            }
            let end = b; // run is [start, end)
            let left = start.checked_sub(1).map(|l| out[[l, v]]);
            let right = if end < n_bins { Some(out[[end, v]]) } else { None };
            match (left, right) {
                (Some(vl), Some(vr)) => {
                    let l = (start - 1) as f64;
                    let r = end as f64;
                    for k in start..end {
                        let t = (k as f64 - l) / (r - l);
                        out[[k, v]] = vl + (vr - vl) * t;
                    }
                }
                (Some(vl), None) => {
                    for k in start..end {
                        out[[k, v]] = vl;
                    }
                }
                (None, Some(vr)) => {
                    for k in start..end {
                        out[[k, v]] = vr;
                    }
                }
                (None, None) => {
                    let mean =
                        values.values().column(v).sum() / n_bins as f64;
                    log::warn!("view {v} fully masked; filling with its mean {mean:.6}");
                    for k in start..end {
                        out[[k, v]] = mean;
                    }
                }
            }
        }
    }
    Sinogram::new(values.grid(), out, values.kind())
}

#[derive(Debug, Clone)]
pub struct LiResult {
    pub y_li: Sinogram,
    /// FBP of the inpainted sinogram, in HU.
    pub x_li: Image,
}

/// Linear-interpolation correction.
pub fn li_correct(
    y: &Sinogram,
    tr: &Sinogram,
    geom: &ProjectionGeometry,
    cfg: &BaselineConfig,
) -> Result<LiResult> {
    if y.kind() != SinogramKind::Raw {
        return Err(CtError::UnitMismatch(format!("li_correct expects a raw sinogram, got {:?}", y.kind())));
    }
    let tr_eff = dilate_trace(tr, cfg.dilation_bins)?;
    let y_li = interpolate_trace(y, &tr_eff)?;
    let x_li = mu_to_hu(&fbp(&y_li, geom, &cfg.filter)?, cfg.mu_water)?;
    Ok(LiResult { y_li, x_li })
}

#[derive(Debug, Clone)]
pub struct NmarResult {
    pub y_nmar: Sinogram,
    pub x_nmar: Image,
}

/// Prior-normalized interpolation: interpolate `y / y_tilde` across the
/// (dilated) trace, multiply back by `y_tilde` inside it, and keep the
/// measured bins outside it untouched.
pub fn nmar_correct(
    y: &Sinogram,
    tr: &Sinogram,
    y_tilde: &Sinogram,
    geom: &ProjectionGeometry,
    cfg: &BaselineConfig,
) -> Result<NmarResult> {
    if y.kind() != SinogramKind::Raw || y_tilde.kind() != SinogramKind::Raw {
        return Err(CtError::UnitMismatch(
            "nmar_correct expects raw measured and prior sinograms".into(),
        ));
    }
    if y.grid() != y_tilde.grid() {
        return Err(CtError::GridMismatch("measured and prior sinogram grids differ".into()));
    }
    let tr_eff = dilate_trace(tr, cfg.dilation_bins)?;
    let s = y.safe_div(y_tilde)?;
    let s_filled = interpolate_trace(&s, &tr_eff)?;
    let mut out = y.values().clone();
    for ((idx, o), (&sv, &ytv)) in out
        .indexed_iter_mut()
        .zip(s_filled.values().iter().zip(y_tilde.values().iter()))
    {
        if tr_eff.values()[idx] == 1.0 {
            *o = sv * ytv;
        }
    }
    let y_nmar = Sinogram::new(y.grid(), out, SinogramKind::Raw)?;
    let x_nmar = mu_to_hu(&fbp(&y_nmar, geom, &cfg.filter)?, cfg.mu_water)?;
    Ok(NmarResult { y_nmar, x_nmar })
}
