//! CT metal artifact reduction toolkit.
//!
//! The crate provides the pieces of a classical MAR pipeline on 2-D
//! parallel-beam geometry: an exact ray-tracing projector with matched
//! adjoint and filtered back-projection, a polychromatic artifact
//! simulator, sinogram-inpainting baselines (linear interpolation and
//! prior-normalized interpolation), and an iterative dual-domain solver
//! that alternates proximal gradient steps on a normalized sinogram and on
//! the image.
//!
//! All arrays are `f64` internally; file I/O uses little-endian `f32`.
//! Every routine is deterministic for a fixed seed, independent of thread
//! count.

pub mod baselines;
pub mod error;
pub mod fbp;
pub mod field;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod prior;
pub mod projector;
pub mod prox;
pub mod simulate;
pub mod solver;

/// Crate-wide numeric conventions.
pub mod consts {
    /// Divisions treat denominators with `|b| <= EPS_DIV` as zero.
    pub const EPS_DIV: f64 = 1e-8;
    /// Linear attenuation of water (1/length unit) used for HU conversion
    /// unless a caller overrides it.
    pub const DEFAULT_MU_WATER: f64 = 0.192;
    /// Upper bound for prior weight maps; loaded maps are clipped here.
    pub const WEIGHT_MAX: f64 = 2.0;
    /// CT number assigned to air.
    pub const HU_AIR: f64 = -1000.0;
    /// CT number of metal inserts in simulated phantoms.
    pub const DEFAULT_METAL_HU: f64 = 3000.0;
    /// Peak value for PSNR after shifting HU by +1000 and clamping to
    /// `[0, 4096]`.
    pub const PSNR_PEAK_HU: f64 = 4096.0;
}

pub use error::{CtError, Result};
pub use field::{hu_to_mu, mu_to_hu, Image, Sinogram, SinogramKind, Unit};
pub use grid::{ImageGrid, SinogramGrid};
