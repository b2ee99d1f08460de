//! Joint sinogram/image reconstruction by alternating proximal-gradient
//! stages.
//!
//! The solver minimizes, over a normalized sinogram `s_tilde` and an
//! attenuation image `x`,
//!
//! ```text
//! F(s_tilde, x) = |P x - y_tilde .* s_tilde|_F^2
//!               + alpha * |(1 - tr) .* (y_tilde .* s_tilde - y)|_F^2
//! ```
//!
//! where `P` is the forward projector, `y` the measured sinogram, `tr`
//! the metal trace, and `y_tilde` the projected prior used to normalize
//! the sinogram (`s = y_tilde .* s_tilde`). Each stage takes one
//! gradient-prox step in `s_tilde` (pointwise, since the quadratic is
//! diagonal in the sinogram) and one in `x` (one forward and one back
//! projection). Regularizers enter only through the proximal operators,
//! so the recorded objective is the quadratic above.
//!
//! Stage records keep every intermediate field so runs can be inspected
//! or serialized; see [`crate::io::save_stage_trace`].

use crate::consts::EPS_DIV;
use crate::error::{invalid, CtError, Result};
use crate::field::{hu_to_mu, Image, Sinogram, SinogramKind, Unit};
use crate::projector::{back_project, forward_project, operator_norm, ProjectionGeometry};
use crate::prox::{ProxDomain, ProxOperator};
use ndarray::{Array2, Zip};

/// Iterations of power iteration behind automatic stepsizes.
const POWER_ITERS: usize = 30;
/// Seed for the power-iteration start vector, fixed so every run of the
/// same geometry picks identical stepsizes.
const POWER_SEED: u64 = 0;
/// Default image-domain total-variation strength for corrected
/// reconstructions, in attenuation units per pixel. Chosen on the bundled
/// phantom suite: strong enough to suppress inpainting streaks, weak
/// enough to keep tissue edges.
pub const DEFAULT_TV_STRENGTH: f64 = 2e-3;
/// Default inner iterations of the total-variation proximal operator.
pub const DEFAULT_TV_ITERS: usize = 20;
/// A stage whose objective exceeds the previous one by this factor aborts.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Growth below this absolute level never counts as divergence, so a run
/// sitting at an exact fixed point is not tripped up by rounding noise.
const DIVERGENCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepsizes {
    /// eta1 = 0.9 / (2 max(y_tilde^2) (1 + alpha)), the reciprocal of the
    /// largest diagonal entry of the sinogram Hessian, and
    /// eta2 = 0.9 / |P|^2 with |P| estimated by power iteration. Both are
    /// small enough that every stage decreases the objective.
    Auto,
    Fixed { eta1: f64, eta2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Number of update stages; 0 records the initialization only.
    pub n_stages: usize,
    /// Weight of the measured-data term outside the trace.
    pub alpha: f64,
    pub stepsizes: Stepsizes,
    pub prox_s: ProxOperator,
    pub prox_x: ProxOperator,
    /// Water attenuation used to convert the warm-start image to
    /// attenuation units.
    pub mu_water: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_stages: 10,
            alpha: 0.5,
            stepsizes: Stepsizes::Auto,
            prox_s: ProxOperator::identity(ProxDomain::Sinogram),
            prox_x: ProxOperator::identity(ProxDomain::Image),
            mu_water: crate::consts::DEFAULT_MU_WATER,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if let Stepsizes::Fixed { eta1, eta2 } = self.stepsizes {
            if !(eta1.is_finite() && eta1 > 0.0 && eta2.is_finite() && eta2 > 0.0) {
                return Err(invalid(format!("stepsizes must be finite and > 0, got {eta1}, {eta2}")));
            }
        }
        if self.prox_s.domain != ProxDomain::Sinogram {
            return Err(invalid("prox_s must act on the sinogram domain"));
        }
        if self.prox_x.domain != ProxDomain::Image {
            return Err(invalid("prox_x must act on the image domain"));
        }
        self.prox_s.validate()?;
        self.prox_x.validate()?;
        if !(self.mu_water.is_finite() && self.mu_water > 0.0) {
            return Err(invalid(format!("mu_water must be finite and > 0, got {}", self.mu_water)));
        }
        Ok(())
    }
}

/// Initialization produced by the linear-interpolation baseline.
#[derive(Debug, Clone)]
pub struct WarmStart {
    /// Inpainted raw sinogram.
    pub y_li: Sinogram,
    /// Inpainted reconstruction in HU.
    pub x_li: Image,
}

impl WarmStart {
    pub fn new(y_li: Sinogram, x_li: Image) -> Result<Self> {
        if y_li.kind() != SinogramKind::Raw {
            return Err(CtError::UnitMismatch(format!("warm-start sinogram must be raw, got {:?}", y_li.kind())));
        }
        if x_li.unit() != Unit::Hu {
            return Err(CtError::UnitMismatch(format!("warm-start image must be in HU, got {:?}", x_li.unit())));
        }
        Ok(Self { y_li, x_li })
    }
}

impl From<&crate::baselines::LiResult> for WarmStart {
    fn from(li: &crate::baselines::LiResult) -> Self {
        Self { y_li: li.y_li.clone(), x_li: li.x_li.clone() }
    }
}

/// One record of the per-stage history. Stage 0 is the initialization.
#[derive(Debug, Clone)]
pub struct Stage {
    /// Normalized sinogram variable.
    pub s_tilde: Sinogram,
    /// Corrected sinogram `y_tilde .* s_tilde`.
    pub s: Sinogram,
    /// Attenuation image.
    pub x: Image,
    /// Quadratic objective at this stage.
    pub objective: f64,
    /// `|(1 - tr) .* (y_tilde .* s_tilde - y)|_F`, consistency with the
    /// measured bins outside the metal trace.
    pub trace_residual: f64,
}

#[derive(Debug, Clone)]
pub struct StageTrace {
    /// `n_stages + 1` records, initialization first.
    pub stages: Vec<Stage>,
    /// Stepsize actually used for the sinogram updates.
    pub eta1: f64,
    /// Stepsize actually used for the image updates.
    pub eta2: f64,
    /// Projector norm estimate behind `eta2`, when stepsizes were automatic.
    pub op_norm: Option<f64>,
}

impl StageTrace {
    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("a trace always holds the initialization stage")
    }
}

fn check_solver_inputs(
    y: &Sinogram,
    tr: &Sinogram,
    y_tilde: &Sinogram,
    geom: &ProjectionGeometry,
) -> Result<()> {
    if y.kind() != SinogramKind::Raw || y_tilde.kind() != SinogramKind::Raw {
        return Err(CtError::UnitMismatch(
            "measured and prior sinograms must both be raw line integrals".into(),
        ));
    }
    if tr.kind() != SinogramKind::Trace {
        return Err(CtError::UnitMismatch(format!("expected a trace sinogram, got {:?}", tr.kind())));
    }
    if y.grid() != geom.sinogram_grid() || tr.grid() != y.grid() || y_tilde.grid() != y.grid() {
        return Err(CtError::GridMismatch("solver sinogram grids differ".into()));
    }
    Ok(())
}

fn objective_from_values(
    px: &Array2<f64>,
    s_tilde: &Array2<f64>,
    y: &Array2<f64>,
    y_tilde: &Array2<f64>,
    tr: &Array2<f64>,
    alpha: f64,
) -> f64 {
    let mut data = 0.0;
    let mut meas = 0.0;
    Zip::from(px).and(s_tilde).and(y).and(y_tilde).and(tr).for_each(|&p, &st, &yv, &yt, &t| {
        let s = yt * st;
        let r = p - s;
        data += r * r;
        let m = (1.0 - t) * (s - yv);
        meas += m * m;
    });
    data + alpha * meas
}

fn trace_residual_from_values(
    s_tilde: &Array2<f64>,
    y: &Array2<f64>,
    y_tilde: &Array2<f64>,
    tr: &Array2<f64>,
) -> f64 {
    let mut sq = 0.0;
    Zip::from(s_tilde).and(y).and(y_tilde).and(tr).for_each(|&st, &yv, &yt, &t| {
        let m = (1.0 - t) * (yt * st - yv);
        sq += m * m;
    });
    sq.sqrt()
}

/// Objective `|P x - y_tilde .* s_tilde|^2 + alpha |(1-tr) .* (y_tilde .* s_tilde - y)|^2`.
pub fn objective(
    x: &Image,
    s_tilde: &Sinogram,
    y: &Sinogram,
    y_tilde: &Sinogram,
    tr: &Sinogram,
    alpha: f64,
    geom: &ProjectionGeometry,
) -> Result<f64> {
    check_solver_inputs(y, tr, y_tilde, geom)?;
    if s_tilde.grid() != y.grid() {
        return Err(CtError::GridMismatch("normalized sinogram grid differs".into()));
    }
    let px = forward_project(x, geom)?;
    Ok(objective_from_values(px.values(), s_tilde.values(), y.values(), y_tilde.values(), tr.values(), alpha))
}

/// Consistency of the corrected sinogram with the measured bins outside
/// the trace: `|(1 - tr) .* (y_tilde .* s_tilde - y)|_F`.
pub fn trace_residual(
    s_tilde: &Sinogram,
    y: &Sinogram,
    y_tilde: &Sinogram,
    tr: &Sinogram,
) -> Result<f64> {
    if s_tilde.grid() != y.grid() || y_tilde.grid() != y.grid() || tr.grid() != y.grid() {
        return Err(CtError::GridMismatch("sinogram grids differ".into()));
    }
    if tr.kind() != SinogramKind::Trace {
        return Err(CtError::UnitMismatch(format!("expected a trace sinogram, got {:?}", tr.kind())));
    }
    Ok(trace_residual_from_values(s_tilde.values(), y.values(), y_tilde.values(), tr.values()))
}

/// Sinogram update given the precomputed projection `px = P x_prev`. The
/// gradient step is pointwise:
///
/// ```text
/// s_hat = s_prev - eta1 * y_tilde .* [ (y_tilde .* s_prev - px)
///                  + alpha (1 - tr) .* (y_tilde .* s_prev - y) ]
/// ```
///
/// followed by `prox_s`. Bins where `y_tilde <= eps` carry no signal from
/// the prior, so the variable is held at zero there.
pub fn s_tilde_step_with_projection(
    s_prev: &Sinogram,
    px: &Sinogram,
    y: &Sinogram,
    y_tilde: &Sinogram,
    tr: &Sinogram,
    eta1: f64,
    alpha: f64,
    prox_s: &ProxOperator,
) -> Result<Sinogram> {
    if !(eta1.is_finite() && eta1 > 0.0) {
        return Err(invalid(format!("eta1 must be finite and > 0, got {eta1}")));
    }
    if s_prev.grid() != y.grid()
        || px.grid() != y.grid()
        || y_tilde.grid() != y.grid()
        || tr.grid() != y.grid()
    {
        return Err(CtError::GridMismatch("sinogram grids differ".into()));
    }
    let mut hat = s_prev.values().clone();
    Zip::from(&mut hat)
        .and(px.values())
        .and(y.values())
        .and(y_tilde.values())
        .and(tr.values())
        .for_each(|st, &p, &yv, &yt, &t| {
            let s = yt * *st;
            let grad = yt * ((s - p) + alpha * (1.0 - t) * (s - yv));
            *st -= eta1 * grad;
        });
    let hat = Sinogram::new(s_prev.grid(), hat, SinogramKind::Normalized)?;
    let mut out = prox_s.apply_sinogram(&hat)?;
    let mut vals = out.values().clone();
    let mut touched = false;
    Zip::from(&mut vals).and(y_tilde.values()).for_each(|v, &yt| {
        if yt.abs() <= EPS_DIV && *v != 0.0 {
            *v = 0.0;
            touched = true;
        }
    });
    if touched {
        out = Sinogram::new(s_prev.grid(), vals, SinogramKind::Normalized)?;
    }
    Ok(out)
}

/// Sinogram update that projects `x_prev` itself. Prefer
/// [`s_tilde_step_with_projection`] inside loops that already have `P x`.
#[allow(clippy::too_many_arguments)]
pub fn s_tilde_step(
    s_prev: &Sinogram,
    x_prev: &Image,
    y: &Sinogram,
    y_tilde: &Sinogram,
    tr: &Sinogram,
    eta1: f64,
    alpha: f64,
    prox_s: &ProxOperator,
    geom: &ProjectionGeometry,
) -> Result<Sinogram> {
    let px = forward_project(x_prev, geom)?;
    s_tilde_step_with_projection(s_prev, &px, y, y_tilde, tr, eta1, alpha, prox_s)
}

/// Image update: one gradient step on `|P x - y_tilde .* s_tilde|^2`
/// followed by `prox_x`.
pub fn x_step(
    x_prev: &Image,
    s_tilde_new: &Sinogram,
    y_tilde: &Sinogram,
    eta2: f64,
    prox_x: &ProxOperator,
    geom: &ProjectionGeometry,
) -> Result<Image> {
    let px = forward_project(x_prev, geom)?;
    x_step_with_projection(x_prev, &px, s_tilde_new, y_tilde, eta2, prox_x, geom)
}

fn x_step_with_projection(
    x_prev: &Image,
    px: &Sinogram,
    s_tilde_new: &Sinogram,
    y_tilde: &Sinogram,
    eta2: f64,
    prox_x: &ProxOperator,
    geom: &ProjectionGeometry,
) -> Result<Image> {
    if !(eta2.is_finite() && eta2 > 0.0) {
        return Err(invalid(format!("eta2 must be finite and > 0, got {eta2}")));
    }
    if s_tilde_new.grid() != px.grid() || y_tilde.grid() != px.grid() {
        return Err(CtError::GridMismatch("sinogram grids differ".into()));
    }
    let mut residual = px.values().clone();
    Zip::from(&mut residual)
        .and(s_tilde_new.values())
        .and(y_tilde.values())
        .for_each(|r, &st, &yt| *r -= yt * st);
    let residual = Sinogram::new(px.grid(), residual, SinogramKind::Raw)?;
    let grad = back_project(&residual, geom)?;
    let hat = x_prev.values() - &(eta2 * grad.values());
    let hat = Image::new(x_prev.grid(), hat, x_prev.unit())?;
    prox_x.apply_image(&hat)
}

fn resolve_stepsizes(
    cfg: &SolverConfig,
    y_tilde: &Sinogram,
    geom: &ProjectionGeometry,
) -> Result<(f64, f64, Option<f64>)> {
    match cfg.stepsizes {
        Stepsizes::Fixed { eta1, eta2 } => Ok((eta1, eta2, None)),
        Stepsizes::Auto => {
            let max_sq = y_tilde.values().iter().fold(0.0f64, |m, &v| m.max(v * v));
            if max_sq <= 0.0 {
                return Err(invalid("automatic stepsizes need a nonzero prior sinogram"));
            }
            let eta1 = 0.9 / (2.0 * max_sq * (1.0 + cfg.alpha));
            let norm = operator_norm(geom, POWER_ITERS, POWER_SEED)?;
            let eta2 = 0.9 / (norm * norm);
            Ok((eta1, eta2, Some(norm)))
        }
    }
}

fn run_impl(
    y: &Sinogram,
    tr: &Sinogram,
    y_tilde: &Sinogram,
    cfg: &SolverConfig,
    geom: &ProjectionGeometry,
    init: &WarmStart,
) -> Result<StageTrace> {
    cfg.validate()?;
    check_solver_inputs(y, tr, y_tilde, geom)?;
    if init.y_li.kind() != SinogramKind::Raw || init.x_li.unit() != Unit::Hu {
        return Err(CtError::UnitMismatch("warm start must hold a raw sinogram and an HU image".into()));
    }
    if init.y_li.grid() != y.grid() || init.x_li.grid() != geom.image_grid() {
        return Err(CtError::GridMismatch("warm-start grids differ from the problem grids".into()));
    }
    if !y_tilde.values().iter().any(|&v| v.abs() > EPS_DIV) {
        return Err(invalid("prior sinogram is zero everywhere; nothing to normalize"));
    }
    let (eta1, eta2, op_norm) = resolve_stepsizes(cfg, y_tilde, geom)?;

    let mut s_tilde = init.y_li.safe_div(y_tilde)?;
    let mut x = hu_to_mu(&init.x_li, cfg.mu_water)?;
    let mut px = forward_project(&x, geom)?;

    let mut stages = Vec::with_capacity(cfg.n_stages + 1);
    let record = |s_tilde: &Sinogram, x: &Image, px: &Sinogram| -> Result<Stage> {
        let s = y_tilde.mul_elem(s_tilde)?;
        let objective = objective_from_values(
            px.values(),
            s_tilde.values(),
            y.values(),
            y_tilde.values(),
            tr.values(),
            cfg.alpha,
        );
        let trace_residual =
            trace_residual_from_values(s_tilde.values(), y.values(), y_tilde.values(), tr.values());
        Ok(Stage { s_tilde: s_tilde.clone(), s, x: x.clone(), objective, trace_residual })
    };

    let stage0 = record(&s_tilde, &x, &px)?;
    if !stage0.objective.is_finite() {
        return Err(CtError::SolverDiverged { stage: 0, reason: "non-finite objective at initialization".into() });
    }
    let mut prev_objective = stage0.objective;
    stages.push(stage0);

    for n in 1..=cfg.n_stages {
        s_tilde = s_tilde_step_with_projection(&s_tilde, &px, y, y_tilde, tr, eta1, cfg.alpha, &cfg.prox_s)?;
        x = x_step_with_projection(&x, &px, &s_tilde, y_tilde, eta2, &cfg.prox_x, geom)?;
        px = forward_project(&x, geom)?;
        let stage = record(&s_tilde, &x, &px)?;
        if !stage.objective.is_finite() {
            return Err(CtError::SolverDiverged { stage: n, reason: "non-finite objective".into() });
        }
        if stage.objective > DIVERGENCE_FACTOR * prev_objective && stage.objective > DIVERGENCE_FLOOR {
            return Err(CtError::SolverDiverged {
                stage: n,
                reason: format!(
                    "objective grew from {prev_objective:.6e} to {:.6e}; the stepsizes are too large",
                    stage.objective
                ),
            });
        }
        prev_objective = stage.objective;
        stages.push(stage);
    }
    Ok(StageTrace { stages, eta1, eta2, op_norm })
}

/// Runs the full normalized solver, warm-started from the
/// linear-interpolation baseline.
pub fn run(
    y: &Sinogram,
    tr: &Sinogram,
    y_tilde: &Sinogram,
    cfg: &SolverConfig,
    geom: &ProjectionGeometry,
    init: &WarmStart,
) -> Result<StageTrace> {
    run_impl(y, tr, y_tilde, cfg, geom, init)
}

/// Runs the solver without prior normalization. Identical to [`run`] with
/// a prior sinogram of all ones: the corrected sinogram is the variable
/// itself, so the update collapses to
/// `s_hat = s_prev - eta1 [(s_prev - P x) + alpha (1 - tr) .* (s_prev - y)]`.
pub fn run_degraded(
    y: &Sinogram,
    tr: &Sinogram,
    cfg: &SolverConfig,
    geom: &ProjectionGeometry,
    init: &WarmStart,
) -> Result<StageTrace> {
    let ones = Sinogram::constant(y.grid(), 1.0, SinogramKind::Raw)?;
    run_impl(y, tr, &ones, cfg, geom, init)
}

/// Weights for [`training_objective`]: 0.1 for every stage except the
/// last, which gets 1.0.
pub fn default_betas(n_stages: usize) -> Vec<f64> {
    let mut betas = vec![0.1; n_stages + 1];
    *betas.last_mut().expect("n_stages + 1 >= 1") = 1.0;
    betas
}

/// Supervised loss of a recorded run against ground truth: a weighted sum
/// of per-stage image errors outside the metal mask plus `gamma` times
/// per-stage corrected-sinogram errors (initialization excluded from the
/// sinogram term).
pub fn training_objective(
    trace: &StageTrace,
    x_gt: &Image,
    y_gt: &Sinogram,
    metal: &Image,
    betas: &[f64],
    gamma: f64,
) -> Result<f64> {
    if betas.len() != trace.stages.len() {
        return Err(invalid(format!(
            "expected {} stage weights, got {}",
            trace.stages.len(),
            betas.len()
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if metal.unit() != Unit::Binary {
        return Err(CtError::UnitMismatch(format!("metal mask must be binary, got {:?}", metal.unit())));
    }
    if y_gt.kind() != SinogramKind::Raw {
        return Err(CtError::UnitMismatch(format!("ground-truth sinogram must be raw, got {:?}", y_gt.kind())));
    }
    let mut total = 0.0;
    for (n, (stage, &beta)) in trace.stages.iter().zip(betas).enumerate() {
        if stage.x.grid() != x_gt.grid() || metal.grid() != x_gt.grid() {
            return Err(CtError::GridMismatch("stage and ground-truth image grids differ".into()));
        }
        if stage.x.unit() != x_gt.unit() {
            return Err(CtError::UnitMismatch(format!(
                "stage images are {:?} but ground truth is {:?}",
                stage.x.unit(),
                x_gt.unit()
            )));
        }
        if stage.s.grid() != y_gt.grid() {
            return Err(CtError::GridMismatch("stage and ground-truth sinogram grids differ".into()));
        }
        let mut img_sq = 0.0;
        Zip::from(stage.x.values()).and(x_gt.values()).and(metal.values()).for_each(
            |&xv, &gv, &mv| {
                let r = (1.0 - mv) * (xv - gv);
                img_sq += r * r;
            },
        );
        total += beta * img_sq;
        if n >= 1 {
            let mut sino_sq = 0.0;
            Zip::from(stage.s.values()).and(y_gt.values()).for_each(|&sv, &gv| {
                let r = sv - gv;
                sino_sq += r * r;
            });
            total += gamma * beta * sino_sq;
        }
    }
    Ok(total)
}
