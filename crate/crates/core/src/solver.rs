//! Transmission-aware Euler solver over a pluggable velocity field.
//!
//! The dehazing trajectory is parameterized by per-pixel transmission: the
//! solver advances each pixel from its (refined) transmission to 1 in N
//! equal per-pixel steps of size `(1 - T_refined)/N`. Under the analytic
//! oracle the path is exactly straight, so any step count lands on the clean
//! image; a learned field is re-evaluated at each step by default.

use std::time::Instant;

use crate::asm::oracle_velocity;
use crate::error::{Error, Result};
use crate::image::{AtmosphericLight, ImageRGB, ScalarField};
use crate::metrics::{psnr, ssim};

/// Joint velocity / refined-transmission evaluator.
///
/// Implementations must return outputs matching the input dimensions with
/// the refined transmission in [0.05, 1], and must be safe for concurrent
/// read-only evaluation.
pub trait VelocityField: Sync {
    fn evaluate(&self, image: &ImageRGB, t_in: &ScalarField) -> Result<(ImageRGB, ScalarField)>;
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn evaluate(&self, image: &ImageRGB, t_in: &ScalarField) -> Result<(ImageRGB, ScalarField)> {
        (**self).evaluate(image, t_in)
    }
}

/// Exact velocity field for synthetic pairs: `V = J - A`, refined
/// transmission = ground truth clamped into [0.05, 1].
pub struct OracleField {
    velocity: ImageRGB,
    t_true: ScalarField,
}

impl OracleField {
    pub fn new(clean: &ImageRGB, light: &AtmosphericLight, t_true: &ScalarField) -> Result<Self> {
        let velocity = oracle_velocity(clean, light)?;
        Ok(OracleField {
            velocity,
            t_true: t_true.map(|v| v.clamp(0.05, 1.0)),
        })
    }
}

impl VelocityField for OracleField {
    fn evaluate(&self, image: &ImageRGB, _t_in: &ScalarField) -> Result<(ImageRGB, ScalarField)> {
        if !image.same_dims(&self.velocity) {
            return Err(Error::dims(
                format!("{}x{}", self.velocity.height(), self.velocity.width()),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Ok((self.velocity.clone(), self.t_true.clone()))
    }
}

/// Solver options; `n` is the number of Euler steps.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub n: usize,
    /// Re-evaluate the field at every step (true ODE integration). With a
    /// straight path the frozen mode is equivalent; N = 1 is identical
    /// either way.
    pub refresh_velocity: bool,
    /// Record intermediate image states in the trace.
    pub capture_states: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            n: 1,
            refresh_velocity: true,
            capture_states: false,
        }
    }
}

impl SolveOptions {
    pub fn with_steps(n: usize) -> Self {
        SolveOptions {
            n,
            ..Default::default()
        }
    }
}

/// One record per Euler step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub max_update: f32,
    pub state: Option<ImageRGB>,
}

/// Trace of a solve: exactly one record per requested step.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    pub steps: Vec<StepRecord>,
}

/// Integrate the dehazing ODE.
///
/// The field is evaluated once at `(hazy, t_in)`; the refined transmission
/// from that first evaluation fixes the per-pixel step size `(1 - T)/N` and
/// the starting `tau`. In refresh mode the velocity is re-evaluated at each
/// subsequent step with the advanced per-pixel `tau` map. The final image is
/// clamped to >= 0.
pub fn solve(
    hazy: &ImageRGB,
    t_in: &ScalarField,
    field: &dyn VelocityField,
    options: &SolveOptions,
) -> Result<(ImageRGB, SolveTrace)> {
    if options.n == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    if !t_in.matches_image(hazy) {
        return Err(Error::dims(
            format!("{}x{}", hazy.height(), hazy.width()),
            format!("{}x{}", t_in.height(), t_in.width()),
        ));
    }

    let (mut velocity, t_refined) = field.evaluate(hazy, t_in)?;
    check_field_output(hazy, &velocity, &t_refined)?;

    let n = options.n;
    let step: Vec<f32> = t_refined
        .data()
        .iter()
        .map(|&t| (1.0 - t) / n as f32)
        .collect();
    let mut tau = t_refined.clone();
    let mut state = hazy.clone();
    let mut trace = SolveTrace::default();

    for k in 0..n {
        if k > 0 && options.refresh_velocity {
            let (v, _) = field.evaluate(&state, &tau)?;
            check_field_output(hazy, &v, &t_refined)?;
            velocity = v;
        }
        let mut max_update = 0.0f32;
        for idx in 0..step.len() {
            let delta = step[idx];
            for c in 0..3 {
                let update = delta * velocity.data()[idx * 3 + c];
                state.data_mut()[idx * 3 + c] += update;
                max_update = max_update.max(update.abs());
            }
            tau.data_mut()[idx] += delta;
        }
        trace.steps.push(StepRecord {
            index: k,
            max_update,
            state: options.capture_states.then(|| state.clone()),
        });
    }
    state.clamp_non_negative();
    Ok((state, trace))
}

fn check_field_output(input: &ImageRGB, velocity: &ImageRGB, t: &ScalarField) -> Result<()> {
    if !velocity.same_dims(input) || !t.matches_image(input) {
        return Err(Error::dims(
            format!("{}x{}", input.height(), input.width()),
            format!(
                "velocity {}x{}, transmission {}x{}",
                velocity.height(),
                velocity.width(),
                t.height(),
                t.width()
            ),
        ));
    }
    Ok(())
}

/// One-step pseudo pair for Reflow: pseudo clean `J = I + (1-T)*V` and
/// pseudo atmospheric light `A = I - T*V`, both clamped to >= 0, with T the
/// field's refined transmission.
pub fn one_step_pair(
    hazy: &ImageRGB,
    t_in: &ScalarField,
    field: &dyn VelocityField,
) -> Result<(ImageRGB, ImageRGB)> {
    let (velocity, t_refined) = field.evaluate(hazy, t_in)?;
    check_field_output(hazy, &velocity, &t_refined)?;
    let mut pseudo_clean = hazy.clone();
    let mut pseudo_light = hazy.clone();
    for idx in 0..t_refined.data().len() {
        let t = t_refined.data()[idx];
        for c in 0..3 {
            let i = hazy.data()[idx * 3 + c];
            let v = velocity.data()[idx * 3 + c];
            pseudo_clean.data_mut()[idx * 3 + c] = (i + (1.0 - t) * v).max(0.0);
            pseudo_light.data_mut()[idx * 3 + c] = (i - t * v).max(0.0);
        }
    }
    Ok((pseudo_clean, pseudo_light))
}

/// One row of a step sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub ms: f64,
}

/// Run `solve` for each step count and score against a reference.
pub fn step_sweep(
    hazy: &ImageRGB,
    t_in: &ScalarField,
    field: &dyn VelocityField,
    n_values: &[usize],
    reference: &ImageRGB,
) -> Result<Vec<SweepRow>> {
    if n_values.is_empty() {
        return Err(Error::InvalidArgument(
            "step sweep needs at least one N".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let start = Instant::now();
        let (dehazed, _) = solve(hazy, t_in, field, &SolveOptions::with_steps(n))?;
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        rows.push(SweepRow {
            n,
            psnr: psnr(&dehazed, reference)?,
            ssim: ssim(&dehazed, reference)?,
            ms,
        });
    }
    Ok(rows)
}

/// Render sweep rows as CSV with header `N,psnr,ssim,ms`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("N,psnr,ssim,ms\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            row.n, row.psnr, row.ssim, row.ms
        ));
    }
    out
}
