//! Three-stage training: pretrain on synthetic pairs, reflow on pseudo
//! pairs extracted from real hazy images, distillation under degradation
//! augmentation.
//!
//! Training is single-threaded and fully determined by (seed, config,
//! dataset); the loss log and the final parameters are bit-stable across
//! runs.

use hazeflow_core::asm::{compose, oracle_velocity, HazePair};
use hazeflow_core::dcp::{dark_channel, estimate_light, estimate_transmission, DcpConfig};
use hazeflow_core::image::{AtmosphericLight, ImageRGB, ScalarField};
use hazeflow_core::mcbm::{degrade, DegradeSwitches, HazeParams};
use hazeflow_core::rng::Rng;
use hazeflow_core::solver::VelocityField;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_perc_node, one_step_node};
use crate::net::{field_to_node, image_to_node, ToyFlowNet};
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Reflow,
    Distill,
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "reflow" => Ok(Stage::Reflow),
            "distill" => Ok(Stage::Distill),
            other => Err(format!("unknown stage '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Weight of the transmission refinement loss.
    pub w_transmission: f64,
    pub seed: u64,
    /// Gamma correction range for Reflow brightness augmentation.
    pub gamma_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            iterations: 2000,
            lr_start: 2e-4,
            lr_end: 1e-6,
            batch_size: 1,
            patch_size: 32,
            w_transmission: 0.5,
            seed: 0,
            gamma_range: (0.7, 1.4),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr_start < self.lr_end || self.lr_end <= 0.0 {
            return Err(Error::InvalidSetup(
                "learning rate schedule requires lr_start >= lr_end > 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSetup("batch size must be >= 1".into()));
        }
        if self.patch_size < 8 {
            return Err(Error::InvalidSetup("patch size must be >= 8".into()));
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_der: f64,
    pub l_perc: f64,
    pub l_t: f64,
    pub total: f64,
    pub lr: f64,
}

/// Render a loss log as CSV with header `iter,l_der,l_perc,l_t,total,lr`.
pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("iter,l_der,l_perc,l_t,total,lr\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.l_der, r.l_perc, r.l_t, r.total, r.lr
        ));
    }
    out
}

/// Cosine-annealed learning rate over the run.
pub fn cosine_lr(iteration: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let t = iteration as f64 / total as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with the usual defaults (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn crop_origin(rng: &mut Rng, h: usize, w: usize, patch: usize) -> (usize, usize, usize) {
    let size = patch.min(h).min(w);
    let y0 = if h > size { rng.below(h - size + 1) } else { 0 };
    let x0 = if w > size { rng.below(w - size + 1) } else { 0 };
    (y0, x0, size)
}

/// A point on the straight path of a synthetic pair: per pixel
/// `tau = T + u*(1 - T)` and `state = tau*J + (1 - tau)*A`.
pub fn sample_trajectory_point(pair: &HazePair, u: f64) -> (ImageRGB, ScalarField) {
    let tau = pair.transmission.map(|t| t + u as f32 * (1.0 - t));
    let state = compose(&pair.clean, &tau, &pair.light).expect("pair dims agree");
    (state, tau)
}

struct StepSums {
    l_der: f64,
    l_perc: f64,
    l_t: f64,
    grads: Vec<f64>,
}

/// Pretrain on synthetic pairs with A pinned to (1,1,1).
///
/// Per iteration: sample a pair and u ~ U[0,1], build the trajectory point,
/// regress the velocity head onto `J - A`, the perceptual proxy onto the
/// one-step estimate, and the refined transmission onto the trajectory's own
/// tau map (the true transmission of the state the net sees).
pub fn pretrain(
    net: &mut ToyFlowNet,
    dataset: &[HazePair],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidSetup(
            "pretrain needs a non-empty dataset".into(),
        ));
    }
    let white = AtmosphericLight::Global([1.0, 1.0, 1.0]);
    let pairs: Vec<HazePair> = dataset
        .iter()
        .map(|p| {
            if p.light == white {
                Ok(p.clone())
            } else {
                p.recomposed_with_light(white.clone()).map_err(Error::Core)
            }
        })
        .collect::<Result<_>>()?;

    let mut params = net.params_flat();
    let mut adam = Adam::new(params.len());
    let mut log = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let lr = cosine_lr(iteration, cfg.iterations, cfg.lr_start, cfg.lr_end);
        let mut sums = StepSums {
            l_der: 0.0,
            l_perc: 0.0,
            l_t: 0.0,
            grads: vec![0.0; params.len()],
        };

        for _ in 0..cfg.batch_size {
            let pair = &pairs[rng.below(pairs.len())];
            let u = rng.next_f64();
            let (y0, x0, size) =
                crop_origin(rng, pair.clean.height(), pair.clean.width(), cfg.patch_size);
            let clean = pair.clean.crop(y0, x0, size, size);
            let t_true = pair.transmission.crop(y0, x0, size, size);

            let tau = t_true.map(|t| t + u as f32 * (1.0 - t));
            let state = compose(&clean, &tau, &pair.light).expect("crop dims agree");
            let target_v = oracle_velocity(&clean, &pair.light).expect("crop dims agree");

            let mut tape = Tape::new();
            let state_node = image_to_node(&mut tape, &state, false);
            let tau_node = field_to_node(&mut tape, &tau, false);
            let out = net.forward_on(&mut tape, state_node, tau_node, true);

            let target_v_node = image_to_node(&mut tape, &target_v, false);
            let l_der = tape.mse(out.velocity, target_v_node);

            let pred = one_step_node(&mut tape, state_node, out.velocity, out.t_refined);
            let clean_node = image_to_node(&mut tape, &clean, false);
            let l_perc = loss_perc_node(&mut tape, pred, clean_node);

            let l_t = tape.mse(out.t_refined, tau_node);

            let der_perc = tape.add(l_der, l_perc);
            let weighted_t = tape.mul_scalar(l_t, cfg.w_transmission);
            let total = tape.add(der_perc, weighted_t);

            let total_value = tape.scalar_value(total);
            if !total_value.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    loss: total_value,
                });
            }
            tape.backward(total);

            sums.l_der += tape.scalar_value(l_der);
            sums.l_perc += tape.scalar_value(l_perc);
            sums.l_t += tape.scalar_value(l_t);
            for (acc, g) in sums.grads.iter_mut().zip(net.grads_flat(&tape, &out)) {
                *acc += g;
            }
        }

        let inv_batch = 1.0 / cfg.batch_size as f64;
        for g in &mut sums.grads {
            *g *= inv_batch;
        }
        adam.step(&mut params, &sums.grads, lr);
        net.set_params_flat(&params);

        let l_der = sums.l_der * inv_batch;
        let l_perc = sums.l_perc * inv_batch;
        let l_t = sums.l_t * inv_batch;
        log.push(LossRecord {
            iteration,
            l_der,
            l_perc,
            l_t,
            total: l_der + l_perc + cfg.w_transmission * l_t,
            lr,
        });
    }
    Ok(log)
}

/// Per-image inputs shared by Reflow and Distillation.
struct PreparedHazy {
    image: ImageRGB,
    t_dcp: ScalarField,
}

fn prepare_hazy_set(hazy_set: &[ImageRGB], dcp: &DcpConfig) -> Result<Vec<PreparedHazy>> {
    if hazy_set.is_empty() {
        return Err(Error::InvalidSetup("need at least one hazy image".into()));
    }
    hazy_set
        .iter()
        .map(|img| {
            let dark = dark_channel(img, dcp.patch_radius);
            let light = estimate_light(img, &dark, dcp.top_fraction)?;
            let t_dcp = estimate_transmission(img, &light, dcp)?;
            Ok(PreparedHazy {
                image: img.clone(),
                t_dcp,
            })
        })
        .collect()
}

/// Reflow: adapt a copy of the pretrained net to (held-out or real) hazy
/// images via pseudo pairs from the frozen teacher.
///
/// Per iteration: one-step pseudo pair (J, A) from `net_theta`, a random
/// gamma correction of the hazy state, and a trajectory point between the
/// gamma-corrected hazy image and the pseudo clean along the refined
/// transmission. The target velocity `J - A` varies spatially. Transmission
/// refinement is disabled (no ground truth exists here).
pub fn reflow(
    net_theta: &dyn VelocityField,
    net_phi: &mut ToyFlowNet,
    real_hazy: &[ImageRGB],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let prepared = prepare_hazy_set(real_hazy, &DcpConfig::default())?;

    let mut params = net_phi.params_flat();
    let mut adam = Adam::new(params.len());
    let mut log = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let lr = cosine_lr(iteration, cfg.iterations, cfg.lr_start, cfg.lr_end);
        let mut sums = StepSums {
            l_der: 0.0,
            l_perc: 0.0,
            l_t: 0.0,
            grads: vec![0.0; params.len()],
        };

        for _ in 0..cfg.batch_size {
            let sample = &prepared[rng.below(prepared.len())];
            let (y0, x0, size) = crop_origin(
                rng,
                sample.image.height(),
                sample.image.width(),
                cfg.patch_size,
            );
            let hazy = sample.image.crop(y0, x0, size, size);
            let t_dcp = sample.t_dcp.crop(y0, x0, size, size);
            let gamma = rng.uniform(cfg.gamma_range.0, cfg.gamma_range.1) as f32;
            let u = rng.next_f64() as f32;

            // Frozen teacher: pseudo clean/light and the refined map that
            // parameterizes the path.
            let (v0, t_base) = net_theta.evaluate(&hazy, &t_dcp).map_err(Error::Core)?;
            let mut pseudo_clean = hazy.clone();
            let mut pseudo_light = hazy.clone();
            for idx in 0..t_base.data().len() {
                let t = t_base.data()[idx];
                for c in 0..3 {
                    let i = hazy.data()[idx * 3 + c];
                    let v = v0.data()[idx * 3 + c];
                    pseudo_clean.data_mut()[idx * 3 + c] = (i + (1.0 - t) * v).max(0.0);
                    pseudo_light.data_mut()[idx * 3 + c] = (i - t * v).max(0.0);
                }
            }

            let hazy_gamma = hazy.powf(gamma);
            let mut state = hazy_gamma.clone();
            for (s, &j) in state.data_mut().iter_mut().zip(pseudo_clean.data()) {
                *s = (1.0 - u) * *s + u * j;
            }
            let tau = t_base.map(|t| t + u * (1.0 - t));
            let mut target_v = pseudo_clean.clone();
            for (t, &a) in target_v.data_mut().iter_mut().zip(pseudo_light.data()) {
                *t -= a;
            }

            let mut tape = Tape::new();
            let state_node = image_to_node(&mut tape, &state, false);
            let tau_node = field_to_node(&mut tape, &tau, false);
            let out = net_phi.forward_on(&mut tape, state_node, tau_node, true);

            let target_node = image_to_node(&mut tape, &target_v, false);
            let l_der = tape.mse(out.velocity, target_node);
            let pred = one_step_node(&mut tape, state_node, out.velocity, out.t_refined);
            let pseudo_node = image_to_node(&mut tape, &pseudo_clean, false);
            let l_perc = loss_perc_node(&mut tape, pred, pseudo_node);
            let total = tape.add(l_der, l_perc);

            let total_value = tape.scalar_value(total);
            if !total_value.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    loss: total_value,
                });
            }
            tape.backward(total);

            sums.l_der += tape.scalar_value(l_der);
            sums.l_perc += tape.scalar_value(l_perc);
            for (acc, g) in sums.grads.iter_mut().zip(net_phi.grads_flat(&tape, &out)) {
                *acc += g;
            }
        }

        let inv_batch = 1.0 / cfg.batch_size as f64;
        for g in &mut sums.grads {
            *g *= inv_batch;
        }
        adam.step(&mut params, &sums.grads, lr);
        net_phi.set_params_flat(&params);

        let l_der = sums.l_der * inv_batch;
        let l_perc = sums.l_perc * inv_batch;
        log.push(LossRecord {
            iteration,
            l_der,
            l_perc,
            l_t: 0.0,
            total: l_der + l_perc,
            lr,
        });
    }
    Ok(log)
}

/// Distillation: the student matches the frozen teacher's one-step output
/// while seeing degraded inputs (gamma + noise + block quantization).
pub fn distill(
    net_teacher: &dyn VelocityField,
    net_student: &mut ToyFlowNet,
    hazy_set: &[ImageRGB],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let prepared = prepare_hazy_set(hazy_set, &DcpConfig::default())?;
    let degrade_params = HazeParams {
        beta: 0.0,
        alpha: 0.0,
        light_rgb: [1.0; 3],
        mcbm_iterations: 1,
        gaussian_sigma: 15.0,
        seed: 0,
        degrade: DegradeSwitches::all(true),
    };

    let mut params = net_student.params_flat();
    let mut adam = Adam::new(params.len());
    let mut log = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let lr = cosine_lr(iteration, cfg.iterations, cfg.lr_start, cfg.lr_end);
        let mut sums = StepSums {
            l_der: 0.0,
            l_perc: 0.0,
            l_t: 0.0,
            grads: vec![0.0; params.len()],
        };

        for _ in 0..cfg.batch_size {
            let sample = &prepared[rng.below(prepared.len())];
            let (y0, x0, size) = crop_origin(
                rng,
                sample.image.height(),
                sample.image.width(),
                cfg.patch_size,
            );
            let hazy = sample.image.crop(y0, x0, size, size);
            let t_dcp = sample.t_dcp.crop(y0, x0, size, size);

            let (vt, trt) = net_teacher.evaluate(&hazy, &t_dcp).map_err(Error::Core)?;
            let teacher_out = crate::loss::one_step_estimate(&hazy, &vt, &trt);

            let degraded = degrade(&hazy, &degrade_params, rng);

            let mut tape = Tape::new();
            let input_node = image_to_node(&mut tape, &degraded, false);
            let t_node = field_to_node(&mut tape, &t_dcp, false);
            let out = net_student.forward_on(&mut tape, input_node, t_node, true);
            let student_out = one_step_node(&mut tape, input_node, out.velocity, out.t_refined);
            let teacher_node = image_to_node(&mut tape, &teacher_out, false);
            let loss = loss_perc_node(&mut tape, student_out, teacher_node);

            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    loss: loss_value,
                });
            }
            tape.backward(loss);

            sums.l_perc += loss_value;
            for (acc, g) in sums
                .grads
                .iter_mut()
                .zip(net_student.grads_flat(&tape, &out))
            {
                *acc += g;
            }
        }

        let inv_batch = 1.0 / cfg.batch_size as f64;
        for g in &mut sums.grads {
            *g *= inv_batch;
        }
        adam.step(&mut params, &sums.grads, lr);
        net_student.set_params_flat(&params);

        let l_perc = sums.l_perc * inv_batch;
        log.push(LossRecord {
            iteration,
            l_der: 0.0,
            l_perc,
            l_t: 0.0,
            total: l_perc,
            lr,
        });
    }
    Ok(log)
}
