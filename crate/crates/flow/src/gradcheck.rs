//! Finite-difference verification of the tape gradients.
//!
//! Central differences with h = 1e-3 on every parameter, evaluated in f64.
//! The returned figure is the maximum relative error over parameters whose
//! analytic gradient exceeds 1e-6 in magnitude.

use hazeflow_core::image::{ImageRGB, ScalarField};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{loss_perc_node, one_step_node};
use crate::net::{field_to_node, image_to_node, ToyFlowNet};
use crate::tape::Tape;

/// Which loss path to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelector {
    Der,
    T,
    Perc,
}

pub const FD_STEP: f64 = 1e-3;

/// Deterministic targets derived from the input keep the check reproducible
/// without extra arguments: a signed affine image for the velocity, a
/// clamped luma for the transmission, and a contrast flip for the
/// perceptual path.
fn velocity_target(input: &ImageRGB) -> ImageRGB {
    input.map(|v| 0.3 - 0.5 * v)
}

fn transmission_target(input: &ImageRGB) -> ScalarField {
    input.luma().map(|v| v.clamp(0.1, 0.9))
}

fn perceptual_target(input: &ImageRGB) -> ImageRGB {
    input.map(|v| 0.9 - 0.6 * v)
}

fn loss_for_params(
    net: &ToyFlowNet,
    params: &[f64],
    input: &ImageRGB,
    t_map: &ScalarField,
    selector: LossSelector,
) -> f64 {
    let mut probe = net.clone();
    probe.set_params_flat(params);
    let mut tape = Tape::new();
    let img = image_to_node(&mut tape, input, false);
    let t_in = field_to_node(&mut tape, t_map, false);
    let out = probe.forward_on(&mut tape, img, t_in, false);
    let loss = match selector {
        LossSelector::Der => {
            let target = velocity_target(input);
            let target_node = image_to_node(&mut tape, &target, false);
            tape.mse(out.velocity, target_node)
        }
        LossSelector::T => {
            let target = transmission_target(input);
            let target_node = field_to_node(&mut tape, &target, false);
            tape.mse(out.t_refined, target_node)
        }
        LossSelector::Perc => {
            let pred = one_step_node(&mut tape, img, out.velocity, out.t_refined);
            let target = perceptual_target(input);
            let target_node = image_to_node(&mut tape, &target, false);
            loss_perc_node(&mut tape, pred, target_node)
        }
    };
    tape.scalar_value(loss)
}

/// Compare tape gradients of every parameter against central finite
/// differences; returns the max relative error over parameters with
/// |analytic| > 1e-6.
pub fn grad_check(
    net: &ToyFlowNet,
    input: &ImageRGB,
    t_map: &ScalarField,
    selector: LossSelector,
) -> Result<f64> {
    if input.height() > 8 || input.width() > 8 {
        return Err(Error::InvalidSetup(
            "grad_check is meant for small inputs (<= 8x8)".into(),
        ));
    }
    let params = net.params_flat();

    // Analytic gradients from one tape pass.
    let mut tape = Tape::new();
    let img = image_to_node(&mut tape, input, false);
    let t_in = field_to_node(&mut tape, t_map, false);
    let out = net.forward_on(&mut tape, img, t_in, true);
    let loss = match selector {
        LossSelector::Der => {
            let target = velocity_target(input);
            let target_node = image_to_node(&mut tape, &target, false);
            tape.mse(out.velocity, target_node)
        }
        LossSelector::T => {
            let target = transmission_target(input);
            let target_node = field_to_node(&mut tape, &target, false);
            tape.mse(out.t_refined, target_node)
        }
        LossSelector::Perc => {
            let pred = one_step_node(&mut tape, img, out.velocity, out.t_refined);
            let target = perceptual_target(input);
            let target_node = image_to_node(&mut tape, &target, false);
            loss_perc_node(&mut tape, pred, target_node)
        }
    };
    tape.backward(loss);
    let analytic = net.grads_flat(&tape, &out);

    let numeric = fd_gradient(&params, FD_STEP, |p| {
        loss_for_params(net, p, input, t_map, selector)
    });

    Ok(max_relative_error(&analytic, &numeric, 1e-6))
}

/// Central-difference gradient of `eval` at `params`; parallel over
/// parameters (each probe owns its parameter copy).
pub fn fd_gradient(params: &[f64], h: f64, eval: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut work = params.to_vec();
            work[i] = params[i] + h;
            let up = eval(&work);
            work[i] = params[i] - h;
            let down = eval(&work);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max of |analytic - numeric| / |analytic| over entries with
/// |analytic| > threshold.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], threshold: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, _)| a.abs() > threshold)
        .map(|(a, n)| (a - n).abs() / a.abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::tape::Shape;
    use hazeflow_core::rng::Rng;

    fn random_input(seed: u64) -> (ImageRGB, ScalarField) {
        let mut rng = Rng::new(seed);
        let data = (0..8 * 8 * 3).map(|_| rng.next_f32()).collect();
        let image = ImageRGB::new(8, 8, data).unwrap();
        let t = (0..64).map(|_| rng.uniform(0.1, 1.0) as f32).collect();
        (image, ScalarField::new(8, 8, t).unwrap())
    }

    fn randomized_net(seed: u64) -> ToyFlowNet {
        // Heads are zero-initialized by default; randomize everything so
        // gradients are informative.
        let mut net = ToyFlowNet::new(NetConfig {
            seed,
            ..Default::default()
        });
        let mut rng = Rng::new(seed ^ 0xabc);
        let flat: Vec<f64> = net
            .params_flat()
            .iter()
            .map(|&v| if v == 0.0 { rng.uniform(-0.3, 0.3) } else { v })
            .collect();
        net.set_params_flat(&flat);
        net
    }

    #[test]
    fn linear_one_by_one_conv_is_exact() {
        // Single 1x1 conv with an MSE loss is linear in its parameters, so
        // central differences are exact up to rounding.
        let weights = vec![0.4f64, -0.7, 0.2];
        let biases = vec![0.1f64];
        let input: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 0.31).sin()).collect();
        let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.17).cos()).collect();

        let eval = |p: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(Shape::new(3, 4, 4), input.clone(), false);
            let w = tape.leaf(Shape::new(3, 1, 1), p[..3].to_vec(), true);
            let b = tape.leaf(Shape::new(1, 1, 1), p[3..].to_vec(), true);
            let y = tape.conv2d(x, w, b, 3, 1, 1);
            let t = tape.leaf(Shape::new(1, 4, 4), target.clone(), false);
            let loss = tape.mse(y, t);
            tape.scalar_value(loss)
        };

        let mut tape = Tape::new();
        let x = tape.leaf(Shape::new(3, 4, 4), input.clone(), false);
        let w = tape.leaf(Shape::new(3, 1, 1), weights.clone(), true);
        let b = tape.leaf(Shape::new(1, 1, 1), biases.clone(), true);
        let y = tape.conv2d(x, w, b, 3, 1, 1);
        let t = tape.leaf(Shape::new(1, 4, 4), target.clone(), false);
        let loss = tape.mse(y, t);
        tape.backward(loss);
        let mut analytic = tape.grad(w).unwrap().to_vec();
        analytic.extend_from_slice(tape.grad(b).unwrap());

        let mut params = weights;
        params.extend(biases);
        let numeric = fd_gradient(&params, FD_STEP, eval);
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-6, "linear case err {err}");
    }

    #[test]
    fn der_path_passes_tolerance() {
        let net = randomized_net(1);
        let (image, t) = random_input(2);
        let err = grad_check(&net, &image, &t, LossSelector::Der).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn t_path_passes_tolerance() {
        let net = randomized_net(3);
        let (image, t) = random_input(4);
        let err = grad_check(&net, &image, &t, LossSelector::T).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn perc_path_passes_tolerance() {
        let net = randomized_net(5);
        let (image, t) = random_input(6);
        let err = grad_check(&net, &image, &t, LossSelector::Perc).unwrap();
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn large_inputs_are_rejected() {
        let net = randomized_net(7);
        let image = ImageRGB::constant(16, 16, 0.5);
        let t = ScalarField::constant(16, 16, 0.5);
        assert!(grad_check(&net, &image, &t, LossSelector::Der).is_err());
    }
}
