//! Training losses, differentiable through the tape.
//!
//! `loss_der` and `loss_t` are mean squared errors against the exact
//! velocity and transmission targets. `loss_perc` is the perceptual proxy
//! `0.5*(1 - SSIM) + 0.5*mean|grad(pred) - grad(target)|`, built from tape
//! primitives so gradients flow into both the velocity and the refined
//! transmission; its SSIM term matches the metrics definition (uniform 8x8
//! windows over luma, stride 1).

use hazeflow_core::image::{AtmosphericLight, ImageRGB, ScalarField, LUMA_WEIGHTS};
use hazeflow_core::metrics::{SSIM_C1, SSIM_C2, SSIM_WINDOW};

use crate::net::{image_to_node, node_to_image};
use crate::tape::{NodeId, Shape, Tape};

/// Luma plane as a fixed 1x1 convolution (constant weights).
pub fn luma_node(tape: &mut Tape, image: NodeId) -> NodeId {
    let weights = LUMA_WEIGHTS.iter().map(|&w| w as f64).collect();
    let w = tape.leaf(Shape::new(3, 1, 1), weights, false);
    let b = tape.leaf(Shape::new(1, 1, 1), vec![0.0], false);
    tape.conv2d(image, w, b, 3, 1, 1)
}

/// Differentiable SSIM over the luma planes of two 3-channel nodes.
pub fn ssim_node(tape: &mut Tape, pred: NodeId, target: NodeId) -> NodeId {
    let la = luma_node(tape, pred);
    let lb = luma_node(tape, target);

    let mu_a = tape.avg_pool(la, SSIM_WINDOW);
    let mu_b = tape.avg_pool(lb, SSIM_WINDOW);
    let aa = tape.mul(la, la);
    let bb = tape.mul(lb, lb);
    let ab = tape.mul(la, lb);
    let mean_aa = tape.avg_pool(aa, SSIM_WINDOW);
    let mean_bb = tape.avg_pool(bb, SSIM_WINDOW);
    let mean_ab = tape.avg_pool(ab, SSIM_WINDOW);

    let mu_a2 = tape.mul(mu_a, mu_a);
    let mu_b2 = tape.mul(mu_b, mu_b);
    let mu_ab = tape.mul(mu_a, mu_b);
    let var_a = tape.sub(mean_aa, mu_a2);
    let var_b = tape.sub(mean_bb, mu_b2);
    let cov = tape.sub(mean_ab, mu_ab);

    let two_mu = tape.mul_scalar(mu_ab, 2.0);
    let num1 = tape.add_scalar(two_mu, SSIM_C1);
    let two_cov = tape.mul_scalar(cov, 2.0);
    let num2 = tape.add_scalar(two_cov, SSIM_C2);
    let num = tape.mul(num1, num2);

    let mu_sum = tape.add(mu_a2, mu_b2);
    let den1 = tape.add_scalar(mu_sum, SSIM_C1);
    let var_sum = tape.add(var_a, var_b);
    let den2 = tape.add_scalar(var_sum, SSIM_C2);
    let den = tape.mul(den1, den2);

    let map = tape.div(num, den);
    tape.mean(map)
}

/// Mean absolute difference of forward-difference gradients, pooled over
/// both directions of all channels.
pub fn gradient_l1_node(tape: &mut Tape, pred: NodeId, target: NodeId) -> NodeId {
    let dxp = tape.diff_x(pred);
    let dxt = tape.diff_x(target);
    let dyp = tape.diff_y(pred);
    let dyt = tape.diff_y(target);
    let ddx = tape.sub(dxp, dxt);
    let ddy = tape.sub(dyp, dyt);
    let adx = tape.abs(ddx);
    let ady = tape.abs(ddy);
    let n = (tape.shape(adx).len() + tape.shape(ady).len()) as f64;
    let sx = tape.sum(adx);
    let sy = tape.sum(ady);
    let total = tape.add(sx, sy);
    tape.mul_scalar(total, 1.0 / n)
}

/// Perceptual proxy on the tape: `0.5*(1 - ssim) + 0.5*grad_l1`.
pub fn loss_perc_node(tape: &mut Tape, pred: NodeId, target: NodeId) -> NodeId {
    let shape = tape.shape(pred);
    assert!(
        shape.h >= SSIM_WINDOW && shape.w >= SSIM_WINDOW,
        "perceptual loss needs at least {SSIM_WINDOW}x{SSIM_WINDOW} inputs"
    );
    let ssim = ssim_node(tape, pred, target);
    let neg = tape.mul_scalar(ssim, -0.5);
    let structural = tape.add_scalar(neg, 0.5);
    let grad = gradient_l1_node(tape, pred, target);
    let grad_half = tape.mul_scalar(grad, 0.5);
    tape.add(structural, grad_half)
}

/// Velocity regression target: mean squared error between V and `J - A`.
pub fn loss_der(velocity: &ImageRGB, clean: &ImageRGB, light: &AtmosphericLight) -> f64 {
    debug_assert!(velocity.same_dims(clean));
    let mut acc = 0.0f64;
    for y in 0..clean.height() {
        for x in 0..clean.width() {
            for c in 0..3 {
                let target = clean.get(y, x, c) as f64 - light.at(y, x, c) as f64;
                let d = velocity.get(y, x, c) as f64 - target;
                acc += d * d;
            }
        }
    }
    acc / velocity.data().len() as f64
}

/// Transmission refinement target: mean squared error.
pub fn loss_t(t_refined: &ScalarField, t_true: &ScalarField) -> f64 {
    debug_assert!(t_refined.same_dims(t_true));
    let mut acc = 0.0f64;
    for (&a, &b) in t_refined.data().iter().zip(t_true.data()) {
        let d = a as f64 - b as f64;
        acc += d * d;
    }
    acc / t_refined.data().len() as f64
}

/// Value-level perceptual loss; evaluates the tape form on constants, so it
/// is the same definition the trainer differentiates.
pub fn loss_perc(pred: &ImageRGB, target: &ImageRGB) -> f64 {
    let mut tape = Tape::new();
    let p = image_to_node(&mut tape, pred, false);
    let t = image_to_node(&mut tape, target, false);
    let loss = loss_perc_node(&mut tape, p, t);
    tape.scalar_value(loss)
}

/// One-step estimate `pred = state + (1 - t_refined) * velocity` on the tape.
pub fn one_step_node(
    tape: &mut Tape,
    state: NodeId,
    velocity: NodeId,
    t_refined: NodeId,
) -> NodeId {
    let neg = tape.mul_scalar(t_refined, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let scaled = tape.mul_bc1(velocity, one_minus);
    tape.add(state, scaled)
}

/// Value-level one-step estimate (unclamped).
pub fn one_step_estimate(
    state: &ImageRGB,
    velocity: &ImageRGB,
    t_refined: &ScalarField,
) -> ImageRGB {
    let mut tape = Tape::new();
    let s = image_to_node(&mut tape, state, false);
    let v = image_to_node(&mut tape, velocity, false);
    let t = crate::net::field_to_node(&mut tape, t_refined, false);
    let out = one_step_node(&mut tape, s, v, t);
    node_to_image(&tape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hazeflow_core::metrics::ssim;
    use hazeflow_core::rng::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageRGB {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * 3).map(|_| rng.next_f32()).collect();
        ImageRGB::new(h, w, data).unwrap()
    }

    #[test]
    fn loss_der_zero_when_velocity_is_exact() {
        let clean = random_image(6, 6, 1);
        let light = AtmosphericLight::Global([1.0; 3]);
        let velocity = hazeflow_core::asm::oracle_velocity(&clean, &light).unwrap();
        assert!(loss_der(&velocity, &clean, &light) < 1e-14);
    }

    #[test]
    fn loss_der_constant_offset() {
        // V = 0 against J - A = -0.8 -> MSE 0.64.
        let clean = ImageRGB::constant(4, 4, 0.2);
        let light = AtmosphericLight::Global([1.0; 3]);
        let velocity = ImageRGB::zeros(4, 4);
        assert!((loss_der(&velocity, &clean, &light) - 0.64).abs() < 1e-7);
    }

    #[test]
    fn loss_der_matches_brute_force_on_random_patch() {
        let mut rng = Rng::new(2);
        let clean = random_image(2, 2, 3);
        let v_data: Vec<f32> = (0..12).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let velocity = ImageRGB::new(2, 2, v_data).unwrap();
        let light = AtmosphericLight::Global([0.9, 1.1, 0.6]);
        let mut expected = 0.0f64;
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    let target = clean.get(y, x, c) as f64 - light.at(y, x, c) as f64;
                    let d = velocity.get(y, x, c) as f64 - target;
                    expected += d * d;
                }
            }
        }
        expected /= 12.0;
        assert!((loss_der(&velocity, &clean, &light) - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_t_simple_values() {
        let a = ScalarField::constant(4, 4, 0.5);
        assert_eq!(loss_t(&a, &a), 0.0);
        let b = ScalarField::constant(4, 4, 0.6);
        assert!((loss_t(&a, &b) - 0.01).abs() < 1e-7);
    }

    #[test]
    fn loss_t_matches_brute_force() {
        let mut rng = Rng::new(4);
        let a_data: Vec<f32> = (0..16).map(|_| rng.next_f32()).collect();
        let b_data: Vec<f32> = (0..16).map(|_| rng.next_f32()).collect();
        let a = ScalarField::new(4, 4, a_data.clone()).unwrap();
        let b = ScalarField::new(4, 4, b_data.clone()).unwrap();
        let expected = a_data
            .iter()
            .zip(&b_data)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            / 16.0;
        assert!((loss_t(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_perc_zero_for_identical_images() {
        let img = random_image(12, 12, 5);
        assert!(loss_perc(&img, &img).abs() < 1e-12);
    }

    #[test]
    fn loss_perc_flat_images_have_zero_gradient_term() {
        let a = ImageRGB::constant(8, 8, 0.3);
        let b = ImageRGB::constant(8, 8, 0.7);
        // Gradient term vanishes; what remains is 0.5*(1 - ssim).
        let expected = 0.5 * (1.0 - ssim(&a, &b).unwrap());
        assert!((loss_perc(&a, &b) - expected).abs() < 1e-9);
    }

    #[test]
    fn losses_are_nonnegative_and_zero_only_at_identity() {
        // f64 rounding may leave the SSIM term a few ulps above 1 when the
        // images nearly coincide, hence the tiny slack on loss_perc.
        for seed in 0..20u64 {
            let a = random_image(10, 10, seed);
            let b = random_image(10, 10, seed ^ 0x55);
            let v = a.map(|x| x - 0.5);
            let light = AtmosphericLight::Global([1.0, 0.8, 1.2]);
            assert!(loss_der(&v, &b, &light) >= 0.0);
            assert!(loss_t(&a.luma(), &b.luma()) >= 0.0);
            assert!(loss_perc(&a, &b) >= -1e-12);
            assert!(loss_perc(&a, &b) > 1e-4, "distinct images score positive");
        }
        let img = random_image(10, 10, 3);
        assert_eq!(loss_t(&img.luma(), &img.luma()), 0.0);
        assert!(loss_perc(&img, &img).abs() < 1e-12);
    }

    #[test]
    fn tape_ssim_matches_metrics_ssim() {
        let a = random_image(16, 16, 6);
        let b = random_image(16, 16, 7);
        let mut tape = Tape::new();
        let an = image_to_node(&mut tape, &a, false);
        let bn = image_to_node(&mut tape, &b, false);
        let node = ssim_node(&mut tape, an, bn);
        let tape_value = tape.scalar_value(node);
        let metric_value = ssim(&a, &b).unwrap();
        assert!(
            (tape_value - metric_value).abs() < 1e-5,
            "{tape_value} vs {metric_value}"
        );
    }

    #[test]
    fn loss_perc_gradient_wrt_pred_matches_fd() {
        let pred = random_image(8, 8, 8);
        let target = random_image(8, 8, 9);

        let mut tape = Tape::new();
        let p = image_to_node(&mut tape, &pred, true);
        let t = image_to_node(&mut tape, &target, false);
        let loss = loss_perc_node(&mut tape, p, t);
        tape.backward(loss);
        let analytic = tape.grad(p).unwrap().to_vec();

        // Central differences on each pred value, evaluated in f64.
        let plane = 64usize;
        let base: Vec<f64> = {
            let mut tape = Tape::new();
            let p = image_to_node(&mut tape, &pred, false);
            tape.values(p).to_vec()
        };
        let eval = |vals: &[f64]| {
            let mut tape = Tape::new();
            let p = tape.leaf(Shape::new(3, 8, 8), vals.to_vec(), false);
            let t = image_to_node(&mut tape, &target, false);
            let loss = loss_perc_node(&mut tape, p, t);
            tape.scalar_value(loss)
        };
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let mut work = base.clone();
        for i in 0..3 * plane {
            work[i] = base[i] + h;
            let up = eval(&work);
            work[i] = base[i] - h;
            let down = eval(&work);
            work[i] = base[i];
            let numeric = (up - down) / (2.0 * h);
            if analytic[i].abs() > 1e-6 {
                max_rel = max_rel.max((analytic[i] - numeric).abs() / analytic[i].abs());
            }
        }
        assert!(max_rel < 1e-3, "max rel err {max_rel}");
    }

    #[test]
    fn one_step_estimate_matches_manual_formula() {
        let state = random_image(6, 6, 10);
        let velocity = random_image(6, 6, 11).map(|v| v - 0.5);
        let t = ScalarField::constant(6, 6, 0.4);
        let out = one_step_estimate(&state, &velocity, &t);
        for idx in 0..state.data().len() {
            let expected = state.data()[idx] + 0.6 * velocity.data()[idx];
            assert!((out.data()[idx] - expected).abs() < 1e-6);
        }
    }
}
