//! Full-reference quality metrics: PSNR and SSIM.
//!
//! PSNR uses a fixed peak of 1.0 so the value does not depend on
//! atmospheric-light overshoot. SSIM is the mean of local SSIM values over
//! luma, computed with uniform 8x8 windows at stride 1 (population
//! statistics, C1 = 0.01^2, C2 = 0.03^2).

use crate::error::{Error, Result};
use crate::image::{ImageRGB, ScalarField};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in decibels; +infinity when the images match.
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean local SSIM over luma; result in [-1, 1].
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    Ok(ssim_luma(&a.luma(), &b.luma()))
}

/// SSIM over two luma planes (same definition the perceptual loss mirrors).
pub fn ssim_luma(la: &ScalarField, lb: &ScalarField) -> f64 {
    let h = la.height();
    let w = la.width();
    let sum_a = integral(la);
    let sum_b = integral(lb);
    let sum_aa = integral_product(la, la);
    let sum_bb = integral_product(lb, lb);
    let sum_ab = integral_product(la, lb);

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let sa = window_sum(&sum_a, w, y, x);
            let sb = window_sum(&sum_b, w, y, x);
            let saa = window_sum(&sum_aa, w, y, x);
            let sbb = window_sum(&sum_bb, w, y, x);
            let sab = window_sum(&sum_ab, w, y, x);
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let value = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            total += value;
            count += 1;
        }
    }
    (total / count as f64).clamp(-1.0, 1.0)
}

// Summed-area table with a zero row/column of padding on top/left.
fn integral(f: &ScalarField) -> Vec<f64> {
    integral_impl(f.height(), f.width(), |i| f.data()[i] as f64)
}

fn integral_product(a: &ScalarField, b: &ScalarField) -> Vec<f64> {
    integral_impl(a.height(), a.width(), |i| {
        a.data()[i] as f64 * b.data()[i] as f64
    })
}

fn integral_impl(h: usize, w: usize, value: impl Fn(usize) -> f64) -> Vec<f64> {
    let stride = w + 1;
    let mut table = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row_acc = 0.0f64;
        for x in 0..w {
            row_acc += value(y * w + x);
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_acc;
        }
    }
    table
}

#[inline]
fn window_sum(table: &[f64], w: usize, y: usize, x: usize) -> f64 {
    let stride = w + 1;
    let y1 = y + SSIM_WINDOW;
    let x1 = x + SSIM_WINDOW;
    table[y1 * stride + x1] - table[y * stride + x1] - table[y1 * stride + x]
        + table[y * stride + x]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageRGB {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * 3).map(|_| rng.next_f32()).collect();
        ImageRGB::new(h, w, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = random_image(9, 9, 1);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn psnr_zero_vs_one_is_zero_db() {
        let a = ImageRGB::zeros(4, 4);
        let b = ImageRGB::constant(4, 4, 1.0);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-9);
    }

    #[test]
    fn psnr_zero_vs_half_matches_hand_computation() {
        let a = ImageRGB::zeros(4, 4);
        let b = ImageRGB::constant(4, 4, 0.5);
        // MSE = 0.25, so 10*log10(1/0.25)
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 6.0206).abs() < 1e-3);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random_image(8, 8, 2);
        let b = random_image(8, 8, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_rejects_dimension_mismatch() {
        let a = ImageRGB::zeros(4, 4);
        let b = ImageRGB::zeros(4, 5);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let img = random_image(12, 10, 4);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_pair_is_one() {
        let a = ImageRGB::constant(8, 8, 0.5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_negative_image_scores_below_one() {
        let img = random_image(16, 16, 5);
        let neg = img.map(|v| 1.0 - v);
        assert!(ssim(&img, &neg).unwrap() < 0.9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageRGB::zeros(4, 4);
        assert!(ssim(&a, &a).is_err());
    }
}
