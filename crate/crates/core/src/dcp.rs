//! Dark channel prior transmission estimation.
//!
//! Haze-free patches of natural images contain at least one near-zero
//! channel, so the patch-minimum of the normalized hazy image estimates how
//! much airlight was mixed in. The raw estimate is refined with a guided
//! filter (the hazy luma as guide) and clamped into [0.05, 1].

use crate::error::{Error, Result};
use crate::image::{AtmosphericLight, ImageRGB, ScalarField};

/// Estimator configuration with the canonical defaults.
#[derive(Debug, Clone)]
pub struct DcpConfig {
    /// Patch radius in pixels (7 -> 15x15 patches).
    pub patch_radius: usize,
    /// Haze retention factor in (0, 1].
    pub omega: f32,
    /// Fraction of brightest dark-channel pixels used for light estimation.
    pub top_fraction: f32,
    /// Guided filter window radius.
    pub guided_radius: usize,
    /// Guided filter regularization.
    pub guided_eps: f32,
}

impl Default for DcpConfig {
    fn default() -> Self {
        DcpConfig {
            patch_radius: 7,
            omega: 0.95,
            top_fraction: 0.001,
            guided_radius: 20,
            guided_eps: 1e-3,
        }
    }
}

/// Transmission floor applied to every estimate.
pub const T_MIN: f32 = 0.05;

/// Per-pixel min over channels, then min-filter over a (2r+1)^2 patch with
/// edge replication.
pub fn dark_channel(image: &ImageRGB, patch_radius: usize) -> ScalarField {
    let h = image.height();
    let w = image.width();
    let mut per_pixel = Vec::with_capacity(h * w);
    for px in image.data().chunks_exact(3) {
        per_pixel.push(px[0].min(px[1]).min(px[2]));
    }
    let field = ScalarField::new(h, w, per_pixel).expect("dark channel shape");
    if patch_radius == 0 {
        return field;
    }
    min_filter(&field, patch_radius)
}

/// Separable square min filter with edge replication.
pub fn min_filter(field: &ScalarField, radius: usize) -> ScalarField {
    let h = field.height() as i64;
    let w = field.width() as i64;
    let r = radius as i64;
    let src = field.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dx in -r..=r {
                let xx = (x + dx).clamp(0, w - 1);
                m = m.min(src[(y * w + xx) as usize]);
            }
            tmp[(y * w + x) as usize] = m;
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h - 1);
                m = m.min(tmp[(yy * w + x) as usize]);
            }
            out[(y * w + x) as usize] = m;
        }
    }
    ScalarField::new(field.height(), field.width(), out).expect("min filter shape")
}

/// Estimate global atmospheric light: among the `top_fraction` brightest
/// dark-channel pixels, take the image color with the largest channel sum.
/// Components are clamped to [0.05, 1.8].
pub fn estimate_light(
    image: &ImageRGB,
    dark: &ScalarField,
    top_fraction: f32,
) -> Result<AtmosphericLight> {
    if !dark.matches_image(image) {
        return Err(Error::dims(
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", dark.height(), dark.width()),
        ));
    }
    let total = dark.data().len();
    let take = ((total as f64 * top_fraction as f64).floor() as usize).max(1);

    let mut order: Vec<usize> = (0..total).collect();
    // Stable tie-break on the index keeps the estimate deterministic.
    order.sort_by(|&a, &b| {
        dark.data()[b]
            .partial_cmp(&dark.data()[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut best_sum = f32::NEG_INFINITY;
    let mut best = [0.0f32; 3];
    for &idx in order.iter().take(take) {
        let px = &image.data()[idx * 3..idx * 3 + 3];
        let sum = px[0] + px[1] + px[2];
        if sum > best_sum {
            best_sum = sum;
            best = [px[0], px[1], px[2]];
        }
    }
    for c in &mut best {
        *c = c.clamp(0.05, 1.8);
    }
    Ok(AtmosphericLight::Global(best))
}

/// Raw transmission estimate before refinement: `1 - omega * dark(I/A)`.
pub fn raw_transmission(
    image: &ImageRGB,
    light: &[f32; 3],
    cfg: &DcpConfig,
) -> Result<ScalarField> {
    if light.iter().any(|&c| c < 0.05) {
        return Err(Error::InvalidArgument(
            "atmospheric light components must be >= 0.05".into(),
        ));
    }
    let mut normalized = image.clone();
    for px in normalized.data_mut().chunks_exact_mut(3) {
        px[0] /= light[0];
        px[1] /= light[1];
        px[2] /= light[2];
    }
    let dark = dark_channel(&normalized, cfg.patch_radius);
    Ok(dark.map(|v| 1.0 - cfg.omega * v))
}

/// Full estimate: raw transmission, guided-filter refinement against the
/// hazy luma, clamp into [T_MIN, 1].
pub fn estimate_transmission(
    image: &ImageRGB,
    light: &AtmosphericLight,
    cfg: &DcpConfig,
) -> Result<ScalarField> {
    let global = match light {
        AtmosphericLight::Global(rgb) => *rgb,
        AtmosphericLight::Spatial(_) => {
            return Err(Error::InvalidArgument(
                "transmission estimation needs a global light".into(),
            ))
        }
    };
    let raw = raw_transmission(image, &global, cfg)?;
    let guide = image.luma();
    let refined = guided_filter(&raw, &guide, cfg.guided_radius, cfg.guided_eps);
    Ok(refined.map(|v| v.clamp(T_MIN, 1.0)))
}

/// Edge-preserving guided filter: local linear model of `input` on `guide`.
pub fn guided_filter(
    input: &ScalarField,
    guide: &ScalarField,
    radius: usize,
    eps: f32,
) -> ScalarField {
    let mean_i = box_filter(guide, radius);
    let mean_p = box_filter(input, radius);
    let corr_ip = box_filter_product(guide, input, radius);
    let corr_ii = box_filter_product(guide, guide, radius);

    let n = input.data().len();
    let mut a = vec![0.0f32; n];
    let mut b = vec![0.0f32; n];
    for idx in 0..n {
        let mi = mean_i.data()[idx];
        let mp = mean_p.data()[idx];
        let var = corr_ii.data()[idx] - mi * mi;
        let cov = corr_ip.data()[idx] - mi * mp;
        let ai = cov / (var + eps);
        a[idx] = ai;
        b[idx] = mp - ai * mi;
    }
    let a_field = ScalarField::new(input.height(), input.width(), a).expect("shape");
    let b_field = ScalarField::new(input.height(), input.width(), b).expect("shape");
    let mean_a = box_filter(&a_field, radius);
    let mean_b = box_filter(&b_field, radius);

    let mut out = vec![0.0f32; n];
    for idx in 0..n {
        out[idx] = mean_a.data()[idx] * guide.data()[idx] + mean_b.data()[idx];
    }
    ScalarField::new(input.height(), input.width(), out).expect("shape")
}

/// Mean filter over clipped square windows (summed-area table).
pub fn box_filter(field: &ScalarField, radius: usize) -> ScalarField {
    box_filter_impl(field.height(), field.width(), radius, |i| {
        field.data()[i] as f64
    })
}

fn box_filter_product(a: &ScalarField, b: &ScalarField, radius: usize) -> ScalarField {
    box_filter_impl(a.height(), a.width(), radius, |i| {
        a.data()[i] as f64 * b.data()[i] as f64
    })
}

fn box_filter_impl(h: usize, w: usize, radius: usize, value: impl Fn(usize) -> f64) -> ScalarField {
    let stride = w + 1;
    let mut table = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += value(y * w + x);
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
        }
    }
    let r = radius as i64;
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as i64 {
        let y0 = (y - r).max(0) as usize;
        let y1 = ((y + r + 1).min(h as i64)) as usize;
        for x in 0..w as i64 {
            let x0 = (x - r).max(0) as usize;
            let x1 = ((x + r + 1).min(w as i64)) as usize;
            let sum = table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0]
                + table[y0 * stride + x0];
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            out[(y as usize) * w + x as usize] = (sum / area) as f32;
        }
    }
    ScalarField::new(h, w, out).expect("box filter shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn dark_channel_of_constant_is_constant() {
        let img = ImageRGB::constant(8, 8, 0.37);
        let d = dark_channel(&img, 3);
        assert!(d.data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    }

    #[test]
    fn dark_channel_radius_zero_is_channel_min() {
        let img = ImageRGB::new(1, 2, vec![0.5, 0.2, 0.9, 0.8, 0.4, 0.1]).unwrap();
        let d = dark_channel(&img, 0);
        assert_eq!(d.get(0, 0), 0.2);
        assert_eq!(d.get(0, 1), 0.1);
    }

    #[test]
    fn bright_pixel_in_dark_image_vanishes_at_radius_one() {
        let mut img = ImageRGB::zeros(5, 5);
        for c in 0..3 {
            img.set(2, 2, c, 1.0);
        }
        let d = dark_channel(&img, 1);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dark_channel_matches_brute_force() {
        let mut rng = Rng::new(21);
        let data: Vec<f32> = (0..10 * 12 * 3).map(|_| rng.next_f32()).collect();
        let img = ImageRGB::new(10, 12, data).unwrap();
        let r = 2usize;
        let fast = dark_channel(&img, r);
        for y in 0..10i64 {
            for x in 0..12i64 {
                let mut m = f32::INFINITY;
                for dy in -(r as i64)..=r as i64 {
                    for dx in -(r as i64)..=r as i64 {
                        let yy = (y + dy).clamp(0, 9) as usize;
                        let xx = (x + dx).clamp(0, 11) as usize;
                        for c in 0..3 {
                            m = m.min(img.get(yy, xx, c));
                        }
                    }
                }
                assert_eq!(fast.get(y as usize, x as usize), m);
            }
        }
    }

    #[test]
    fn min_filter_radius_zero_is_identity_twice() {
        let mut rng = Rng::new(22);
        let data: Vec<f32> = (0..36).map(|_| rng.next_f32()).collect();
        let f = ScalarField::new(6, 6, data).unwrap();
        let once = min_filter(&f, 0);
        let twice = min_filter(&once, 0);
        assert_eq!(once.data(), f.data());
        assert_eq!(twice.data(), once.data());
    }

    #[test]
    fn estimate_light_constant_image() {
        let img = ImageRGB::constant(10, 10, 0.6);
        let dark = dark_channel(&img, 7);
        let light = estimate_light(&img, &dark, 0.001).unwrap();
        match light {
            AtmosphericLight::Global(rgb) => {
                for c in rgb {
                    assert!((c - 0.6).abs() < 1e-6);
                }
            }
            _ => panic!("expected global"),
        }
    }

    #[test]
    fn estimate_light_finds_white_region() {
        let mut img = ImageRGB::constant(20, 20, 0.2);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..3 {
                    img.set(y, x, c, 1.0);
                }
            }
        }
        let dark = dark_channel(&img, 1);
        let light = estimate_light(&img, &dark, 0.01).unwrap();
        match light {
            AtmosphericLight::Global(rgb) => assert_eq!(rgb, [1.0, 1.0, 1.0]),
            _ => panic!("expected global"),
        }
    }

    #[test]
    fn estimate_light_matches_brute_force_on_crafted_image() {
        // A 10x10 image with a known brightest haze-opaque patch.
        let mut rng = Rng::new(23);
        let mut img = ImageRGB::zeros(10, 10);
        for y in 0..10 {
            for x in 0..10 {
                for c in 0..3 {
                    img.set(y, x, c, rng.next_f32() * 0.5);
                }
            }
        }
        // Opaque haze patch: high in every channel.
        for y in 6..9 {
            for x in 2..5 {
                img.set(y, x, 0, 0.95);
                img.set(y, x, 1, 0.9);
                img.set(y, x, 2, 0.85);
            }
        }
        let dark = dark_channel(&img, 1);
        // Brute force: top 5% of dark-channel pixels, max channel sum.
        let take = 5usize;
        let mut order: Vec<usize> = (0..100).collect();
        order.sort_by(|&a, &b| {
            dark.data()[b]
                .partial_cmp(&dark.data()[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut expected = [0.0f32; 3];
        let mut best = f32::NEG_INFINITY;
        for &idx in order.iter().take(take) {
            let px = &img.data()[idx * 3..idx * 3 + 3];
            if px[0] + px[1] + px[2] > best {
                best = px[0] + px[1] + px[2];
                expected = [px[0], px[1], px[2]];
            }
        }
        match estimate_light(&img, &dark, 0.05).unwrap() {
            AtmosphericLight::Global(rgb) => assert_eq!(rgb, expected),
            _ => panic!("expected global"),
        }
    }

    #[test]
    fn estimate_light_small_image_falls_back_to_max() {
        let img = ImageRGB::new(1, 2, vec![0.2, 0.2, 0.2, 0.9, 0.8, 0.7]).unwrap();
        let dark = dark_channel(&img, 0);
        match estimate_light(&img, &dark, 0.001).unwrap() {
            AtmosphericLight::Global(rgb) => assert_eq!(rgb, [0.9, 0.8, 0.7]),
            _ => panic!("expected global"),
        }
    }

    #[test]
    fn transmission_is_floor_for_pure_airlight() {
        let img = ImageRGB::constant(32, 32, 0.8);
        let cfg = DcpConfig::default();
        let raw = raw_transmission(&img, &[0.8; 3], &cfg).unwrap();
        for &v in raw.data() {
            assert!((v - (1.0 - cfg.omega)).abs() < 1e-6);
        }
        let t = estimate_transmission(&img, &AtmosphericLight::Global([0.8; 3]), &cfg).unwrap();
        for &v in t.data() {
            assert!((v - T_MIN).abs() < 1e-5);
        }
    }

    #[test]
    fn transmission_is_one_for_dark_channel_free_image() {
        // A zero channel everywhere makes dark(I/A) = 0 -> T = 1.
        let mut img = ImageRGB::constant(32, 32, 0.0);
        for y in 0..32 {
            for x in 0..32 {
                img.set(y, x, (x + y) % 2, 0.7);
            }
        }
        let cfg = DcpConfig::default();
        let t = estimate_transmission(&img, &AtmosphericLight::Global([1.0; 3]), &cfg).unwrap();
        for &v in t.data() {
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn transmission_stays_in_bounds() {
        let mut rng = Rng::new(24);
        let data: Vec<f32> = (0..48 * 48 * 3).map(|_| rng.next_f32() * 1.4).collect();
        let img = ImageRGB::new(48, 48, data).unwrap();
        let t = estimate_transmission(
            &img,
            &AtmosphericLight::Global([1.1, 0.9, 1.0]),
            &DcpConfig::default(),
        )
        .unwrap();
        for &v in t.data() {
            assert!((T_MIN..=1.0).contains(&v));
        }
    }

    #[test]
    fn raising_omega_never_raises_raw_transmission() {
        let mut rng = Rng::new(25);
        let data: Vec<f32> = (0..24 * 24 * 3).map(|_| rng.next_f32()).collect();
        let img = ImageRGB::new(24, 24, data).unwrap();
        let mut low = DcpConfig::default();
        low.omega = 0.8;
        let mut high = DcpConfig::default();
        high.omega = 0.95;
        let t_low = raw_transmission(&img, &[1.0; 3], &low).unwrap();
        let t_high = raw_transmission(&img, &[1.0; 3], &high).unwrap();
        for (l, h) in t_low.data().iter().zip(t_high.data()) {
            assert!(h <= l);
        }
    }

    #[test]
    fn dark_channel_is_translation_equivariant() {
        let mut rng = Rng::new(26);
        let data: Vec<f32> = (0..20 * 20 * 3).map(|_| rng.next_f32()).collect();
        let img = ImageRGB::new(20, 20, data).unwrap();
        let d = dark_channel(&img, 1);
        let shifted = img.crop(2, 3, 10, 10);
        let d_shifted = dark_channel(&shifted, 1);
        // Interior windows (away from replication edges) must match.
        for y in 1..9 {
            for x in 1..9 {
                assert_eq!(d_shifted.get(y, x), d.get(y + 2, x + 3));
            }
        }
    }

    #[test]
    fn box_filter_of_constant_is_constant() {
        let f = ScalarField::constant(16, 16, 0.4);
        let b = box_filter(&f, 20);
        for &v in b.data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn guided_filter_preserves_constant_input() {
        let mut rng = Rng::new(27);
        let guide_data: Vec<f32> = (0..256).map(|_| rng.next_f32()).collect();
        let guide = ScalarField::new(16, 16, guide_data).unwrap();
        let input = ScalarField::constant(16, 16, 1.0);
        let out = guided_filter(&input, &guide, 4, 1e-3);
        for &v in out.data() {
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
