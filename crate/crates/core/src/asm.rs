//! Atmospheric scattering model: forward compositing, analytic inversion,
//! and the exact velocity of the dehazing trajectory.
//!
//! The model blends scene radiance J with airlight A by per-pixel
//! transmission T: `I = T*J + (1-T)*A`, `T = exp(-beta*d)`. Differentiating
//! the blend in T gives `dI = (J - A) dT`, so the trajectory from a hazy
//! image to its clean counterpart is a straight line in T and `J - A` is the
//! exact velocity along it.

use crate::error::{Error, Result};
use crate::image::{AtmosphericLight, ImageRGB, ScalarField};
use crate::mcbm::HazeParams;

/// Default transmission floor for the analytic inversion.
pub const T_FLOOR_DEFAULT: f32 = 1e-3;

/// A synthesized hazy/clean pair with everything that produced it.
#[derive(Debug, Clone)]
pub struct HazePair {
    pub clean: ImageRGB,
    pub hazy: ImageRGB,
    pub transmission: ScalarField,
    pub light: AtmosphericLight,
    pub depth: ScalarField,
    pub params: HazeParams,
}

fn ensure_field_matches(field: &ScalarField, image: &ImageRGB) -> Result<()> {
    if !field.matches_image(image) {
        return Err(Error::dims(
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", field.height(), field.width()),
        ));
    }
    Ok(())
}

fn ensure_light_matches(light: &AtmosphericLight, image: &ImageRGB) -> Result<()> {
    if let AtmosphericLight::Spatial(map) = light {
        if !map.same_dims(image) {
            return Err(Error::dims(
                format!("{}x{}", image.height(), image.width()),
                format!("{}x{}", map.height(), map.width()),
            ));
        }
    }
    Ok(())
}

/// `T(x) = exp(-beta(x) * depth(x))`, with spatially varying beta.
pub fn transmission_from_depth(depth: &ScalarField, beta: &ScalarField) -> Result<ScalarField> {
    if !depth.same_dims(beta) {
        return Err(Error::dims(
            format!("{}x{}", depth.height(), depth.width()),
            format!("{}x{}", beta.height(), beta.width()),
        ));
    }
    if depth.min() < 0.0 {
        return Err(Error::InvalidArgument("depth must be non-negative".into()));
    }
    if beta.min() < 0.0 {
        return Err(Error::InvalidArgument("beta must be non-negative".into()));
    }
    let data = depth
        .data()
        .iter()
        .zip(beta.data())
        .map(|(&d, &b)| (-b * d).exp())
        .collect();
    ScalarField::new(depth.height(), depth.width(), data)
}

/// Forward model: `I = T*J + (1-T)*A` per pixel and channel.
pub fn compose(clean: &ImageRGB, t: &ScalarField, light: &AtmosphericLight) -> Result<ImageRGB> {
    ensure_field_matches(t, clean)?;
    ensure_light_matches(light, clean)?;
    let mut out = clean.clone();
    for y in 0..clean.height() {
        for x in 0..clean.width() {
            let tv = t.get(y, x);
            for c in 0..3 {
                let j = clean.get(y, x, c);
                let a = light.at(y, x, c);
                out.set(y, x, c, tv * j + (1.0 - tv) * a);
            }
        }
    }
    Ok(out)
}

/// Analytic inverse with the default transmission floor.
pub fn invert_asm(hazy: &ImageRGB, t: &ScalarField, light: &AtmosphericLight) -> Result<ImageRGB> {
    invert_asm_with_floor(hazy, t, light, T_FLOOR_DEFAULT)
}

/// `J = (I - (1-T)*A) / T`, clamped to >= 0. Refuses when T drops below
/// `t_floor` anywhere, reporting the first offending pixel.
pub fn invert_asm_with_floor(
    hazy: &ImageRGB,
    t: &ScalarField,
    light: &AtmosphericLight,
    t_floor: f32,
) -> Result<ImageRGB> {
    ensure_field_matches(t, hazy)?;
    ensure_light_matches(light, hazy)?;
    for y in 0..hazy.height() {
        for x in 0..hazy.width() {
            let tv = t.get(y, x);
            if tv < t_floor {
                return Err(Error::TransmissionFloor {
                    value: tv,
                    floor: t_floor,
                    x,
                    y,
                });
            }
        }
    }
    let mut out = hazy.clone();
    for y in 0..hazy.height() {
        for x in 0..hazy.width() {
            let tv = t.get(y, x);
            for c in 0..3 {
                let i = hazy.get(y, x, c);
                let a = light.at(y, x, c);
                out.set(y, x, c, ((i - (1.0 - tv) * a) / tv).max(0.0));
            }
        }
    }
    Ok(out)
}

/// Exact trajectory velocity `V = J - A`; values may be negative.
pub fn oracle_velocity(clean: &ImageRGB, light: &AtmosphericLight) -> Result<ImageRGB> {
    ensure_light_matches(light, clean)?;
    let mut out = clean.clone();
    for y in 0..clean.height() {
        for x in 0..clean.width() {
            for c in 0..3 {
                out.set(y, x, c, clean.get(y, x, c) - light.at(y, x, c));
            }
        }
    }
    Ok(out)
}

impl HazePair {
    /// Re-compose the pair under a different light (degradation is not
    /// reapplied). Used to pin A = (1,1,1) for pretraining.
    pub fn recomposed_with_light(&self, light: AtmosphericLight) -> Result<HazePair> {
        let hazy = compose(&self.clean, &self.transmission, &light)?;
        Ok(HazePair {
            clean: self.clean.clone(),
            hazy,
            transmission: self.transmission.clone(),
            light,
            depth: self.depth.clone(),
            params: self.params.clone(),
        })
    }
}
