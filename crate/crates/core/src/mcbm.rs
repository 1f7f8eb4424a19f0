//! Non-homogeneous haze synthesis.
//!
//! A random walker deposits mass on a grid (Markov chain unit steps plus
//! Gaussian-displaced deposits), the accumulated map is Gaussian-smoothed
//! and min-max normalized into a density field `beta_tilde` in [0, 1]. The
//! transmission map then uses a spatially varying coefficient:
//! `T(x) = exp(-(beta + alpha * beta_tilde(x)) * d(x))`.
//!
//! `generate_pair` drives the whole synthesis: sample parameters, build the
//! density and transmission, composite haze over a clean image, and
//! optionally push the result through a degradation pipeline (gamma, additive
//! Gaussian noise, block quantization) that mimics capture artifacts.

use serde::{Deserialize, Serialize};

use crate::asm::{compose, HazePair};
use crate::error::{Error, Result};
use crate::image::{AtmosphericLight, ImageRGB, ScalarField, LUMA_WEIGHTS};
use crate::rng::Rng;

/// Per-step Brownian displacement standard deviation (pixels). Distinct from
/// the smoothing sigma: this one drives where deposits land.
pub const WALK_DISPLACEMENT_SIGMA: f64 = 2.0;

/// Default maximum of synthetic depth maps.
pub const DEPTH_MAX_DEFAULT: f32 = 3.0;

/// Candidate multipliers for the walk length (times pixel count).
pub const ITERATION_FACTORS: [usize; 3] = [4, 5, 6];

/// Candidate smoothing strengths for the density map.
pub const SMOOTHING_SIGMAS: [f32; 3] = [15.0, 25.0, 35.0];

/// Degradation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradeSwitches {
    pub gamma: bool,
    pub noise: bool,
    pub block_quant: bool,
}

impl DegradeSwitches {
    pub fn all(enabled: bool) -> Self {
        DegradeSwitches {
            gamma: enabled,
            noise: enabled,
            block_quant: enabled,
        }
    }

    pub fn any(&self) -> bool {
        self.gamma || self.noise || self.block_quant
    }
}

/// Sampled synthesis parameters attached to every generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    /// Global haze density coefficient, U[0.2, 2.8].
    pub beta: f32,
    /// Non-homogeneity strength, U[0.5, 1].
    pub alpha: f32,
    /// Global atmospheric light, each component U[0.25, 1.8].
    pub light_rgb: [f32; 3],
    /// Walk length: pixel count times one of {4, 5, 6}.
    pub mcbm_iterations: usize,
    /// Gaussian smoothing sigma, one of {15, 25, 35}.
    pub gaussian_sigma: f32,
    /// Seed that reproduces the pair.
    pub seed: u64,
    pub degrade: DegradeSwitches,
}

/// Draw synthesis parameters. The walk length depends on the grid size, so
/// the target dimensions are part of the draw.
pub fn sample_params(height: usize, width: usize, rng: &mut Rng) -> HazeParams {
    let beta = rng.uniform(0.2, 2.8) as f32;
    let alpha = rng.uniform(0.5, 1.0) as f32;
    let light_rgb = [
        rng.uniform(0.25, 1.8) as f32,
        rng.uniform(0.25, 1.8) as f32,
        rng.uniform(0.25, 1.8) as f32,
    ];
    let factor = *rng.choice(&ITERATION_FACTORS);
    let gaussian_sigma = *rng.choice(&SMOOTHING_SIGMAS);
    HazeParams {
        beta,
        alpha,
        light_rgb,
        mcbm_iterations: height * width * factor,
        gaussian_sigma,
        seed: 0,
        degrade: DegradeSwitches::all(true),
    }
}

/// Generate a normalized non-homogeneous density field with the default
/// per-step displacement sigma.
pub fn generate_density(
    height: usize,
    width: usize,
    n: usize,
    sigma: f32,
    rng: &mut Rng,
) -> Result<ScalarField> {
    generate_density_with(height, width, n, sigma, WALK_DISPLACEMENT_SIGMA, rng)
}

/// Density generation with an explicit displacement sigma.
///
/// Walker starts at a uniformly random pixel. Each of the `n` iterations
/// moves it by a random unit step (reflecting at the borders), then deposits
/// one unit of mass at the walker position offset by a rounded Gaussian
/// displacement (clamped into the grid). The accumulator is smoothed with a
/// Gaussian of standard deviation `sigma` and min-max normalized to [0, 1].
pub fn generate_density_with(
    height: usize,
    width: usize,
    n: usize,
    sigma: f32,
    displacement_sigma: f64,
    rng: &mut Rng,
) -> Result<ScalarField> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "density grid must be non-empty".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "walk length must be positive".into(),
        ));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "smoothing sigma must be positive".into(),
        ));
    }

    let mut accum = vec![0.0f32; height * width];
    let mut i = rng.below(height) as i64;
    let mut j = rng.below(width) as i64;
    const STEPS: [(i64, i64); 4] = [(0, 1), (0, -1), (1, 0), (-1, 0)];
    for _ in 0..n {
        let (a, b) = *rng.choice(&STEPS);
        i = reflect(i + a, height as i64);
        j = reflect(j + b, width as i64);
        let di = rng.normal_scaled(displacement_sigma).round() as i64;
        let dj = rng.normal_scaled(displacement_sigma).round() as i64;
        let yi = (i + di).clamp(0, height as i64 - 1) as usize;
        let xj = (j + dj).clamp(0, width as i64 - 1) as usize;
        accum[yi * width + xj] += 1.0;
    }

    let raw = ScalarField::new(height, width, accum)?;
    let smoothed = gaussian_blur(&raw, sigma);
    Ok(smoothed.normalize_unit())
}

fn reflect(v: i64, len: i64) -> i64 {
    if v < 0 {
        -v - 1
    } else if v >= len {
        2 * len - 1 - v
    } else {
        v
    }
}

/// Separable Gaussian blur, kernel radius ceil(3*sigma), edge-replicate.
pub fn gaussian_blur(field: &ScalarField, sigma: f32) -> ScalarField {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * (sigma as f64) * (sigma as f64);
    let mut sum = 0.0f64;
    for t in -radius..=radius {
        let w = (-(t * t) as f64 / denom).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }

    let h = field.height() as i64;
    let w = field.width() as i64;
    let src = field.data();
    // Horizontal pass.
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, weight) in kernel.iter().enumerate() {
                let xx = (x + k as i64 - radius).clamp(0, w - 1);
                acc += weight * src[(y * w + xx) as usize] as f64;
            }
            tmp[(y * w + x) as usize] = acc as f32;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, weight) in kernel.iter().enumerate() {
                let yy = (y + k as i64 - radius).clamp(0, h - 1);
                acc += weight * tmp[(yy * w + x) as usize] as f64;
            }
            out[(y * w + x) as usize] = acc as f32;
        }
    }
    ScalarField::new(field.height(), field.width(), out).expect("blur preserves shape")
}

/// `T(x) = exp(-(beta + alpha * density(x)) * depth(x))`.
pub fn mcbm_transmission(
    depth: &ScalarField,
    beta: f32,
    alpha: f32,
    density: &ScalarField,
) -> Result<ScalarField> {
    if !depth.same_dims(density) {
        return Err(Error::dims(
            format!("{}x{}", depth.height(), depth.width()),
            format!("{}x{}", density.height(), density.width()),
        ));
    }
    if depth.min() < 0.0 {
        return Err(Error::InvalidArgument("depth must be non-negative".into()));
    }
    let data = depth
        .data()
        .iter()
        .zip(density.data())
        .map(|(&d, &b_tilde)| (-(beta + alpha * b_tilde) * d).exp())
        .collect();
    ScalarField::new(depth.height(), depth.width(), data)
}

// -------------------------------------------------------------------------
// Degradation pipeline
// -------------------------------------------------------------------------

/// Parameter ranges for the degradation draws, in draw order: gamma exponent,
/// noise sigma, block-quantization quality.
pub const GAMMA_RANGE: (f64, f64) = (0.7, 1.4);
pub const NOISE_SIGMA_RANGE: (f64, f64) = (0.002, 0.02);
pub const BLOCK_QUALITY_RANGE: (u32, u32) = (30, 80);

/// Apply the enabled degradations in order: gamma, noise, block quantization.
///
/// Draws are consumed from `rng` lazily and in that fixed order, one
/// parameter per enabled stage (the noise stage then draws one normal per
/// value), so a seeded caller can replay the drawn parameters.
pub fn degrade(image: &ImageRGB, params: &HazeParams, rng: &mut Rng) -> ImageRGB {
    let mut out = image.clone();
    if params.degrade.gamma {
        let exponent = rng.uniform(GAMMA_RANGE.0, GAMMA_RANGE.1) as f32;
        out = out.powf(exponent);
    }
    if params.degrade.noise {
        let sigma = rng.uniform(NOISE_SIGMA_RANGE.0, NOISE_SIGMA_RANGE.1);
        for v in out.data_mut() {
            *v += rng.normal_scaled(sigma) as f32;
        }
    }
    if params.degrade.block_quant {
        let quality = BLOCK_QUALITY_RANGE.0
            + rng.below((BLOCK_QUALITY_RANGE.1 - BLOCK_QUALITY_RANGE.0 + 1) as usize) as u32;
        out = block_quantize_luma(&out, quality);
    }
    out.clamp_non_negative();
    out
}

// JPEG luminance quantization table.
const QUANT_TABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn quality_scaled_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 {
        5000.0 / q
    } else {
        200.0 - 2.0 * q
    };
    let mut out = [0.0f64; 64];
    for (o, &base) in out.iter_mut().zip(QUANT_TABLE.iter()) {
        *o = ((base * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut basis = [[0.0f64; 8]; 8];
    for (u, row) in basis.iter_mut().enumerate() {
        let c = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (x, value) in row.iter_mut().enumerate() {
            *value = c * (((2 * x + 1) as f64) * (u as f64) * std::f64::consts::PI / 16.0).cos();
        }
    }
    basis
}

/// Quantize 8x8 DCT blocks of the luma channel; chroma passes through.
/// Partial edge blocks (and images smaller than 8 in either dimension) are
/// left untouched.
pub fn block_quantize_luma(image: &ImageRGB, quality: u32) -> ImageRGB {
    let h = image.height();
    let w = image.width();
    let table = quality_scaled_table(quality);
    let basis = dct_basis();

    // Full-range YCbCr; only Y is touched.
    let mut y_plane = vec![0.0f64; h * w];
    let mut cb = vec![0.0f64; h * w];
    let mut cr = vec![0.0f64; h * w];
    for (idx, px) in image.data().chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        y_plane[idx] =
            LUMA_WEIGHTS[0] as f64 * r + LUMA_WEIGHTS[1] as f64 * g + LUMA_WEIGHTS[2] as f64 * b;
        cb[idx] = -0.168736 * r - 0.331264 * g + 0.5 * b;
        cr[idx] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }

    let mut block = [0.0f64; 64];
    let mut coef = [0.0f64; 64];
    for by in 0..h / 8 {
        for bx in 0..w / 8 {
            for yy in 0..8 {
                for xx in 0..8 {
                    let idx = (by * 8 + yy) * w + bx * 8 + xx;
                    block[yy * 8 + xx] = y_plane[idx] * 255.0 - 128.0;
                }
            }
            forward_dct(&block, &basis, &mut coef);
            for (c, &q) in coef.iter_mut().zip(table.iter()) {
                *c = (*c / q).round() * q;
            }
            inverse_dct(&coef, &basis, &mut block);
            for yy in 0..8 {
                for xx in 0..8 {
                    let idx = (by * 8 + yy) * w + bx * 8 + xx;
                    y_plane[idx] = (block[yy * 8 + xx] + 128.0) / 255.0;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(h * w * 3);
    for idx in 0..h * w {
        let (yv, cbv, crv) = (y_plane[idx], cb[idx], cr[idx]);
        let r = yv + 1.402 * crv;
        let g = yv - 0.344136 * cbv - 0.714136 * crv;
        let b = yv + 1.772 * cbv;
        data.push(r as f32);
        data.push(g as f32);
        data.push(b as f32);
    }
    ImageRGB::new(h, w, data).expect("block quantization preserves shape")
}

fn forward_dct(block: &[f64; 64], basis: &[[f64; 8]; 8], out: &mut [f64; 64]) {
    // 2-D DCT as row transform then column transform.
    let mut tmp = [0.0f64; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += block[y * 8 + x] * basis[u][x];
            }
            tmp[y * 8 + u] = acc;
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += tmp[y * 8 + u] * basis[v][y];
            }
            out[v * 8 + u] = acc;
        }
    }
}

fn inverse_dct(coef: &[f64; 64], basis: &[[f64; 8]; 8], out: &mut [f64; 64]) {
    let mut tmp = [0.0f64; 64];
    for v in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += coef[v * 8 + u] * basis[u][x];
            }
            tmp[v * 8 + x] = acc;
        }
    }
    for x in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += tmp[v * 8 + x] * basis[v][y];
            }
            out[y * 8 + x] = acc;
        }
    }
}

// -------------------------------------------------------------------------
// Pair generation and synthetic depth
// -------------------------------------------------------------------------

/// Synthesize a full hazy/clean pair from a seed. The seed alone determines
/// every draw, so pairs can be rebuilt or generated concurrently with
/// `seed = base_seed + sample_index`.
pub fn generate_pair(
    clean: &ImageRGB,
    depth: &ScalarField,
    seed: u64,
    degrade_enabled: bool,
) -> Result<HazePair> {
    if !depth.matches_image(clean) {
        return Err(Error::dims(
            format!("{}x{}", clean.height(), clean.width()),
            format!("{}x{}", depth.height(), depth.width()),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut params = sample_params(clean.height(), clean.width(), &mut rng);
    params.seed = seed;
    params.degrade = DegradeSwitches::all(degrade_enabled);

    let density = generate_density(
        clean.height(),
        clean.width(),
        params.mcbm_iterations,
        params.gaussian_sigma,
        &mut rng,
    )?;
    let transmission = mcbm_transmission(depth, params.beta, params.alpha, &density)?;
    let light = AtmosphericLight::Global(params.light_rgb);
    let composed = compose(clean, &transmission, &light)?;
    let hazy = if degrade_enabled {
        degrade(&composed, &params, &mut rng)
    } else {
        composed
    };
    Ok(HazePair {
        clean: clean.clone(),
        hazy,
        transmission,
        light,
        depth: depth.clone(),
        params,
    })
}

/// Synthetic depth map kinds for when no estimated depth is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthKind {
    /// Linear top-to-bottom gradient.
    Ramp,
    /// Distance from a random center.
    Radial,
    /// Four octaves of value noise.
    Fractal,
}

impl std::str::FromStr for DepthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ramp" => Ok(DepthKind::Ramp),
            "radial" => Ok(DepthKind::Radial),
            "fractal" => Ok(DepthKind::Fractal),
            other => Err(format!("unknown depth kind '{other}'")),
        }
    }
}

/// Synthetic depth in [0, DEPTH_MAX_DEFAULT].
pub fn synth_depth(height: usize, width: usize, kind: DepthKind, rng: &mut Rng) -> ScalarField {
    synth_depth_with(height, width, kind, DEPTH_MAX_DEFAULT, rng)
}

/// Synthetic depth normalized to [0, d_max].
pub fn synth_depth_with(
    height: usize,
    width: usize,
    kind: DepthKind,
    d_max: f32,
    rng: &mut Rng,
) -> ScalarField {
    let raw = match kind {
        DepthKind::Ramp => {
            let mut data = Vec::with_capacity(height * width);
            for y in 0..height {
                let v = if height > 1 {
                    y as f32 / (height - 1) as f32
                } else {
                    0.0
                };
                data.extend(std::iter::repeat(v).take(width));
            }
            ScalarField::new(height, width, data).expect("ramp shape")
        }
        DepthKind::Radial => {
            let cy = rng.below(height) as f32;
            let cx = rng.below(width) as f32;
            let mut data = Vec::with_capacity(height * width);
            for y in 0..height {
                for x in 0..width {
                    let dy = y as f32 - cy;
                    let dx = x as f32 - cx;
                    data.push((dy * dy + dx * dx).sqrt());
                }
            }
            ScalarField::new(height, width, data).expect("radial shape")
        }
        DepthKind::Fractal => {
            let noise_seed = rng.next_u64();
            let mut data = Vec::with_capacity(height * width);
            let base = height.max(width) as f64;
            for y in 0..height {
                for x in 0..width {
                    let mut value = 0.0f64;
                    let mut amplitude = 1.0f64;
                    for octave in 0..4u64 {
                        let cells = (1usize << (octave + 2)) as f64;
                        let cell = base / cells;
                        value += amplitude
                            * value_noise(y as f64 / cell, x as f64 / cell, noise_seed, octave);
                        amplitude *= 0.5;
                    }
                    data.push(value as f32);
                }
            }
            ScalarField::new(height, width, data).expect("fractal shape")
        }
    };
    raw.normalize_unit().map(|v| v * d_max)
}

/// Procedurally textured clean image with dark-channel-friendly statistics:
/// smooth per-channel value noise plus a jittered grid of near-black pixels,
/// so every patch of radius >= 2 contains a dark pixel. Used by demos and
/// tests that need clean sources satisfying the dark channel prior.
pub fn textured_clean(height: usize, width: usize, seed: u64) -> ImageRGB {
    let mut rng = Rng::new(seed);
    let channel_seeds = [rng.next_u64(), rng.next_u64(), rng.next_u64()];
    let base = height.max(width) as f64;
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            for ch in 0..3 {
                let mut value = 0.0f64;
                let mut amplitude = 1.0f64;
                let mut norm = 0.0f64;
                for octave in 0..3u64 {
                    let cells = (1usize << (octave + 2)) as f64;
                    let cell = (base / cells).max(1.0);
                    value += amplitude
                        * value_noise(y as f64 / cell, x as f64 / cell, channel_seeds[ch], octave);
                    norm += amplitude;
                    amplitude *= 0.5;
                }
                data.push((0.05 + 0.7 * (value / norm)) as f32);
            }
        }
    }
    let mut img = ImageRGB::new(height, width, data).expect("texture shape");
    // Dark dots on a jittered 4x4 grid.
    for gy in 0..height.div_ceil(4) {
        for gx in 0..width.div_ceil(4) {
            let y = (gy * 4 + rng.below(4)).min(height - 1);
            let x = (gx * 4 + rng.below(4)).min(width - 1);
            for c in 0..3 {
                img.set(y, x, c, 0.01);
            }
        }
    }
    img
}

fn lattice_hash(iy: i64, ix: i64, seed: u64, octave: u64) -> f64 {
    let mut z = seed
        ^ octave.wrapping_mul(0x9e3779b97f4a7c15)
        ^ (iy as u64).wrapping_mul(0xd1b54a32d192ed03)
        ^ (ix as u64).wrapping_mul(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(y: f64, x: f64, seed: u64, octave: u64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = smoothstep(y - y0);
    let tx = smoothstep(x - x0);
    let (iy, ix) = (y0 as i64, x0 as i64);
    let v00 = lattice_hash(iy, ix, seed, octave);
    let v01 = lattice_hash(iy, ix + 1, seed, octave);
    let v10 = lattice_hash(iy + 1, ix, seed, octave);
    let v11 = lattice_hash(iy + 1, ix + 1, seed, octave);
    let top = v00 + (v01 - v00) * tx;
    let bottom = v10 + (v11 - v10) * tx;
    top + (bottom - top) * ty
}
