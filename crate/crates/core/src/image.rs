//! Raster containers: RGB images, scalar fields, atmospheric light.
//!
//! `ImageRGB` carries linear intensities in row-major, channel-interleaved
//! order. Values above 1 are legal (atmospheric light may reach 1.8); image
//! data loaded from files is non-negative, while velocity fields reuse the
//! same container with signed values. `ScalarField` is the single-channel
//! counterpart used for transmission, depth, density, and dark channels.

use crate::error::{Error, Result};

/// H×W×3 real-valued raster, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// H×W real-valued map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Atmospheric light: a global color during synthesis, or a spatially
/// varying map when extracted from real images.
#[derive(Debug, Clone, PartialEq)]
pub enum AtmosphericLight {
    Global([f32; 3]),
    Spatial(ImageRGB),
}

/// Rec. 601 luma weights, used consistently by SSIM, the degradation
/// pipeline, and the guided-filter guide.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

fn check_finite(data: &[f32]) -> Result<()> {
    for (index, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

impl ImageRGB {
    /// Wrap raw channel-interleaved data. Rejects wrong lengths and
    /// non-finite values; signed values are allowed (velocities use them).
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width * 3 {
            return Err(Error::dims(
                format!("{} values ({}x{}x3)", height * width * 3, height, width),
                format!("{}", data.len()),
            ));
        }
        check_finite(&data)?;
        Ok(ImageRGB {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageRGB {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        ImageRGB {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn same_dims(&self, other: &ImageRGB) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Elementwise map into a new image.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageRGB {
        ImageRGB {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamp every value to be >= 0 in place.
    pub fn clamp_non_negative(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// True when any value is negative.
    pub fn has_negative(&self) -> bool {
        self.data.iter().any(|&v| v < 0.0)
    }

    /// Per-pixel Rec. 601 luma.
    pub fn luma(&self) -> ScalarField {
        let mut out = Vec::with_capacity(self.height * self.width);
        for px in self.data.chunks_exact(3) {
            out.push(LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]);
        }
        ScalarField {
            height: self.height,
            width: self.width,
            data: out,
        }
    }

    /// Crop a rectangular window (top-left origin, given size).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageRGB {
        assert!(
            y0 + h <= self.height && x0 + w <= self.width,
            "crop out of bounds"
        );
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = &self.data[(y * self.width + x0) * 3..(y * self.width + x0 + w) * 3];
            data.extend_from_slice(row);
        }
        ImageRGB {
            height: h,
            width: w,
            data,
        }
    }

    /// Raise every value to `exponent` (values must be >= 0).
    pub fn powf(&self, exponent: f32) -> ImageRGB {
        self.map(|v| v.max(0.0).powf(exponent))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

impl ScalarField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "field dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width {
            return Err(Error::dims(
                format!("{} values ({}x{})", height * width, height, width),
                format!("{}", data.len()),
            ));
        }
        check_finite(&data)?;
        Ok(ScalarField {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ScalarField {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        ScalarField {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &ScalarField) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn matches_image(&self, image: &ImageRGB) -> bool {
        self.height == image.height() && self.width == image.width()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ScalarField {
        ScalarField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    /// Min-max normalize into [0, 1]; a constant field maps to all zeros.
    /// Division (not reciprocal multiplication) pins the endpoints at
    /// exactly 0 and 1.
    pub fn normalize_unit(&self) -> ScalarField {
        let lo = self.min();
        let hi = self.max();
        if hi <= lo {
            return ScalarField::zeros(self.height, self.width);
        }
        let span = hi - lo;
        self.map(|v| (v - lo) / span)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ScalarField {
        assert!(
            y0 + h <= self.height && x0 + w <= self.width,
            "crop out of bounds"
        );
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        ScalarField {
            height: h,
            width: w,
            data,
        }
    }

    /// Lift to a gray RGB image (every channel equal).
    pub fn to_rgb(&self) -> ImageRGB {
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        ImageRGB {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

impl AtmosphericLight {
    /// Light color at a pixel.
    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        match self {
            AtmosphericLight::Global(rgb) => rgb[c],
            AtmosphericLight::Spatial(img) => img.get(y, x, c),
        }
    }

    /// Broadcast to a full image of the given size.
    pub fn to_image(&self, height: usize, width: usize) -> ImageRGB {
        match self {
            AtmosphericLight::Global(rgb) => {
                let mut data = Vec::with_capacity(height * width * 3);
                for _ in 0..height * width {
                    data.extend_from_slice(rgb);
                }
                ImageRGB {
                    height,
                    width,
                    data,
                }
            }
            AtmosphericLight::Spatial(img) => img.clone(),
        }
    }
}
