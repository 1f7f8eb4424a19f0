//! File I/O: PNG images and the raw field format.
//!
//! The raw format ("HZF1") preserves values bit-exactly, including values
//! above 1 and single-channel fields:
//!
//! ```text
//! "HZF1" | height u32 LE | width u32 LE | channels u8 (1 or 3) |
//! height*width*channels IEEE-754 f32 LE, row-major, channel-interleaved
//! ```
//!
//! PNG import maps 8-bit channels to value/255 and 16-bit to value/65535,
//! with no gamma decode. PNG export clamps to [0, 1] and quantizes to 8-bit;
//! use the raw format when full range or exactness matters.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageRGB, ScalarField};

const FIELD_MAGIC: &[u8; 4] = b"HZF1";

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load an image from PNG (8/16-bit) or the raw field format (3-channel).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    if path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("hzf"))
        .unwrap_or(false)
    {
        return load_image_raw(path);
    }
    load_png(path)
}

fn load_png(path: &Path) -> Result<ImageRGB> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    // Expand palette/low-bit-depth images to 8-bit; 16-bit stays 16-bit.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::PngDecode {
        path: path.into(),
        message: e.to_string(),
    })?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::PngDecode {
            path: path.into(),
            message: "image too large".into(),
        })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::PngDecode {
        path: path.into(),
        message: e.to_string(),
    })?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();

    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]) as f32 / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                detail: format!("bit depth {other:?} after expansion"),
            })
        }
    };
    if samples.len() != width * height * channels {
        return Err(Error::PngDecode {
            path: path.into(),
            message: "decoded size does not match header".into(),
        });
    }

    // Alpha is dropped; grayscale is replicated across the three channels.
    let mut data = Vec::with_capacity(width * height * 3);
    match info.color_type {
        png::ColorType::Rgb => data.extend_from_slice(&samples),
        png::ColorType::Rgba => {
            for px in samples.chunks_exact(4) {
                data.extend_from_slice(&px[..3]);
            }
        }
        png::ColorType::Grayscale => {
            for &v in &samples {
                data.extend_from_slice(&[v, v, v]);
            }
        }
        png::ColorType::GrayscaleAlpha => {
            for px in samples.chunks_exact(2) {
                data.extend_from_slice(&[px[0], px[0], px[0]]);
            }
        }
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                detail: "indexed png was not expanded".into(),
            })
        }
    }
    ImageRGB::new(height, width, data)
}

/// Encode an image as 8-bit RGB PNG bytes, clamping values into [0, 1].
pub fn image_png_bytes(image: &ImageRGB) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_png(
        image.width() as u32,
        image.height() as u32,
        png::ColorType::Rgb,
        &bytes,
    )
}

/// Encode a scalar field as 8-bit grayscale PNG bytes, clamping into [0, 1].
pub fn field_png_bytes(field: &ScalarField) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = field
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_png(
        field.width() as u32,
        field.height() as u32,
        png::ColorType::Grayscale,
        &bytes,
    )
}

/// Write an image as 8-bit RGB PNG, clamping values into [0, 1].
pub fn save_image_png(image: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &image_png_bytes(image)?)
}

/// Write a scalar field as 8-bit grayscale PNG, clamping into [0, 1].
pub fn save_field_png(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &field_png_bytes(field)?)
}

fn encode_png(width: u32, height: u32, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width, height);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let enc_err = |message: String| Error::PngEncode {
        path: "<memory>".into(),
        message,
    };
    let mut writer = encoder.write_header().map_err(|e| enc_err(e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| enc_err(e.to_string()))?;
    drop(writer);
    Ok(out)
}

fn write_raw(path: &Path, height: usize, width: usize, channels: u8, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(13 + data.len() * 4);
    bytes.extend_from_slice(FIELD_MAGIC);
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.push(channels);
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

fn read_raw(path: &Path) -> Result<(usize, usize, u8, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |detail: &str| Error::CorruptField {
        path: path.into(),
        detail: detail.into(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != FIELD_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let height = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let width = u32::from_le_bytes(u32buf) as usize;
    let mut chbuf = [0u8; 1];
    r.read_exact(&mut chbuf).map_err(|e| Error::io(path, e))?;
    let channels = chbuf[0];
    if channels != 1 && channels != 3 {
        return Err(corrupt("channels must be 1 or 3"));
    }
    if height == 0 || width == 0 {
        return Err(corrupt("zero dimension"));
    }
    let count = height * width * channels as usize;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(corrupt("non-finite value"));
        }
        data.push(v);
    }
    Ok((height, width, channels, data))
}

/// Save a scalar field in the raw format. Round-trips bit-exactly.
pub fn save_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    write_raw(
        path.as_ref(),
        field.height(),
        field.width(),
        1,
        field.data(),
    )
}

/// Load a scalar field from the raw format.
pub fn load_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let (height, width, channels, data) = read_raw(path)?;
    if channels != 1 {
        return Err(Error::CorruptField {
            path: path.into(),
            detail: format!("expected 1 channel, found {channels}"),
        });
    }
    ScalarField::new(height, width, data)
}

/// Save an image in the raw format (3 channels). Round-trips bit-exactly.
pub fn save_image_raw(image: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    write_raw(
        path.as_ref(),
        image.height(),
        image.width(),
        3,
        image.data(),
    )
}

/// Load a 3-channel raw image.
pub fn load_image_raw(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let (height, width, channels, data) = read_raw(path)?;
    if channels != 3 {
        return Err(Error::CorruptField {
            path: path.into(),
            detail: format!("expected 3 channels, found {channels}"),
        });
    }
    ImageRGB::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_field_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.hzf");
        let field = ScalarField::new(1, 1, vec![0.5]).unwrap();
        save_field(&field, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // magic(4) + height(4) + width(4) + channels(1) + one f32(4)
        assert_eq!(bytes.len(), 17);
        assert_eq!(&bytes[..4], b"HZF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], 1);
        assert_eq!(f32::from_le_bytes(bytes[13..17].try_into().unwrap()), 0.5);
    }

    #[test]
    fn raw_field_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.hzf");
        let field = ScalarField::new(2, 3, vec![0.1, -2.5, 3.75, 0.0, 1e-20, 1.8]).unwrap();
        save_field(&field, &path).unwrap();
        let back = load_field(&path).unwrap();
        assert_eq!(field, back);
        // Writing again produces identical bytes.
        let first = std::fs::read(&path).unwrap();
        save_field(&back, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn raw_payload_is_six_le_floats_for_2x3() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.hzf");
        let field = ScalarField::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        save_field(&field, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 13 + 6 * 4);
        for (i, chunk) in bytes[13..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            assert_eq!(v, (i + 1) as f32);
        }
    }

    #[test]
    fn raw_image_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.hzf");
        let img = ImageRGB::new(1, 2, vec![0.0, 0.5, 1.8, -0.25, 0.125, 1.0]).unwrap();
        save_image_raw(&img, &path).unwrap();
        assert_eq!(load_image_raw(&path).unwrap(), img);
        // load_image dispatches on the extension.
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hzf");
        std::fs::write(
            &path,
            b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00",
        )
        .unwrap();
        assert!(matches!(load_field(&path), Err(Error::CorruptField { .. })));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.hzf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HZF1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&[0u8; 4]); // 1 float instead of 4
        std::fs::write(&path, bytes).unwrap();
        assert!(load_field(&path).is_err());
    }

    #[test]
    fn png_zero_and_full_scale_map_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let zero = dir.path().join("zero.png");
        let full = dir.path().join("full.png");
        std::fs::write(
            &zero,
            encode_png(2, 2, png::ColorType::Rgb, &[0u8; 12]).unwrap(),
        )
        .unwrap();
        std::fs::write(
            &full,
            encode_png(2, 2, png::ColorType::Rgb, &[255u8; 12]).unwrap(),
        )
        .unwrap();
        let z = load_image(&zero).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let f = load_image(&full).unwrap();
        assert!(f.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn png_16bit_midpoint_scales_by_65535() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid16.png");
        let file = std::io::BufWriter::new(File::create(&path).unwrap());
        let mut encoder = png::Encoder::new(file, 2, 2);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder.write_header().unwrap();
        let value = 32768u16.to_be_bytes();
        let mut bytes = Vec::new();
        for _ in 0..12 {
            bytes.extend_from_slice(&value);
        }
        writer.write_image_data(&bytes).unwrap();
        drop(writer);

        let img = load_image(&path).unwrap();
        let expected = 32768.0f64 / 65535.0;
        for &v in img.data() {
            assert!((v as f64 - expected).abs() < 1e-7, "{v} vs {expected}");
        }
    }

    #[test]
    fn png_export_round_trips_8bit_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let data: Vec<f32> = (0..27).map(|i| (i * 9 % 256) as f32 / 255.0).collect();
        let img = ImageRGB::new(3, 3, data).unwrap();
        save_image_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_file_errors() {
        assert!(load_image("/nonexistent/definitely_not_here.png").is_err());
    }
}
