//! Image files: 8/16-bit PNG (scaled to [0, 1]) and the lossless raw
//! float container.
//!
//! Raw layout, little-endian: `b"BSIM"`, `u32` version, `u32` channels,
//! `u32` size, then `channels * size * size` `f64` values in [`Image`] order.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::image::Image;

pub const RAW_MAGIC: &[u8; 4] = b"BSIM";
pub const RAW_VERSION: u32 = 1;
const RAW_HEADER: usize = 16;

pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER + img.as_slice().len() * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(img.size() as u32).to_le_bytes());
    for v in img.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |message: String| Error::Format { path: path.to_path_buf(), message };
    if bytes.len() < RAW_HEADER || &bytes[..4] != RAW_MAGIC {
        return Err(bad("not a raw image (missing BSIM magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != RAW_VERSION {
        return Err(bad(format!("unsupported raw image version {version}")));
    }
    let (channels, size) = (word(8) as usize, word(12) as usize);
    let expected = channels
        .checked_mul(size)
        .and_then(|v| v.checked_mul(size))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if bytes.len() - RAW_HEADER != expected {
        return Err(bad(format!(
            "body has {} bytes, header implies {expected}",
            bytes.len() - RAW_HEADER
        )));
    }
    let data = bytes[RAW_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::from_vec(channels, size, data).map_err(|e| bad(e.to_string()))
}

pub fn write_raw(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_raw(img)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// Decodes a square PNG into `[0, 1]`-scaled channels: gray gives one
/// channel, gray+alpha two, RGB three, RGBA four.
pub fn read_png(path: &Path) -> Result<Image> {
    let decode = |message: String| Error::ImageDecode { path: path.to_path_buf(), message };
    let dynimg = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode(e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    if w != h {
        return Err(decode(format!("image is {w}x{h}, expected square")));
    }
    let (channels, values): (usize, Vec<f64>) = match &dynimg {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLumaA8(b) => (2, b.as_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgba8(b) => (4, b.as_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageLumaA16(b) => (2, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgba16(b) => (4, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        other => return Err(decode(format!("unsupported pixel format {:?}", other.color()))),
    };
    // interleaved -> planar
    let n = w;
    Ok(Image::from_fn(channels, n, |c, r, k| values[(r * n + k) * channels + c]))
}

/// Writes one channel as a 16-bit grayscale PNG after clamping to [0, 1].
pub fn write_png16(path: &Path, img: &Image, channel: usize) -> Result<()> {
    let n = img.size() as u32;
    let buf: Vec<u16> = img
        .channel(channel)
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let gray = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(n, n, buf)
        .expect("buffer matches dimensions");
    gray.save(path).map_err(|e| Error::ImageDecode { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads a raw container or PNG depending on the extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => read_png(path),
        _ => read_raw(path),
    }
}

/// Stacks the channels of several same-size images.
pub fn stack_channels(parts: Vec<Image>) -> Result<Image> {
    let size = parts.first().map(Image::size).ok_or_else(|| Error::InvalidConfig("no image parts".into()))?;
    if let Some(p) = parts.iter().find(|p| p.size() != size) {
        return Err(Error::SizeMismatch { expected: size, got: p.size() });
    }
    let channels = parts.iter().map(Image::channels).sum();
    let data = parts.into_iter().flat_map(Image::into_vec).collect();
    Image::from_vec(channels, size, data)
}
