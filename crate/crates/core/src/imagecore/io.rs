use std::fs;
use std::io::Write;
use std::path::Path;

use super::ScalarImage;
use crate::error::{Error, Result};

/// Sample depth for PGM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

impl TryFrom<u32> for BitDepth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidArgument(format!("bit depth {other} (expected 8 or 16)"))),
        }
    }
}

/// Loads a binary PGM (P5) or grayscale PNG. A sample `s` with maximum
/// value `M` maps to `s / M`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ScalarImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|reason| Error::format(path, reason))
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|reason| Error::format(path, reason))
    } else {
        Err(Error::format(
            path,
            "unsupported format (expected binary PGM or grayscale PNG)",
        ))
    }
}

/// Writes a binary PGM. Samples are quantized with round-half-up.
pub fn save_image(img: &ScalarImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img, depth);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn quantize(v: f32, max: u32) -> u32 {
    let s = (f64::from(v) * f64::from(max) + 0.5).floor();
    (s as u32).min(max)
}

fn encode_pgm(img: &ScalarImage, depth: BitDepth) -> Vec<u8> {
    let max = depth.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), max).into_bytes();
    match depth {
        BitDepth::Eight => out.extend(img.data().iter().map(|&v| quantize(v, max) as u8)),
        BitDepth::Sixteen => {
            for &v in img.data() {
                out.extend_from_slice(&(quantize(v, max) as u16).to_be_bytes());
            }
        }
    }
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<ScalarImage, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = header_number(bytes, &mut pos)?;
    }
    let [width, height, max] = fields;
    if width == 0 || height == 0 {
        return Err(format!("corrupt header: dimensions {width}x{height}"));
    }
    if max == 0 || max > 65535 {
        return Err(format!("corrupt header: maxval {max}"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("corrupt header: missing separator after maxval".into()),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| "corrupt header: dimensions overflow".to_string())?;
    let bytes_per = if max < 256 { 1 } else { 2 };
    let raster = &bytes[pos..];
    if raster.len() < n * bytes_per {
        return Err(format!(
            "truncated raster: {} bytes, expected {}",
            raster.len(),
            n * bytes_per
        ));
    }
    let scale = 1.0 / max as f64;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let s = if bytes_per == 1 {
            u32::from(raster[i])
        } else {
            u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
        };
        if s as usize > max {
            return Err(format!("sample {s} exceeds maxval {max}"));
        }
        data.push((f64::from(s) * scale) as f32);
    }
    ScalarImage::new(width, height, data).map_err(|e| e.to_string())
}

fn header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("corrupt header: unexpected end of file".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err("corrupt header: expected a number".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "corrupt header: number out of range".to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<ScalarImage, String> {
    let decoded =
        image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| format!("corrupt PNG: {e}"))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f32> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|s| (f64::from(s) / 255.0) as f32)
            .collect(),
        image::DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|s| (f64::from(s) / 65535.0) as f32)
            .collect(),
        other => return Err(format!("unsupported PNG colour type {:?}", other.color())),
    };
    ScalarImage::new(w, h, data).map_err(|e| e.to_string())
}
