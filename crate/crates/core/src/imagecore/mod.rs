//! Image carriers shared by every stage of the pipeline.
//!
//! [`ScalarImage`] holds intensities or vessel probabilities in `[0, 1]`,
//! stored row-major as `f32` (enough headroom for 16-bit quantized data).
//! [`BinaryMask`] holds visibility regions and thresholded segmentations.
//! Pixel centres sit at integer coordinates with the origin at the centre
//! of the top-left pixel.

mod io;

pub(crate) use io::quantize as quantize_unit;
pub use io::{load_image, save_image, BitDepth};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarImage {
    /// Builds an image, checking dimensions and the `[0, 1]` value range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("value {v} at index {i} outside [0, 1]")));
        }
        Ok(ScalarImage { width, height, data })
    }

    /// Builds an image from `f64` samples, clamping each into `[0, 1]`.
    /// NaN samples are rejected.
    pub fn from_f64_clamped(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidImage("NaN sample".into()));
        }
        Ok(ScalarImage {
            width,
            height,
            data: data.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        ScalarImage::new(width, height, vec![value; width * height])
    }

    /// Evaluates `f(x, y)` at every pixel centre, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dims(width, height, width * height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                if v.is_nan() {
                    return Err(Error::InvalidImage(format!("NaN at ({x}, {y})")));
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        Ok(ScalarImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Zeroes every pixel where `mask` is false.
    pub fn masked(&self, mask: &BinaryMask) -> Result<ScalarImage> {
        same_dims(self.dims(), mask.dims())?;
        let data = self
            .data
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(ScalarImage {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(BinaryMask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        BinaryMask::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height, width * height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(BinaryMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        same_dims(self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Mask rendered as an image (true = 1, false = 0).
    pub fn to_image(&self) -> ScalarImage {
        ScalarImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Thresholds a probability map; pixels equal to the threshold are foreground.
pub fn binarize(p: &ScalarImage, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let data = p.data.iter().map(|&v| f64::from(v) >= threshold).collect();
    BinaryMask::new(p.width, p.height, data)
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("empty dimensions {width}x{height}")));
    }
    if len != width * height {
        return Err(Error::InvalidImage(format!(
            "data length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

pub(crate) fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}
