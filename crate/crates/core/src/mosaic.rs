//! Transform chaining, canvas bookkeeping and average-probability blending.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{quantize_unit, same_dims, save_image, BinaryMask, BitDepth, ScalarImage};
use crate::warp::{frame_corners, warp_image, AffineTransform};

pub const DEFAULT_CANVAS_LIMIT: usize = 8192;

/// Which frame the mosaic is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    First,
    /// Frame `⌊n/2⌋`.
    #[default]
    Center,
}

impl Reference {
    pub fn index(self, n_frames: usize) -> usize {
        match self {
            Reference::First => 0,
            Reference::Center => n_frames / 2,
        }
    }
}

impl FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Reference::First),
            "center" | "centre" => Ok(Reference::Center),
            other => Err(Error::InvalidArgument(format!(
                "unknown reference '{other}' (expected first or center)"
            ))),
        }
    }
}

/// `absolute[k]` maps frame `k` coordinates into the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformChain {
    pub absolute: Vec<AffineTransform>,
    pub reference_index: usize,
}

impl TransformChain {
    pub fn len(&self) -> usize {
        self.absolute.len()
    }

    pub fn is_empty(&self) -> bool {
        self.absolute.is_empty()
    }
}

/// Accumulates `pairwise` (frame `k+1` → frame `k`) outwards from
/// `reference_index`, inverting links that are traversed backwards.
pub fn chain_transforms(pairwise: &[AffineTransform], reference_index: usize) -> Result<TransformChain> {
    let n = pairwise.len() + 1;
    if reference_index >= n {
        return Err(Error::InvalidArgument(format!(
            "reference index {reference_index} out of range for {n} frames"
        )));
    }
    let mut absolute = vec![AffineTransform::IDENTITY; n];
    for k in reference_index + 1..n {
        absolute[k] = absolute[k - 1].compose(&pairwise[k - 1])?;
    }
    for k in (0..reference_index).rev() {
        absolute[k] = absolute[k + 1].compose(&pairwise[k].invert())?;
    }
    Ok(TransformChain {
        absolute,
        reference_index,
    })
}

/// Canvas geometry: canvas pixel `(i, j)` sits at reference coordinates
/// `(i + offset.0, j + offset.1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub offset: (i64, i64),
}

pub fn compute_canvas(frame_width: usize, frame_height: usize, chain: &TransformChain) -> Result<Canvas> {
    compute_canvas_with_limit(frame_width, frame_height, chain, DEFAULT_CANVAS_LIMIT)
}

/// Bounding box of every frame's pixel-edge corners in reference
/// coordinates. The extent is rounded up; the offset is the first pixel
/// centre at or beyond the minimum edge.
pub fn compute_canvas_with_limit(
    frame_width: usize,
    frame_height: usize,
    chain: &TransformChain,
    limit: usize,
) -> Result<Canvas> {
    if chain.is_empty() {
        return Err(Error::Empty("transform chain".into()));
    }
    if frame_width == 0 || frame_height == 0 {
        return Err(Error::InvalidArgument("frame dimensions must be positive".into()));
    }
    let (w, h) = (frame_width as f64, frame_height as f64);
    let edges = [(-0.5, -0.5), (w - 0.5, -0.5), (w - 0.5, h - 0.5), (-0.5, h - 0.5)];
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in &chain.absolute {
        for &(x, y) in &edges {
            let (u, v) = t.apply(x, y);
            x0 = x0.min(u);
            y0 = y0.min(v);
            x1 = x1.max(u);
            y1 = y1.max(v);
        }
    }
    let too_big = |extent: f64| !extent.is_finite() || extent > limit as f64;
    if too_big(x1 - x0) || too_big(y1 - y0) {
        let clip = |e: f64| if e.is_finite() { e.ceil() as usize } else { usize::MAX };
        return Err(Error::DegenerateChain {
            width: clip(x1 - x0),
            height: clip(y1 - y0),
            limit,
        });
    }
    Ok(Canvas {
        width: ((x1 - x0 - 1e-9).ceil() as usize).max(1),
        height: ((y1 - y0 - 1e-9).ceil() as usize).max(1),
        offset: ((x0 + 0.5 - 1e-9).ceil() as i64, (y0 + 0.5 - 1e-9).ceil() as i64),
    })
}

/// Running per-pixel sum and count of contributing frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
    pub offset: (i64, i64),
    pub width: usize,
    pub height: usize,
    /// Pixel-centre corners of each blended frame, in canvas coordinates.
    pub outlines: Vec<[(f64, f64); 4]>,
}

impl Mosaic {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / f64::from(self.count[i])
        }
    }

    /// `sum / count`, with 0 where no frame contributed.
    pub fn rendered(&self) -> ScalarImage {
        let data: Vec<f64> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.value(x, y))
            .collect();
        ScalarImage::from_f64_clamped(self.width, self.height, &data).expect("canvas dimensions are positive")
    }

    pub fn coverage(&self) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.count.iter().map(|&c| c > 0).collect())
            .expect("canvas dimensions are positive")
    }
}

/// Warps every `(frame, visibility)` into the canvas and averages.
pub fn blend(frames: &[(ScalarImage, BinaryMask)], chain: &TransformChain) -> Result<Mosaic> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to blend".into()));
    }
    if frames.len() != chain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames vs {} chained transforms",
            frames.len(),
            chain.len()
        )));
    }
    let dims = frames[0].0.dims();
    for (img, mask) in frames {
        same_dims(dims, img.dims())?;
        same_dims(dims, mask.dims())?;
    }
    let canvas = compute_canvas(dims.0, dims.1, chain)?;
    let to_reference = AffineTransform::translation(canvas.offset.0 as f64, canvas.offset.1 as f64);
    let from_reference = to_reference.invert();
    let n = canvas.width * canvas.height;
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    let mut outlines = Vec::with_capacity(frames.len());
    for ((img, mask), abs) in frames.iter().zip(&chain.absolute) {
        let canvas_to_frame = abs.invert().compose(&to_reference)?;
        let warped = warp_image(img, mask, &canvas_to_frame, canvas.width, canvas.height)?;
        for (i, (&v, &ok)) in warped.image.data().iter().zip(warped.validity.data()).enumerate() {
            if ok {
                sum[i] += f64::from(v);
                count[i] += 1;
            }
        }
        let frame_to_canvas = from_reference.compose(abs)?;
        outlines.push(frame_corners(dims.0, dims.1).map(|(x, y)| frame_to_canvas.apply(x, y)));
    }
    Ok(Mosaic {
        sum,
        count,
        offset: canvas.offset,
        width: canvas.width,
        height: canvas.height,
        outlines,
    })
}

const FIRST_COLOUR: [u8; 3] = [0, 0, 255];
const LAST_COLOUR: [u8; 3] = [255, 0, 0];

/// Path of the annotated companion of a rendered mosaic.
pub fn annotated_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mosaic");
    path.with_file_name(format!("{stem}_annotated.png"))
}

/// Writes the mosaic as a 16-bit PGM at `path`. With `annotate`, also
/// writes an RGB PNG next to it with the first frame outlined in blue and
/// the last in red. Returns every path written.
pub fn render(m: &Mosaic, path: impl AsRef<Path>, annotate: bool) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    if m.outlines.is_empty() {
        return Err(Error::Empty("mosaic has no frames".into()));
    }
    let img = m.rendered();
    save_image(&img, path, BitDepth::Sixteen)?;
    let mut written = vec![path.to_path_buf()];
    if annotate {
        let out = annotated_path(path);
        annotated_image(m, &img).save(&out).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&out, io),
            other => Error::format(&out, other.to_string()),
        })?;
        written.push(out);
    }
    Ok(written)
}

/// Grey mosaic with first and last frame outlines drawn on top.
pub fn annotated_image(m: &Mosaic, rendered: &ScalarImage) -> image::RgbImage {
    let mut rgb = image::RgbImage::from_fn(m.width as u32, m.height as u32, |x, y| {
        let g = quantize_unit(rendered.get(x as usize, y as usize), 255) as u8;
        image::Rgb([g, g, g])
    });
    let n = m.outlines.len();
    draw_quad(&mut rgb, &m.outlines[0], FIRST_COLOUR);
    if n > 1 {
        draw_quad(&mut rgb, &m.outlines[n - 1], LAST_COLOUR);
    }
    rgb
}

fn draw_quad(img: &mut image::RgbImage, corners: &[(f64, f64); 4], colour: [u8; 3]) {
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        draw_line(img, a, b, colour);
    }
}

/// Bresenham line between rounded endpoints; off-canvas pixels are skipped.
fn draw_line(img: &mut image::RgbImage, a: (f64, f64), b: (f64, f64), colour: [u8; 3]) {
    let (mut x, mut y) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, image::Rgb(colour));
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
