//! Planar affine transforms and mask-aware inverse warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{same_dims, BinaryMask, ScalarImage};

pub const MIN_ABS_DET: f64 = 1.0 / 16.0;
pub const MAX_ABS_DET: f64 = 16.0;

/// `(x, y) -> (a11·x + a12·y + tx, a21·x + a22·y + ty)`.
///
/// Construction rejects non-finite parameters and any determinant whose
/// magnitude falls outside `[1/16, 16]`, so every value is invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine", into = "RawAffine")]
pub struct AffineTransform {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    tx: f64,
    ty: f64,
}

#[derive(Serialize, Deserialize)]
struct RawAffine {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    tx: f64,
    ty: f64,
}

impl TryFrom<RawAffine> for AffineTransform {
    type Error = Error;

    fn try_from(r: RawAffine) -> Result<Self> {
        AffineTransform::new(r.a11, r.a12, r.a21, r.a22, r.tx, r.ty)
    }
}

impl From<AffineTransform> for RawAffine {
    fn from(t: AffineTransform) -> Self {
        RawAffine {
            a11: t.a11,
            a12: t.a12,
            a21: t.a21,
            a22: t.a22,
            tx: t.tx,
            ty: t.ty,
        }
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        AffineTransform::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64, tx: f64, ty: f64) -> Result<Self> {
        let params = [a11, a12, a21, a22, tx, ty];
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite affine parameters {params:?}"
            )));
        }
        let det = a11 * a22 - a12 * a21;
        if !(MIN_ABS_DET..=MAX_ABS_DET).contains(&det.abs()) {
            return Err(Error::DegenerateTransform { det });
        }
        Ok(AffineTransform {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
        })
    }

    /// Parameters in `(a11, a12, a21, a22, tx, ty)` order.
    pub fn from_params(p: &[f64; 6]) -> Result<Self> {
        AffineTransform::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn params(&self) -> [f64; 6] {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform {
            tx,
            ty,
            ..AffineTransform::IDENTITY
        }
    }

    /// Uniform scale and rotation (radians) about `(cx, cy)`, followed by a
    /// translation.
    pub fn similarity_about(cx: f64, cy: f64, angle: f64, scale: f64, tx: f64, ty: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let (a11, a12, a21, a22) = (scale * c, -scale * s, scale * s, scale * c);
        AffineTransform::new(
            a11,
            a12,
            a21,
            a22,
            cx - a11 * cx - a12 * cy + tx,
            cy - a21 * cx - a22 * cy + ty,
        )
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a21, self.a22]]
    }

    pub fn translation_part(&self) -> (f64, f64) {
        (self.tx, self.ty)
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a11 * x + self.a12 * y + self.tx,
            self.a21 * x + self.a22 * y + self.ty,
        )
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> Result<AffineTransform> {
        let (o, i) = (self, inner);
        AffineTransform::new(
            o.a11 * i.a11 + o.a12 * i.a21,
            o.a11 * i.a12 + o.a12 * i.a22,
            o.a21 * i.a11 + o.a22 * i.a21,
            o.a21 * i.a12 + o.a22 * i.a22,
            o.a11 * i.tx + o.a12 * i.ty + o.tx,
            o.a21 * i.tx + o.a22 * i.ty + o.ty,
        )
    }

    /// Always succeeds: the determinant bound is symmetric under inversion.
    pub fn invert(&self) -> AffineTransform {
        let d = self.det();
        let (b11, b12, b21, b22) = (self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d);
        AffineTransform {
            a11: b11,
            a12: b12,
            a21: b21,
            a22: b22,
            tx: -(b11 * self.tx + b12 * self.ty),
            ty: -(b21 * self.tx + b22 * self.ty),
        }
    }

    /// Conjugates by an isotropic rescaling of the coordinate frame:
    /// the linear part is unchanged and the translation is multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> AffineTransform {
        AffineTransform {
            tx: self.tx * factor,
            ty: self.ty * factor,
            ..*self
        }
    }

    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pixel-centre corners of a `width × height` frame.
pub fn frame_corners(width: usize, height: usize) -> [(f64, f64); 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

/// Largest distance between where `a` and `b` send the frame corners.
pub fn corner_reprojection_error(a: &AffineTransform, b: &AffineTransform, width: usize, height: usize) -> f64 {
    frame_corners(width, height)
        .iter()
        .map(|&(x, y)| {
            let (p, q) = (a.apply(x, y), b.apply(x, y));
            (p.0 - q.0).hypot(p.1 - q.1)
        })
        .fold(0.0, f64::max)
}

/// Bilinear lookups over an image plus optional visibility mask.
///
/// A sample is valid when every neighbour carrying nonzero interpolation
/// weight lies inside the image and inside the mask. At exact integer
/// positions only the coincident pixel is needed.
#[derive(Clone, Copy)]
pub(crate) struct Sampler<'a> {
    data: &'a [f32],
    mask: Option<&'a [bool]>,
    width: usize,
    height: usize,
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(img: &'a ScalarImage, mask: Option<&'a BinaryMask>) -> Self {
        Sampler {
            data: img.data(),
            mask: mask.map(BinaryMask::data),
            width: img.width(),
            height: img.height(),
        }
    }

    #[inline]
    fn visible(&self, idx: usize) -> bool {
        self.mask.is_none_or(|m| m[idx])
    }

    #[inline]
    fn cell(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (xf, yf) = (x.floor(), y.floor());
        let (x0, y0) = (xf as usize, yf as usize);
        let (fx, fy) = (x - xf, y - yf);
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        if (fx > 0.0 && x0 + 1 >= self.width) || (fy > 0.0 && y0 + 1 >= self.height) {
            return None;
        }
        Some((x0, y0, fx, fy))
    }

    #[inline]
    fn neighbours_visible(&self, x0: usize, y0: usize, fx: f64, fy: f64) -> bool {
        let i = y0 * self.width + x0;
        self.visible(i)
            && (fx == 0.0 || self.visible(i + 1))
            && (fy == 0.0 || self.visible(i + self.width))
            && (fx == 0.0 || fy == 0.0 || self.visible(i + self.width + 1))
    }

    #[inline]
    fn px(&self, i: usize) -> f64 {
        f64::from(self.data[i])
    }

    #[inline]
    pub(crate) fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (x0, y0, fx, fy) = self.cell(x, y)?;
        if !self.neighbours_visible(x0, y0, fx, fy) {
            return None;
        }
        let i = y0 * self.width + x0;
        let mut top = self.px(i);
        if fx > 0.0 {
            top += fx * (self.px(i + 1) - top);
        }
        if fy == 0.0 {
            return Some(top);
        }
        let j = i + self.width;
        let mut bottom = self.px(j);
        if fx > 0.0 {
            bottom += fx * (self.px(j + 1) - bottom);
        }
        Some(top + fy * (bottom - top))
    }

    /// Value and exact spatial derivative of the bilinear interpolant.
    /// On cell edges the derivative is taken from the cell to the right
    /// (below), falling back to the left (above) at the image border.
    #[inline]
    pub(crate) fn sample_with_gradient(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let (x0, y0, fx, fy) = self.cell(x, y)?;
        if !self.neighbours_visible(x0, y0, fx, fy) {
            return None;
        }
        // corner columns/rows used for the derivative
        let (xa, xb, fxd) = if x0 + 1 < self.width {
            (x0, x0 + 1, fx)
        } else if x0 > 0 {
            (x0 - 1, x0, 1.0)
        } else {
            (x0, x0, 0.0)
        };
        let (ya, yb, fyd) = if y0 + 1 < self.height {
            (y0, y0 + 1, fy)
        } else if y0 > 0 {
            (y0 - 1, y0, 1.0)
        } else {
            (y0, y0, 0.0)
        };
        let w = self.width;
        let v00 = self.px(ya * w + xa);
        let v10 = self.px(ya * w + xb);
        let v01 = self.px(yb * w + xa);
        let v11 = self.px(yb * w + xb);
        let top = v00 + fxd * (v10 - v00);
        let bottom = v01 + fxd * (v11 - v01);
        let value = top + fyd * (bottom - top);
        let gx = if xa == xb {
            0.0
        } else {
            (1.0 - fyd) * (v10 - v00) + fyd * (v11 - v01)
        };
        let gy = if ya == yb { 0.0 } else { bottom - top };
        Some((value, gx, gy))
    }
}

/// Output of [`warp_image`]; invalid pixels carry value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: ScalarImage,
    pub validity: BinaryMask,
}

/// Inverse warping: output pixel `(x, y)` samples `src` at `T(x, y)`, so
/// `output_to_source` maps output coordinates into source coordinates.
pub fn warp_image(
    src: &ScalarImage,
    src_visibility: &BinaryMask,
    output_to_source: &AffineTransform,
    out_width: usize,
    out_height: usize,
) -> Result<WarpResult> {
    same_dims(src.dims(), src_visibility.dims())?;
    let sampler = Sampler::new(src, Some(src_visibility));
    let n = out_width * out_height;
    let mut data = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for y in 0..out_height {
        for x in 0..out_width {
            let (sx, sy) = output_to_source.apply(x as f64, y as f64);
            if let Some(v) = sampler.sample(sx, sy) {
                let i = y * out_width + x;
                data[i] = v.clamp(0.0, 1.0) as f32;
                valid[i] = true;
            }
        }
    }
    Ok(WarpResult {
        image: ScalarImage::new(out_width, out_height, data)?,
        validity: BinaryMask::new(out_width, out_height, valid)?,
    })
}

/// Disc of radius `r` centred on `(cx, cy)`, boundary included.
pub fn circular_mask(width: usize, height: usize, cx: f64, cy: f64, r: f64) -> Result<BinaryMask> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("mask radius {r} must be positive")));
    }
    let r2 = r * r;
    BinaryMask::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        dx * dx + dy * dy <= r2
    })
}

/// Inscribed circle shrunk by `margin` (a fraction of the radius).
pub fn inscribed_mask(width: usize, height: usize, margin: f64) -> Result<BinaryMask> {
    let r = (1.0 - margin) * width.min(height) as f64 / 2.0;
    circular_mask(
        width,
        height,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        r,
    )
}

/// Default scope field of view: inscribed circle with a 2% margin.
pub fn default_visibility(width: usize, height: usize) -> Result<BinaryMask> {
    inscribed_mask(width, height, 0.02)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_affine() -> impl Strategy<Value = AffineTransform> {
        (
            -0.3f64..0.3,
            0.8f64..1.25,
            -0.3f64..0.3,
            -0.3f64..0.3,
            -50.0f64..50.0,
            -50.0f64..50.0,
        )
            .prop_map(|(ang, s, sh1, sh2, tx, ty)| {
                let (sn, c) = ang.sin_cos();
                AffineTransform::new(s * c + sh1, -s * sn, s * sn, s * c + sh2, tx, ty).unwrap()
            })
    }

    #[test]
    fn compose_examples() {
        let t = AffineTransform::new(1.1, 0.2, -0.1, 0.9, 3.0, -4.0).unwrap();
        assert_eq!(AffineTransform::IDENTITY.compose(&t).unwrap(), t);
        let a = AffineTransform::translation(1.0, 2.0);
        let b = AffineTransform::translation(3.0, 4.0);
        assert_eq!(a.compose(&b).unwrap(), AffineTransform::translation(4.0, 6.0));
        let id = t.compose(&t.invert()).unwrap();
        assert!(id.max_abs_diff(&AffineTransform::IDENTITY) < 1e-12);
    }

    #[test]
    fn compose_rejects_degenerate_result() {
        let s = AffineTransform::new(3.0, 0.0, 0.0, 3.0, 0.0, 0.0).unwrap();
        assert!(matches!(s.compose(&s), Err(Error::DegenerateTransform { .. })));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(AffineTransform::IDENTITY.invert(), AffineTransform::IDENTITY);
        let t = AffineTransform::translation(5.0, -3.0).invert();
        assert!(t.max_abs_diff(&AffineTransform::translation(-5.0, 3.0)) < 1e-15);
        let s = AffineTransform::new(2.0, 0.0, 0.0, 2.0, 0.0, 0.0).unwrap().invert();
        assert!(s.max_abs_diff(&AffineTransform::new(0.5, 0.0, 0.0, 0.5, 0.0, 0.0).unwrap()) < 1e-15);
    }

    #[test]
    fn construction_guards() {
        assert!(AffineTransform::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(AffineTransform::new(5.0, 0.0, 0.0, 5.0, 0.0, 0.0).is_err());
        assert!(AffineTransform::new(f64::NAN, 0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        let bad = r#"{"a11":0,"a12":0,"a21":0,"a22":0,"tx":0,"ty":0}"#;
        assert!(serde_json::from_str::<AffineTransform>(bad).is_err());
    }

    #[test]
    fn json_shape() {
        let t = AffineTransform::translation(1.5, -2.0);
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        assert_eq!(v["a11"], 1.0);
        assert_eq!(v["tx"], 1.5);
        assert_eq!(v["ty"], -2.0);
        let back: AffineTransform = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    fn ramp(w: usize, h: usize) -> ScalarImage {
        ScalarImage::from_fn(w, h, |x, _| x as f64 / w as f64).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ScalarImage::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0).unwrap();
        let vis = circular_mask(9, 7, 4.0, 3.0, 3.2).unwrap();
        let out = warp_image(&img, &vis, &AffineTransform::IDENTITY, 9, 7).unwrap();
        assert_eq!(out.validity, vis);
        assert_eq!(out.image, img.masked(&vis).unwrap());
    }

    #[test]
    fn integer_translation() {
        let img = ScalarImage::from_fn(12, 5, |x, y| ((x * 5 + y) % 13) as f64 / 13.0).unwrap();
        let vis = BinaryMask::filled(12, 5, true).unwrap();
        let out = warp_image(&img, &vis, &AffineTransform::translation(3.0, 0.0), 12, 5).unwrap();
        for y in 0..5 {
            for x in 0..12 {
                assert_eq!(out.validity.get(x, y), x + 3 < 12);
                if x + 3 < 12 {
                    assert_eq!(out.image.get(x, y), img.get(x + 3, y));
                } else {
                    assert_eq!(out.image.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn half_pixel_ramp() {
        let (w, h) = (16, 4);
        let img = ramp(w, h);
        let vis = BinaryMask::filled(w, h, true).unwrap();
        let out = warp_image(&img, &vis, &AffineTransform::translation(0.5, 0.0), w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    assert!(out.validity.get(x, y));
                    let want = (x as f64 + 0.5) / w as f64;
                    assert!((f64::from(out.image.get(x, y)) - want).abs() < 1e-6);
                } else {
                    assert!(!out.validity.get(x, y));
                }
            }
        }
    }

    #[test]
    fn circular_mask_examples() {
        let m = circular_mask(5, 4, 2.0, 2.0, 100.0).unwrap();
        assert_eq!(m.count(), 20);
        let c = circular_mask(3, 3, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(c.count(), 1);
        assert!(c.get(1, 1));
        assert!(circular_mask(3, 3, 1.0, 1.0, 0.0).is_err());

        // brute-force lattice count
        let mut expected = 0;
        for y in 0..448i64 {
            for x in 0..448i64 {
                if (x - 224).pow(2) + (y - 224).pow(2) <= 200 * 200 {
                    expected += 1;
                }
            }
        }
        assert_eq!(circular_mask(448, 448, 224.0, 224.0, 200.0).unwrap().count(), expected);
        assert_eq!(expected, 125_629);
    }

    #[test]
    fn bilinear_gradient_matches_cell_slopes() {
        let img = ScalarImage::from_fn(6, 6, |x, y| ((x * x + 3 * y) % 7) as f64 / 7.0).unwrap();
        let s = Sampler::new(&img, None);
        let (x, y) = (2.3, 3.6);
        let h = 1e-6;
        let (_, gx, gy) = s.sample_with_gradient(x, y).unwrap();
        let fdx = (s.sample(x + h, y).unwrap() - s.sample(x - h, y).unwrap()) / (2.0 * h);
        let fdy = (s.sample(x, y + h).unwrap() - s.sample(x, y - h).unwrap()) / (2.0 * h);
        assert!((gx - fdx).abs() < 1e-8 && (gy - fdy).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_affine(), b in arb_affine(), c in arb_affine()) {
            let (Ok(ab), Ok(bc)) = (a.compose(&b), b.compose(&c)) else { return Ok(()); };
            let (Ok(l), Ok(r)) = (ab.compose(&c), a.compose(&bc)) else { return Ok(()); };
            let scale = 1.0 + l.params().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(l.max_abs_diff(&r) < 1e-12 * scale);
            prop_assert_eq!(AffineTransform::IDENTITY.compose(&a).unwrap(), a);
            prop_assert_eq!(a.compose(&AffineTransform::IDENTITY).unwrap(), a);
        }

        #[test]
        fn invert_is_two_sided(a in arb_affine()) {
            let i = a.invert();
            prop_assert!(a.compose(&i).unwrap().max_abs_diff(&AffineTransform::IDENTITY) < 1e-12);
            prop_assert!(i.compose(&a).unwrap().max_abs_diff(&AffineTransform::IDENTITY) < 1e-12);
        }

        #[test]
        fn warp_exact_on_linear_images(a in arb_affine(), alpha in -0.005f64..0.005, beta in -0.005f64..0.005) {
            let (w, h) = (40, 30);
            let gamma = 0.5;
            let src = ScalarImage::from_fn(w, h, |x, y| alpha * x as f64 + beta * y as f64 + gamma).unwrap();
            let vis = BinaryMask::filled(w, h, true).unwrap();
            let out = warp_image(&src, &vis, &a, w, h).unwrap();
            for y in 0..h {
                for x in 0..w {
                    if out.validity.get(x, y) {
                        let (sx, sy) = a.apply(x as f64, y as f64);
                        let want = alpha * sx + beta * sy + gamma;
                        prop_assert!((f64::from(out.image.get(x, y)) - want).abs() < 1e-6);
                    }
                }
            }
        }

        #[test]
        fn validity_only_shrinks(a in arb_affine()) {
            let (w, h) = (32, 32);
            let src = ScalarImage::constant(w, h, 0.4).unwrap();
            let vis = circular_mask(w, h, 15.5, 15.5, 14.0).unwrap();
            let out = warp_image(&src, &vis, &a, w, h).unwrap();
            let nearest = BinaryMask::from_fn(w, h, |x, y| {
                let (sx, sy) = a.apply(x as f64, y as f64);
                let (rx, ry) = (sx.round(), sy.round());
                rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h && vis.get(rx as usize, ry as usize)
            }).unwrap();
            for (v, n) in out.validity.data().iter().zip(nearest.data()) {
                prop_assert!(!*v || *n);
            }
        }
    }
}
