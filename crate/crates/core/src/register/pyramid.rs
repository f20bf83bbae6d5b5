use crate::error::{Error, Result};
use crate::imagecore::{same_dims, BinaryMask, ScalarImage};

/// Smallest side allowed at the coarsest level; deeper requests are trimmed.
pub const MIN_LEVEL_SIDE: usize = 32;

const KERNEL_RADIUS: usize = 2;

/// Coarse-to-fine image stack; `levels[0]` is full resolution.
///
/// Coarse pixel `(i, j)` sits at fine coordinates `(i / s, j / s)`, so
/// coordinates convert between neighbouring levels by a pure scaling.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<(ScalarImage, BinaryMask)>,
    pub scale_factor: f64,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn next_dim(d: usize, s: f64) -> usize {
    // guard against 448 * 0.5 landing a hair above an integer
    ((d as f64 * s) - 1e-9).ceil().max(1.0) as usize
}

/// Number of levels actually built for the request.
pub fn effective_levels(width: usize, height: usize, levels: usize, scale_factor: f64) -> usize {
    let (mut w, mut h) = (width, height);
    let mut n = 1;
    while n < levels {
        let (nw, nh) = (next_dim(w, scale_factor), next_dim(h, scale_factor));
        if nw < MIN_LEVEL_SIDE || nh < MIN_LEVEL_SIDE {
            break;
        }
        (w, h) = (nw, nh);
        n += 1;
    }
    n
}

/// Each new level is the previous one smoothed by a 5×5 Gaussian with
/// `σ = 0.5 / s` and resampled at spacing `1 / s`. A coarse mask pixel is
/// valid only when every fine pixel under the smoothing footprint of its
/// interpolation neighbours is valid.
pub fn build_pyramid(img: &ScalarImage, mask: &BinaryMask, levels: usize, scale_factor: f64) -> Result<Pyramid> {
    same_dims(img.dims(), mask.dims())?;
    if levels == 0 || !(scale_factor > 0.0 && scale_factor < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pyramid needs levels >= 1 and scale in (0, 1), got {levels}, {scale_factor}"
        )));
    }
    let n = effective_levels(img.width(), img.height(), levels, scale_factor);
    let kernel = gaussian_kernel(0.5 / scale_factor);
    let mut out = vec![(img.clone(), mask.clone())];
    for _ in 1..n {
        let (prev_img, prev_mask) = out.last().expect("non-empty");
        let next = downsample(prev_img, prev_mask, &kernel, scale_factor)?;
        out.push(next);
    }
    Ok(Pyramid {
        levels: out,
        scale_factor,
    })
}

/// Gaussian smoothing with truncation radius `⌈3σ⌉`. Only pixels whose
/// whole kernel footprint lies inside `mask` stay valid, so the smoothed
/// image is the same linear filter everywhere it is used; invalid pixels
/// are set to 0. `σ = 0` returns the inputs unchanged apart from masking.
pub fn presmooth(img: &ScalarImage, mask: &BinaryMask, sigma: f64) -> Result<(ScalarImage, BinaryMask)> {
    same_dims(img.dims(), mask.dims())?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok((img.masked(mask)?, mask.clone()));
    }
    let (w, h) = img.dims();
    let r = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);

    // a pixel keeps validity when every pixel in its (2r+1)² footprint is valid
    let mut valid = mask.data().to_vec();
    let mut values: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    for (stride, len, other) in [(1, w, h), (w, h, w)] {
        let mut next_valid = vec![false; w * h];
        let mut next_values = vec![0.0; w * h];
        for o in 0..other {
            let base = if stride == 1 { o * w } else { o };
            for i in r..len.saturating_sub(r) {
                let taps = (0..=2 * r).map(|j| base + (i + j - r) * stride);
                if taps.clone().all(|q| valid[q]) {
                    next_valid[base + i * stride] = true;
                    next_values[base + i * stride] = taps.zip(&k).map(|(q, kv)| kv * values[q]).sum();
                }
            }
        }
        valid = next_valid;
        values = next_values;
    }
    let out_mask = BinaryMask::new(w, h, valid)?;
    let out = ScalarImage::from_f64_clamped(w, h, &values)?;
    Ok((out, out_mask))
}

fn gaussian_kernel(sigma: f64) -> [f64; 2 * KERNEL_RADIUS + 1] {
    let mut k = [0.0; 2 * KERNEL_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - KERNEL_RADIUS as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn smooth(img: &ScalarImage, kernel: &[f64]) -> Vec<f64> {
    let (w, h) = img.dims();
    let r = KERNEL_RADIUS as isize;
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = clamp_index(x as isize + k as isize - r, w);
                acc += kv * f64::from(src[y * w + xx]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = clamp_index(y as isize + k as isize - r, h);
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn erode(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = mask.dims();
    let r = KERNEL_RADIUS as isize;
    let m = mask.data();
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r).all(|d| m[y * w + clamp_index(x as isize + d, w)]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).all(|d| tmp[clamp_index(y as isize + d, h) * w + x]);
        }
    }
    out
}

fn downsample(img: &ScalarImage, mask: &BinaryMask, kernel: &[f64], s: f64) -> Result<(ScalarImage, BinaryMask)> {
    let (w, h) = img.dims();
    let (nw, nh) = (next_dim(w, s), next_dim(h, s));
    let smoothed = smooth(img, kernel);
    let eroded = erode(mask);
    let mut data = Vec::with_capacity(nw * nh);
    let mut valid = Vec::with_capacity(nw * nh);
    for j in 0..nh {
        let (y0, y1, fy, y_inside) = axis(j as f64 / s, h);
        for i in 0..nw {
            let (x0, x1, fx, x_inside) = axis(i as f64 / s, w);
            let at = |x: usize, y: usize| smoothed[y * w + x];
            let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
            let bottom = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
            data.push(top + fy * (bottom - top));
            let e = |x: usize, y: usize| eroded[y * w + x];
            let ok = x_inside
                && y_inside
                && e(x0, y0)
                && (fx == 0.0 || e(x1, y0))
                && (fy == 0.0 || e(x0, y1))
                && (fx == 0.0 || fy == 0.0 || e(x1, y1));
            valid.push(ok);
        }
    }
    Ok((
        ScalarImage::from_f64_clamped(nw, nh, &data)?,
        BinaryMask::new(nw, nh, valid)?,
    ))
}

/// Interpolation neighbours along one axis, clamped to the image.
fn axis(pos: f64, n: usize) -> (usize, usize, f64, bool) {
    let last = (n - 1) as f64;
    let inside = pos <= last;
    let p = pos.min(last);
    let f0 = p.floor();
    let i0 = f0 as usize;
    let frac = p - f0;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, frac, inside)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_is_input() {
        let img = ScalarImage::from_fn(40, 40, |x, y| ((x + 2 * y) % 9) as f64 / 9.0).unwrap();
        let mask = BinaryMask::filled(40, 40, true).unwrap();
        let p = build_pyramid(&img, &mask, 1, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.levels[0].0, img);
        assert_eq!(p.levels[0].1, mask);
    }

    #[test]
    fn constants_survive_every_level() {
        let img = ScalarImage::constant(200, 150, 0.37).unwrap();
        let mask = BinaryMask::filled(200, 150, true).unwrap();
        let p = build_pyramid(&img, &mask, 3, 0.5).unwrap();
        assert_eq!(p.len(), 3);
        for (lvl, m) in &p.levels {
            assert!(lvl.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
            assert!(m.data().iter().all(|&b| b));
        }
    }

    #[test]
    fn dims_follow_ceil_recurrence() {
        let img = ScalarImage::constant(448, 448, 0.5).unwrap();
        let mask = BinaryMask::filled(448, 448, true).unwrap();
        let p = build_pyramid(&img, &mask, 4, 0.5).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|(i, _)| i.width()).collect();
        assert_eq!(dims, vec![448, 224, 112, 56]);

        let odd = ScalarImage::constant(75, 75, 0.5).unwrap();
        let m = BinaryMask::filled(75, 75, true).unwrap();
        let p = build_pyramid(&odd, &m, 5, 0.5).unwrap();
        // 75 -> 38 -> 19 (< 32, trimmed)
        let dims: Vec<_> = p.levels.iter().map(|(i, _)| i.width()).collect();
        assert_eq!(dims, vec![75, 38]);
    }

    #[test]
    fn masks_downsample_by_strict_and() {
        let img = ScalarImage::constant(64, 64, 0.5).unwrap();
        let mut bits = vec![true; 64 * 64];
        bits[20 * 64 + 20] = false;
        let mask = BinaryMask::new(64, 64, bits).unwrap();
        let p = build_pyramid(&img, &mask, 2, 0.5).unwrap();
        let coarse = &p.levels[1].1;
        // fine (20,20) lies within the footprint of coarse pixels 9..=11
        for j in 9..=11 {
            for i in 9..=11 {
                assert!(!coarse.get(i, j), "({i},{j})");
            }
        }
        assert!(coarse.get(8, 8) && coarse.get(12, 12));
    }

    #[test]
    fn presmooth_keeps_only_fully_supported_pixels() {
        let mask = crate::warp::default_visibility(48, 48).unwrap();
        let img = ScalarImage::from_fn(48, 48, |x, y| if mask.get(x, y) { 0.4 } else { 1.0 }).unwrap();
        let (out, valid) = presmooth(&img, &mask, 1.0).unwrap();
        for y in 0..48usize {
            for x in 0..48usize {
                let supported = (0..7).all(|j| {
                    (0..7).all(|i| {
                        let (u, v) = (x as isize + i - 3, y as isize + j - 3);
                        u >= 0 && v >= 0 && u < 48 && v < 48 && mask.get(u as usize, v as usize)
                    })
                });
                assert_eq!(valid.get(x, y), supported, "({x},{y})");
                let want = if supported { 0.4 } else { 0.0 };
                assert!((out.get(x, y) - want).abs() < 1e-6);
            }
        }
        let (same, m) = presmooth(&img, &mask, 0.0).unwrap();
        assert_eq!((same, m), (img.masked(&mask).unwrap(), mask.clone()));
        assert!(presmooth(&img, &mask, -1.0).is_err());
    }

    #[test]
    fn presmooth_matches_direct_convolution() {
        let img = ScalarImage::from_fn(21, 17, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0).unwrap();
        let mask = BinaryMask::filled(21, 17, true).unwrap();
        let sigma = 1.2;
        let (out, valid) = presmooth(&img, &mask, sigma).unwrap();
        let norm: f64 = (-4..=4)
            .map(|d: i32| (-f64::from(d * d) / (2.0 * sigma * sigma)).exp())
            .sum();
        for y in 4..13usize {
            for x in 4..17usize {
                assert!(valid.get(x, y));
                let mut acc = 0.0;
                for v in y - 4..=y + 4 {
                    for u in x - 4..=x + 4 {
                        let (dx, dy) = (u as f64 - x as f64, v as f64 - y as f64);
                        acc += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() * f64::from(img.get(u, v));
                    }
                }
                assert!((f64::from(out.get(x, y)) - acc / (norm * norm)).abs() < 1e-6);
            }
        }
        assert!(!valid.get(3, 8) && !valid.get(17, 8));
    }
}
