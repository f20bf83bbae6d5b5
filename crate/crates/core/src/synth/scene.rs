use super::rng::{stream, CounterRng};

/// Latent scene: a textured background plus a vessel-only layer.
#[derive(Debug, Clone)]
pub struct SceneLayers {
    pub size: usize,
    /// Vessel likelihood in `[0, 1]`; Gaussian cross-sections, FWHM = width.
    pub vessels: Vec<f64>,
    /// Composite intensity `bg + v·(VESSEL_LEVEL − bg)`.
    pub intensity: Vec<f64>,
}

const VESSEL_LEVEL: f64 = 0.92;
const BACKGROUND_BASE: f64 = 0.30;
/// (lattice spacing in px, amplitude) per texture octave; amplitudes sum to 0.18.
const OCTAVES: [(f64, f64); 3] = [(128.0, 0.10), (32.0, 0.05), (8.0, 0.03)];
const BRANCHES_PER_VESSEL: usize = 2;

struct Curve {
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
    width: f64,
}

impl Curve {
    fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }

    fn tangent_angle(&self, t: f64) -> f64 {
        let u = 1.0 - t;
        let dx = 2.0 * u * (self.p1.0 - self.p0.0) + 2.0 * t * (self.p2.0 - self.p1.0);
        let dy = 2.0 * u * (self.p1.1 - self.p0.1) + 2.0 * t * (self.p2.1 - self.p1.1);
        dy.atan2(dx)
    }
}

fn curve_from(rng: &mut CounterRng, start: (f64, f64), angle: f64, length: f64, width: f64) -> Curve {
    let end = (start.0 + length * angle.cos(), start.1 + length * angle.sin());
    let bend = rng.uniform(-0.25, 0.25) * length;
    let mid = ((start.0 + end.0) / 2.0, (start.1 + end.1) / 2.0);
    let normal = (-angle.sin(), angle.cos());
    Curve {
        p0: start,
        p1: (mid.0 + bend * normal.0, mid.1 + bend * normal.1),
        p2: end,
        width,
    }
}

/// The curves of vessel `index`: one trunk and its branches. Each vessel
/// draws from its own stream, so adding vessels never moves existing ones.
fn vessel_curves(seed: u64, index: usize, size: f64, width_range: [f64; 2]) -> Vec<Curve> {
    let mut rng = CounterRng::new(seed, stream::VESSEL | index as u64);
    let start = (rng.uniform(0.0, size), rng.uniform(0.0, size));
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let length = rng.uniform(0.4, 0.9) * size;
    let width = rng.uniform(width_range[0], width_range[1]);
    let trunk = curve_from(&mut rng, start, angle, length, width);
    let mut curves = Vec::with_capacity(1 + BRANCHES_PER_VESSEL);
    for _ in 0..BRANCHES_PER_VESSEL {
        let t = rng.uniform(0.2, 0.8);
        let side = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let turn = side * rng.uniform(30f64.to_radians(), 60f64.to_radians());
        let b_len = rng.uniform(0.3, 0.5) * length;
        let b_width = (width * rng.uniform(0.55, 0.8)).max(width_range[0]);
        curves.push(curve_from(
            &mut rng,
            trunk.point(t),
            trunk.tangent_angle(t) + turn,
            b_len,
            b_width,
        ));
    }
    curves.insert(0, trunk);
    curves
}

fn rasterize(curve: &Curve, size: usize, out: &mut [f64]) {
    let sigma = curve.width / (8.0 * std::f64::consts::LN_2).sqrt();
    let reach = 3.5 * sigma + 1.0;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let approx_len = {
        let a = curve.point(0.0);
        let b = curve.point(0.5);
        let c = curve.point(1.0);
        (b.0 - a.0).hypot(b.1 - a.1) + (c.0 - b.0).hypot(c.1 - b.1)
    };
    let segments = (approx_len / 2.0).ceil().max(1.0) as usize;
    let mut prev = curve.point(0.0);
    let limit = size as f64 - 1.0;
    for s in 1..=segments {
        let next = curve.point(s as f64 / segments as f64);
        let (ax, ay, bx, by) = (prev.0, prev.1, next.0, next.1);
        let x_lo = (ax.min(bx) - reach).max(0.0).floor();
        let x_hi = (ax.max(bx) + reach).min(limit).ceil();
        let y_lo = (ay.min(by) - reach).max(0.0).floor();
        let y_hi = (ay.max(by) + reach).min(limit).ceil();
        if x_lo <= x_hi && y_lo <= y_hi {
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = (dx * dx + dy * dy).max(1e-12);
            for y in y_lo as usize..=y_hi as usize {
                for x in x_lo as usize..=x_hi as usize {
                    let (px, py) = (x as f64 - ax, y as f64 - ay);
                    let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
                    let (ex, ey) = (px - t * dx, py - t * dy);
                    let v = (-(ex * ex + ey * ey) * inv).exp();
                    let slot = &mut out[y * size + x];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        prev = next;
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn background(seed: u64, size: usize) -> Vec<f64> {
    let mut bg = vec![BACKGROUND_BASE; size * size];
    for (o, &(spacing, amp)) in OCTAVES.iter().enumerate() {
        let rng = CounterRng::new(seed, stream::TEXTURE | o as u64);
        let cells = (size as f64 / spacing).ceil() as u64 + 2;
        let lattice = |i: u64, j: u64| {
            let u = (rng.at(1 + j * cells + i) >> 11) as f64 / (1u64 << 53) as f64;
            amp * (2.0 * u - 1.0)
        };
        for y in 0..size {
            let gy = y as f64 / spacing;
            let j = gy.floor();
            let fy = smoothstep(gy - j);
            for x in 0..size {
                let gx = x as f64 / spacing;
                let i = gx.floor();
                let fx = smoothstep(gx - i);
                let (i, j) = (i as u64, j as u64);
                let top = lattice(i, j) + fx * (lattice(i + 1, j) - lattice(i, j));
                let bottom = lattice(i, j + 1) + fx * (lattice(i + 1, j + 1) - lattice(i, j + 1));
                bg[y * size + x] += top + fy * (bottom - top);
            }
        }
    }
    bg
}

pub fn build_layers(seed: u64, size: usize, n_vessels: usize, width_range: [f64; 2]) -> SceneLayers {
    let mut vessels = vec![0.0; size * size];
    for v in 0..n_vessels {
        for curve in vessel_curves(seed, v, size as f64, width_range) {
            rasterize(&curve, size, &mut vessels);
        }
    }
    let intensity = background(seed, size)
        .into_iter()
        .zip(&vessels)
        .map(|(b, &v)| (b + v * (VESSEL_LEVEL - b)).clamp(0.0, 1.0))
        .collect();
    SceneLayers {
        size,
        vessels,
        intensity,
    }
}
