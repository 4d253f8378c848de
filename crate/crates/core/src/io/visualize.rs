use image::Rgb;

use crate::map::{FlowMap, Map};

pub type RgbImage = image::RgbImage;

// Hue segment lengths of the Middlebury wheel: RY, YG, GC, CB, BM, MR.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramp = |i: usize, n: usize| i as f64 / n as f64;
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    wheel.extend((0..ry).map(|i| [1.0, ramp(i, ry), 0.0]));
    wheel.extend((0..yg).map(|i| [1.0 - ramp(i, yg), 1.0, 0.0]));
    wheel.extend((0..gc).map(|i| [0.0, 1.0, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0.0, 1.0 - ramp(i, cb), 1.0]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0.0, 1.0]));
    wheel.extend((0..mr).map(|i| [1.0, 0.0, 1.0 - ramp(i, mr)]));
    wheel
}

/// Colour of the flow vector `(u, v)` already divided by the normaliser.
/// Magnitudes above 1 are clamped to full saturation.
pub fn flow_color(u: f64, v: f64) -> [u8; 3] {
    flow_color_with(&color_wheel(), u, v)
}

fn flow_color_with(wheel: &[[f64; 3]], u: f64, v: f64) -> [u8; 3] {
    let rad = u.hypot(v);
    if !(rad > 0.0) {
        return [255; 3];
    }
    let rad = rad.min(1.0);
    let n = wheel.len();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (n - 1) as f64;
    let k0 = (fk.floor() as usize).min(n - 1);
    let k1 = (k0 + 1) % n;
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let col = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
        let col = 1.0 - rad * (1.0 - col);
        *o = (255.0 * col).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Magnitude at quantile `q` in `[0, 1]` (nearest rank).
pub fn percentile_magnitude(flow: &FlowMap, q: f64) -> f64 {
    let mut mags: Vec<f64> = flow.as_slice().iter().map(|v| v[0].hypot(v[1])).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    mags[idx]
}

/// Renders flow with the standard colour wheel. Without `max_magnitude` the
/// 99th percentile magnitude normalises the map.
pub fn visualize_flow(flow: &FlowMap, max_magnitude: Option<f64>) -> RgbImage {
    let norm = max_magnitude.unwrap_or_else(|| percentile_magnitude(flow, 0.99));
    let wheel = color_wheel();
    RgbImage::from_fn(flow.width() as u32, flow.height() as u32, |x, y| {
        let v = flow.get(y as usize, x as usize);
        if norm > 0.0 {
            Rgb(flow_color_with(&wheel, v[0] / norm, v[1] / norm))
        } else {
            Rgb([255; 3])
        }
    })
}

/// Black → red → yellow → white ramp over the finite range of `values`.
pub fn heat_map(values: &Map<f64>) -> RgbImage {
    let finite = values.as_slice().iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let span = hi - lo;
    RgbImage::from_fn(values.width() as u32, values.height() as u32, |x, y| {
        let v = values.get(y as usize, x as usize);
        let t = if span > 0.0 && v.is_finite() {
            (v - lo) / span
        } else {
            0.0
        };
        let ch = |start: f64| ((3.0 * t - start).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([ch(0.0), ch(1.0), ch(2.0)])
    })
}
