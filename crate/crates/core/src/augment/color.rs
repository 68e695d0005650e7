//! Photometric transforms on `[C, S, S]` images in `[0, 1]`.
//! Saturation, hue and grayscale act on RGB only and are identities otherwise.

use super::JitterParams;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn luma_plane(img: &[f32], s: usize) -> Vec<f32> {
    let n = s * s;
    (0..n).map(|i| LUMA[0] * img[i] + LUMA[1] * img[n + i] + LUMA[2] * img[2 * n + i]).collect()
}

fn blend_scalar(img: &mut [f32], other: f32, factor: f32) {
    img.iter_mut().for_each(|v| *v = (factor * *v + (1.0 - factor) * other).clamp(0.0, 1.0));
}

fn brightness(img: &mut [f32], f: f32) {
    blend_scalar(img, 0.0, f);
}

fn contrast(img: &mut [f32], c: usize, s: usize, f: f32) {
    let mean = if c == 3 {
        luma_plane(img, s).iter().sum::<f32>() / (s * s) as f32
    } else {
        img.iter().sum::<f32>() / img.len() as f32
    };
    blend_scalar(img, mean, f);
}

fn saturation(img: &mut [f32], s: usize, f: f32) {
    let gray = luma_plane(img, s);
    for plane in img.chunks_mut(s * s) {
        for (v, g) in plane.iter_mut().zip(&gray) {
            *v = (f * *v + (1.0 - f) * g).clamp(0.0, 1.0);
        }
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn hue(img: &mut [f32], s: usize, shift: f32) {
    let n = s * s;
    for i in 0..n {
        let (h, sat, v) = rgb_to_hsv(img[i], img[n + i], img[2 * n + i]);
        let (r, g, b) = hsv_to_rgb(h + shift, sat, v);
        img[i] = r.clamp(0.0, 1.0);
        img[n + i] = g.clamp(0.0, 1.0);
        img[2 * n + i] = b.clamp(0.0, 1.0);
    }
}

pub(super) fn jitter(img: &mut [f32], c: usize, s: usize, p: &JitterParams) {
    for &op in &p.order {
        match op {
            0 => brightness(img, p.brightness as f32),
            1 => contrast(img, c, s, p.contrast as f32),
            2 if c == 3 => saturation(img, s, p.saturation as f32),
            3 if c == 3 => hue(img, s, p.hue as f32),
            _ => {}
        }
    }
}

pub(super) fn grayscale(img: &mut [f32], c: usize, s: usize) {
    if c != 3 {
        return;
    }
    let gray = luma_plane(img, s);
    for plane in img.chunks_mut(s * s) {
        plane.copy_from_slice(&gray);
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with radius `ceil(2 sigma)` and reflect padding.
/// Sigmas below 0.1 leave the image unchanged.
pub(super) fn gaussian_blur(img: &mut [f32], c: usize, s: usize, sigma: f64) {
    if sigma < 0.1 {
        return;
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = vec![0f32; s * s];
    for plane in img.chunks_mut(s * s).take(c) {
        for y in 0..s {
            for x in 0..s {
                tmp[y * s + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * plane[y * s + reflect(x as isize + k as isize - radius, s)])
                    .sum();
            }
        }
        for y in 0..s {
            for x in 0..s {
                plane[y * s + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * tmp[reflect(y as isize + k as isize - radius, s) * s + x])
                    .sum();
            }
        }
    }
}
