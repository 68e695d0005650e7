//! Weak/strong stochastic augmentation and teacher/student view pairing.
//!
//! Transform order is fixed: random-resized-crop, horizontal flip, then (strong only)
//! color jitter, grayscale and Gaussian blur, and finally per-channel normalization.

mod color;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("image {height}x{width} smaller than the minimum crop extent {min}")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("image buffer of {len} values does not match shape {shape:?}")]
    BadShape { len: usize, shape: (usize, usize, usize) },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Strong,
}

impl std::str::FromStr for Strength {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weak" => Ok(Strength::Weak),
            "strong" => Ok(Strength::Strong),
            _ => Err(format!("unknown augmentation strength `{s}` (weak|strong)")),
        }
    }
}

impl std::fmt::Display for Strength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strength::Weak => "weak",
            Strength::Strong => "strong",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub strength: Strength,
    /// Side length of the square output view.
    pub output_size: usize,
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub hflip_p: f64,
    /// Brightness, contrast, saturation, hue.
    pub jitter: (f64, f64, f64, f64),
    pub jitter_p: f64,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl AugmentationPolicy {
    pub fn new(strength: Strength, output_size: usize, mean: Vec<f32>, std: Vec<f32>) -> Self {
        AugmentationPolicy {
            strength,
            output_size,
            crop_scale: (0.2, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_p: 0.5,
            jitter: (0.4, 0.4, 0.4, 0.1),
            jitter_p: 0.8,
            grayscale_p: 0.2,
            blur_p: 0.5,
            blur_sigma: (0.0, 1.0),
            mean,
            std,
        }
    }

    pub fn weak(output_size: usize, mean: Vec<f32>, std: Vec<f32>) -> Self {
        Self::new(Strength::Weak, output_size, mean, std)
    }

    pub fn strong(output_size: usize, mean: Vec<f32>, std: Vec<f32>) -> Self {
        Self::new(Strength::Strong, output_size, mean, std)
    }

    pub fn validate(&self, channels: usize) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidPolicy(m));
        if self.output_size == 0 {
            return bad("output size must be positive".into());
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop scale ({lo}, {hi}) outside (0, 1]"));
        }
        if !(self.crop_ratio.0 > 0.0 && self.crop_ratio.0 <= self.crop_ratio.1) {
            return bad(format!("crop ratio {:?}", self.crop_ratio));
        }
        if self.mean.len() != channels || self.std.len() != channels {
            return bad(format!("normalization has {} means / {} stds for {channels} channels", self.mean.len(), self.std.len()));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return bad("normalization std must be positive".into());
        }
        for p in [self.hflip_p, self.jitter_p, self.grayscale_p, self.blur_p] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Color-jitter factors drawn for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    /// Application order of the four adjustments (0 brightness .. 3 hue).
    pub order: [usize; 4],
}

/// Record of the random choices made for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedParams {
    /// `(top, left, height, width)` in source pixels.
    pub crop: (usize, usize, usize, usize),
    pub flipped: bool,
    pub jitter: Option<JitterParams>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

/// Samples a crop box following the usual random-resized-crop recipe: up to ten
/// attempts at a random area fraction and log-uniform aspect ratio, then a
/// whole-image center crop. Attempts whose rounded area falls outside `scale` are
/// rejected so the area fraction always lies within it.
fn sample_crop(h: usize, w: usize, policy: &AugmentationPolicy, r: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lo, hi) = policy.crop_scale;
    let (log_r0, log_r1) = (policy.crop_ratio.0.ln(), policy.crop_ratio.1.ln());
    for _ in 0..10 {
        let target = area * r.random_range(lo..=hi);
        let aspect = if log_r0 < log_r1 { r.random_range(log_r0..log_r1).exp() } else { log_r0.exp() };
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw == 0 || ch == 0 || cw > w || ch > h {
            continue;
        }
        let frac = (cw * ch) as f64 / area;
        if frac < lo || frac > hi {
            continue;
        }
        let top = r.random_range(0..=h - ch);
        let left = r.random_range(0..=w - cw);
        return (top, left, ch, cw);
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < policy.crop_ratio.0 {
        (((w as f64) / policy.crop_ratio.0).round() as usize, w)
    } else if in_ratio > policy.crop_ratio.1 {
        (h, ((h as f64) * policy.crop_ratio.1).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Bilinear resize (half-pixel centers, edge clamping) of a crop box to `out x out`.
pub(crate) fn resize_crop(
    image: &[f32],
    (c, h, w): (usize, usize, usize),
    (top, left, ch, cw): (usize, usize, usize, usize),
    out: usize,
) -> Vec<f32> {
    let mut dst = vec![0f32; c * out * out];
    let coords = |len: usize, start: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                (start + i0, start + i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = coords(ch, top);
    let xs = coords(cw, left);
    for ci in 0..c {
        let plane = &image[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let a = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let b = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[(ci * out + oy) * out + ox] = a * (1.0 - fy) + b * fy;
            }
        }
    }
    dst
}

fn hflip(img: &mut [f32], c: usize, s: usize) {
    for row in img.chunks_mut(s).take(c * s) {
        row.reverse();
    }
}

fn normalize(img: &mut [f32], s: usize, mean: &[f32], std: &[f32]) {
    for (ci, plane) in img.chunks_mut(s * s).enumerate() {
        plane.iter_mut().for_each(|v| *v = (*v - mean[ci]) / std[ci]);
    }
}

fn check_image(image: &[f32], shape: (usize, usize, usize)) -> Result<(), AugmentError> {
    let (c, h, w) = shape;
    if image.len() != c * h * w || c == 0 {
        return Err(AugmentError::BadShape { len: image.len(), shape });
    }
    if h < 2 || w < 2 {
        return Err(AugmentError::ImageTooSmall { height: h, width: w, min: 2 });
    }
    Ok(())
}

/// One augmented view plus the random choices that produced it.
pub fn augment_traced(
    image: &[f32],
    shape: (usize, usize, usize),
    policy: &AugmentationPolicy,
    r: &mut Rng,
) -> Result<(Vec<f32>, AppliedParams), AugmentError> {
    check_image(image, shape)?;
    policy.validate(shape.0)?;
    let (c, h, w) = shape;
    let s = policy.output_size;
    let crop = sample_crop(h, w, policy, r);
    let mut img = resize_crop(image, shape, crop, s);
    let flipped = r.random_bool(policy.hflip_p);
    if flipped {
        hflip(&mut img, c, s);
    }
    let mut applied = AppliedParams { crop, flipped, jitter: None, grayscale: false, blur_sigma: None };
    if policy.strength == Strength::Strong {
        if r.random_bool(policy.jitter_p) {
            let (b, ct, sat, hue) = policy.jitter;
            let factor = |r: &mut Rng, amount: f64| if amount > 0.0 { r.random_range((1.0 - amount).max(0.0)..=1.0 + amount) } else { 1.0 };
            let brightness = factor(r, b);
            let contrast = factor(r, ct);
            let saturation = factor(r, sat);
            let hue = if hue > 0.0 { r.random_range(-hue..=hue) } else { 0.0 };
            let mut order = [0, 1, 2, 3];
            order.shuffle(r);
            let params = JitterParams { brightness, contrast, saturation, hue, order };
            color::jitter(&mut img, c, s, &params);
            applied.jitter = Some(params);
        }
        if r.random_bool(policy.grayscale_p) {
            color::grayscale(&mut img, c, s);
            applied.grayscale = true;
        }
        if r.random_bool(policy.blur_p) {
            let sigma = r.random_range(policy.blur_sigma.0..=policy.blur_sigma.1);
            color::gaussian_blur(&mut img, c, s, sigma);
            applied.blur_sigma = Some(sigma);
        }
    }
    normalize(&mut img, s, &policy.mean, &policy.std);
    Ok((img, applied))
}

pub fn augment(image: &[f32], shape: (usize, usize, usize), policy: &AugmentationPolicy, r: &mut Rng) -> Result<Vec<f32>, AugmentError> {
    augment_traced(image, shape, policy, r).map(|(v, _)| v)
}

/// Deterministic evaluation view: central square crop, bilinear resize, normalization.
pub fn eval_view(image: &[f32], shape: (usize, usize, usize), output_size: usize, mean: &[f32], std: &[f32]) -> Result<Vec<f32>, AugmentError> {
    check_image(image, shape)?;
    let (c, h, w) = shape;
    if mean.len() != c || std.len() != c {
        return Err(AugmentError::InvalidPolicy(format!("normalization for {} channels, image has {c}", mean.len())));
    }
    let side = h.min(w);
    let mut img = resize_crop(image, shape, ((h - side) / 2, (w - side) / 2, side, side), output_size);
    normalize(&mut img, output_size, mean, std);
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Both networks see one bit-identical view.
    Same,
    /// Teacher and student views are drawn independently.
    Different,
}

impl std::str::FromStr for PairMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" => Ok(PairMode::Same),
            "different" => Ok(PairMode::Different),
            _ => Err(format!("unknown pairing `{s}` (same|different)")),
        }
    }
}

/// Teacher/student view policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub mode: PairMode,
    pub teacher: AugmentationPolicy,
    pub student: AugmentationPolicy,
}

impl Pairing {
    pub fn new(mode: PairMode, teacher: AugmentationPolicy, student: AugmentationPolicy) -> Result<Self, AugmentError> {
        if mode == PairMode::Same && teacher != student {
            return Err(AugmentError::InvalidPolicy("`same` pairing needs one policy for both sides".into()));
        }
        Ok(Pairing { mode, teacher, student })
    }
}

/// Addresses the random stream of one image's views in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewKey {
    pub seed: u64,
    pub image: u64,
    pub epoch: u64,
}

impl ViewKey {
    pub fn stream(&self, side: u64) -> Rng {
        rng::stream(self.seed, "augment", &[self.image, self.epoch, side])
    }
}

/// Stream index used for the teacher (and shared) view.
pub const TEACHER_SIDE: u64 = 0;
pub const STUDENT_SIDE: u64 = 1;

/// `(teacher_view, student_view)` for one image.
pub fn make_pair(image: &[f32], shape: (usize, usize, usize), pairing: &Pairing, key: ViewKey) -> Result<(Vec<f32>, Vec<f32>), AugmentError> {
    let teacher = augment(image, shape, &pairing.teacher, &mut key.stream(TEACHER_SIDE))?;
    match pairing.mode {
        PairMode::Same => Ok((teacher.clone(), teacher)),
        PairMode::Different => {
            let student = augment(image, shape, &pairing.student, &mut key.stream(STUDENT_SIDE))?;
            Ok((teacher, student))
        }
    }
}
