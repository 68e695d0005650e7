use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two soft Gaussian blobs per class with class-specific positions and colors.
    Blobs,
    /// One hard-edged shape per class (disk, square, ring, cross, bar) with a class color.
    Shapes,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "shapes" => Ok(SyntheticKind::Shapes),
            _ => Err(format!("unknown synthetic kind `{s}` (blobs|shapes)")),
        }
    }
}

/// Class-conditional RGB image generator. Class prototypes depend only on `seed`;
/// per-sample variation depends on `(seed, split, index)` and scales with `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub kind: SyntheticKind,
    pub noise: f64,
    pub seed: u64,
    /// 0 for train, any other value draws an independent sample set from the same classes.
    pub split: u64,
}

#[derive(Debug, Clone)]
struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    color: [f64; 3],
}

#[derive(Debug, Clone)]
struct Prototype {
    background: [f64; 3],
    blobs: Vec<Blob>,
    shape: usize,
}

fn prototype(spec: &SyntheticSpec, class: usize) -> Prototype {
    let mut r = rng::stream(spec.seed, "synthetic.class", &[class as u64]);
    let s = spec.image_size as f64;
    let mut color = || [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
    let background = {
        let c = color();
        [0.3 + 0.2 * c[0], 0.3 + 0.2 * c[1], 0.3 + 0.2 * c[2]]
    };
    let blobs = (0..2)
        .map(|_| Blob {
            x: r.random_range(0.2..0.8) * s,
            y: r.random_range(0.2..0.8) * s,
            sigma: r.random_range(0.08..0.16) * s,
            color: [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)],
        })
        .collect();
    Prototype { background, blobs, shape: class % 5 }
}

fn inside_shape(shape: usize, dx: f64, dy: f64, radius: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        0 => d <= radius,
        1 => ax <= radius * 0.85 && ay <= radius * 0.85,
        2 => d <= radius && d >= radius * 0.55,
        3 => (ax <= radius * 0.3 && ay <= radius) || (ay <= radius * 0.3 && ax <= radius),
        _ => ax <= radius && ay <= radius * 0.35,
    }
}

fn render(spec: &SyntheticSpec, proto: &Prototype, index: u64, out: &mut Vec<f32>) {
    let size = spec.image_size;
    let s = size as f64;
    let noise = spec.noise;
    let mut r = rng::stream(spec.seed, "synthetic.sample", &[spec.split, index]);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gauss = |scale: f64| if scale > 0.0 { std.sample(&mut r) * scale } else { 0.0 };

    let jitter = 0.12 * s * noise;
    let blobs: Vec<Blob> = proto
        .blobs
        .iter()
        .map(|b| Blob {
            x: b.x + gauss(jitter),
            y: b.y + gauss(jitter),
            sigma: (b.sigma * (1.0 + gauss(0.2 * noise))).max(0.5),
            color: [
                b.color[0] + gauss(0.15 * noise),
                b.color[1] + gauss(0.15 * noise),
                b.color[2] + gauss(0.15 * noise),
            ],
        })
        .collect();
    let background = [
        proto.background[0] + gauss(0.1 * noise),
        proto.background[1] + gauss(0.1 * noise),
        proto.background[2] + gauss(0.1 * noise),
    ];
    // one distractor blob whose strength grows with noise
    let distractor = Blob {
        x: s * 0.5 + gauss(0.3 * s),
        y: s * 0.5 + gauss(0.3 * s),
        sigma: 0.1 * s,
        color: [gauss(0.4 * noise), gauss(0.4 * noise), gauss(0.4 * noise)],
    };
    let radius = 0.28 * s * (1.0 + gauss(0.15 * noise)).max(0.4);
    let (sx, sy) = (proto.blobs[0].x + gauss(jitter), proto.blobs[0].y + gauss(jitter));
    let shape_color = proto.blobs[1].color;
    let pixel_noise = 0.08 * noise;
    let mut pixels = vec![0f64; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = background;
            let add = |v: &mut [f64; 3], b: &Blob| {
                let d2 = (px - b.x).powi(2) + (py - b.y).powi(2);
                let w = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                for c in 0..3 {
                    v[c] += w * b.color[c];
                }
            };
            match spec.kind {
                SyntheticKind::Blobs => blobs.iter().for_each(|b| add(&mut v, b)),
                SyntheticKind::Shapes => {
                    if inside_shape(proto.shape, px - sx, py - sy, radius) {
                        for c in 0..3 {
                            v[c] += shape_color[c] + 0.5 * blobs[0].color[c];
                        }
                    }
                }
            }
            if noise > 0.0 {
                add(&mut v, &distractor);
            }
            for c in 0..3 {
                pixels[(c * size + y) * size + x] = v[c];
            }
        }
    }
    for p in pixels.iter_mut() {
        *p += gauss(pixel_noise);
        out.push(p.clamp(0.0, 1.0) as f32);
    }
}

/// Balanced labelled dataset; sample `i` belongs to class `i % num_classes`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Dataset {
    let protos: Vec<Prototype> = (0..spec.num_classes).map(|c| prototype(spec, c)).collect();
    let n = spec.num_classes * spec.per_class;
    let mut images = Vec::with_capacity(n * 3 * spec.image_size * spec.image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.num_classes;
        render(spec, &protos[class], i as u64, &mut images);
        labels.push(class as u32);
    }
    Dataset::new((3, spec.image_size, spec.image_size), images, Some(labels), spec.num_classes)
        .expect("generator emits consistent datasets")
}
