//! Random view generation for self-supervised training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Patch;

/// One stochastic transformation. Each maps a patch to a patch of the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    HorizontalFlip { p: f64 },
    VerticalFlip { p: f64 },
    /// σ drawn uniformly from [0, max_sigma] pixels.
    GaussianBlur { max_sigma: f64 },
    /// Crop covering a uniform [min_scale, 1] fraction of the area, resized back.
    CropResize { min_scale: f64 },
    /// Per-channel gain drawn from [1 - amount, 1 + amount].
    IntensityJitter { amount: f64 },
}

/// Ordered transformation set; every view applies all of them in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub transforms: Vec<Transform>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            transforms: vec![
                Transform::HorizontalFlip { p: 0.5 },
                Transform::VerticalFlip { p: 0.5 },
                Transform::GaussianBlur { max_sigma: 1.5 },
                Transform::CropResize { min_scale: 0.7 },
                Transform::IntensityJitter { amount: 0.1 },
            ],
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self { transforms: vec![] }
    }

    pub fn flips_only() -> Self {
        Self {
            transforms: vec![
                Transform::HorizontalFlip { p: 0.5 },
                Transform::VerticalFlip { p: 0.5 },
            ],
        }
    }
}

pub fn hflip(p: &Patch) -> Patch {
    let s = p.side as usize;
    let mut px = p.pixels.clone();
    for row in px.chunks_exact_mut(s) {
        row.reverse();
    }
    p.with_pixels(p.side, px)
}

pub fn vflip(p: &Patch) -> Patch {
    let s = p.side as usize;
    let mut px = Vec::with_capacity(p.pixels.len());
    for plane in p.pixels.chunks_exact(s * s) {
        for row in plane.chunks_exact(s).rev() {
            px.extend_from_slice(row);
        }
    }
    p.with_pixels(p.side, px)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

pub fn blur(p: &Patch, sigma: f64) -> Patch {
    if sigma < 0.05 {
        return p.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let s = p.side as usize;
    let mut out = vec![0.0f32; p.pixels.len()];
    let mut tmp = vec![0.0f32; s * s];
    for (src, dst) in p.pixels.chunks_exact(s * s).zip(out.chunks_exact_mut(s * s)) {
        for y in 0..s {
            for x in 0..s {
                tmp[y * s + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * src[y * s + reflect(x as i64 + j as i64 - r, s as i64)])
                    .sum();
            }
        }
        for y in 0..s {
            for x in 0..s {
                dst[y * s + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * tmp[reflect(y as i64 + j as i64 - r, s as i64) * s + x])
                    .sum();
            }
        }
    }
    p.with_pixels(p.side, out)
}

/// Bilinear resample of the square window at (top, left) with side `crop` back to full side.
pub fn crop_resize(p: &Patch, top: f64, left: f64, crop: f64) -> Patch {
    let s = p.side as usize;
    let scale = crop / s as f64;
    let mut out = Vec::with_capacity(p.pixels.len());
    for plane in p.pixels.chunks_exact(s * s) {
        for y in 0..s {
            let sy = (top + (y as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
            let (y0, fy) = (sy.floor() as usize, (sy - sy.floor()) as f32);
            let y1 = (y0 + 1).min(s - 1);
            for x in 0..s {
                let sx = (left + (x as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
                let (x0, fx) = (sx.floor() as usize, (sx - sx.floor()) as f32);
                let x1 = (x0 + 1).min(s - 1);
                let a = plane[y0 * s + x0] * (1.0 - fx) + plane[y0 * s + x1] * fx;
                let b = plane[y1 * s + x0] * (1.0 - fx) + plane[y1 * s + x1] * fx;
                out.push(a * (1.0 - fy) + b * fy);
            }
        }
    }
    p.with_pixels(p.side, out)
}

/// Applies one sampled composition of `spec` to `p`.
pub fn augment(p: &Patch, spec: &AugmentationSpec, rng: &mut impl Rng) -> Patch {
    let mut cur = p.clone();
    for t in &spec.transforms {
        cur = match *t {
            Transform::HorizontalFlip { p: prob } => {
                if rng.random::<f64>() < prob {
                    hflip(&cur)
                } else {
                    cur
                }
            }
            Transform::VerticalFlip { p: prob } => {
                if rng.random::<f64>() < prob {
                    vflip(&cur)
                } else {
                    cur
                }
            }
            Transform::GaussianBlur { max_sigma } => {
                let sigma = rng.random::<f64>() * max_sigma;
                blur(&cur, sigma)
            }
            Transform::CropResize { min_scale } => {
                let area = min_scale + rng.random::<f64>() * (1.0 - min_scale);
                let crop = cur.side as f64 * area.sqrt();
                let slack = cur.side as f64 - crop;
                let (top, left) = (rng.random::<f64>() * slack, rng.random::<f64>() * slack);
                crop_resize(&cur, top, left, crop)
            }
            Transform::IntensityJitter { amount } => {
                let n = (cur.side * cur.side) as usize;
                let mut px = cur.pixels;
                for plane in px.chunks_exact_mut(n) {
                    let gain = 1.0 + amount * (2.0 * rng.random::<f64>() - 1.0);
                    plane.iter_mut().for_each(|v| *v *= gain as f32);
                }
                Patch { pixels: px, ..cur }
            }
        };
    }
    cur
}

/// Two independently sampled views of one patch.
pub fn augment_pair(p: &Patch, spec: &AugmentationSpec, rng_seed: u64) -> (Patch, Patch) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let a = augment(p, spec, &mut rng);
    let b = augment(p, spec, &mut rng);
    (a, b)
}
