//! Raw two-channel slides to standardized three-channel patches.

mod augment;
mod cache;

pub use augment::{augment, augment_pair, AugmentationSpec, Transform};
pub use cache::{decode_patch_cache, encode_patch_cache, read_patch_cache, write_patch_cache};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};
use crate::io::{ClassLabel, RawSrhImage};

const FULL_SCALE: f32 = 65535.0;

/// Planar (CHW) three-channel float image: R = 2930−2845 clamped at 0,
/// G = 2845, B = 2930, all scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualImage {
    pub height: u32,
    pub width: u32,
    pub data: Vec<f32>,
}

impl VirtualImage {
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height as usize * self.width as usize;
        &self.data[channel * n..(channel + 1) * n]
    }
}

#[inline]
pub fn virtual_pixel(c2845: u16, c2930: u16) -> [f32; 3] {
    let diff = c2930.saturating_sub(c2845);
    [diff as f32 / FULL_SCALE, c2845 as f32 / FULL_SCALE, c2930 as f32 / FULL_SCALE]
}

pub fn to_three_channel(img: &RawSrhImage) -> VirtualImage {
    let n = img.pixel_count();
    let mut data = vec![0.0f32; 3 * n];
    for (i, (&a, &b)) in img.ch2845.iter().zip(&img.ch2930).enumerate() {
        let [r, g, bl] = virtual_pixel(a, b);
        data[i] = r;
        data[n + i] = g;
        data[2 * n + i] = bl;
    }
    VirtualImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub slide_id: String,
    pub patient_id: String,
    pub label: ClassLabel,
}

/// Square three-channel tile (CHW) with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: u32,
    pub pixels: Vec<f32>,
    pub slide_id: String,
    pub patient_id: String,
    /// (row, col) of the top-left corner in the source slide, in source pixels.
    pub offset: (u32, u32),
    pub label: ClassLabel,
}

impl Patch {
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = (self.side * self.side) as usize;
        &self.pixels[channel * n..(channel + 1) * n]
    }

    /// Same provenance, new pixels.
    pub fn with_pixels(&self, side: u32, pixels: Vec<f32>) -> Patch {
        debug_assert_eq!(pixels.len(), 3 * (side * side) as usize);
        Patch {
            side,
            pixels,
            slide_id: self.slide_id.clone(),
            patient_id: self.patient_id.clone(),
            offset: self.offset,
            label: self.label,
        }
    }
}

/// Offsets along one axis of a sliding window.
pub fn window_starts(extent: u32, side: u32, stride: u32) -> Vec<u32> {
    if side > extent || stride == 0 {
        return Vec::new();
    }
    (0..=(extent - side) / stride).map(|i| i * stride).collect()
}

/// Sliding-window tiling; windows that would cross the right or bottom edge are dropped.
pub fn tile(img: &VirtualImage, patch_side: u32, stride: u32, origin: &PatchOrigin) -> Result<Vec<Patch>> {
    if stride == 0 {
        return Err(SrhError::Contract("stride must be at least 1".into()));
    }
    if patch_side == 0 || patch_side > img.height || patch_side > img.width {
        return Err(SrhError::Size(format!(
            "patch side {patch_side} does not fit in {}x{} image",
            img.height, img.width
        )));
    }
    let rows = window_starts(img.height, patch_side, stride);
    let cols = window_starts(img.width, patch_side, stride);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push(Patch {
                side: patch_side,
                pixels: crop(img, r, c, patch_side),
                slide_id: origin.slide_id.clone(),
                patient_id: origin.patient_id.clone(),
                offset: (r, c),
                label: origin.label,
            });
        }
    }
    Ok(out)
}

fn crop(img: &VirtualImage, row: u32, col: u32, side: u32) -> Vec<f32> {
    let (w, side) = (img.width as usize, side as usize);
    let mut out = Vec::with_capacity(3 * side * side);
    for ch in 0..3 {
        let plane = img.plane(ch);
        for r in row as usize..row as usize + side {
            let start = r * w + col as usize;
            out.extend_from_slice(&plane[start..start + side]);
        }
    }
    out
}

/// Heuristic replacement for a learned tissue filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDecision {
    TumorCandidate,
    NormalCandidate,
    Nondiagnostic,
}

/// Thresholds on the B (2930 cm⁻¹) channel of an unstandardized patch.
/// Calibrated against the synthetic generator by `examples/calibrate_filter.rs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub var_threshold: f64,
    pub mean_threshold: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            var_threshold: 1.2e-4,
            mean_threshold: 0.40,
        }
    }
}

/// Mean and population variance of a channel.
pub fn channel_moments(values: &[f32]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn filter_patch(p: &Patch, thresholds: &FilterThresholds) -> FilterDecision {
    let (mean, var) = channel_moments(p.plane(2));
    if var < thresholds.var_threshold {
        FilterDecision::Nondiagnostic
    } else if mean > thresholds.mean_threshold {
        FilterDecision::TumorCandidate
    } else {
        FilterDecision::NormalCandidate
    }
}

/// Box-average downsampling by an integer factor.
pub fn downsample(p: &Patch, out_side: u32) -> Result<Patch> {
    if out_side == 0 || p.side % out_side != 0 {
        return Err(SrhError::Shape(format!(
            "patch side {} is not a multiple of input side {out_side}",
            p.side
        )));
    }
    if out_side == p.side {
        return Ok(p.clone());
    }
    let f = (p.side / out_side) as usize;
    let (side, out) = (p.side as usize, out_side as usize);
    let inv = 1.0 / (f * f) as f32;
    let mut pixels = vec![0.0f32; 3 * out * out];
    for ch in 0..3 {
        let src = p.plane(ch);
        let dst = &mut pixels[ch * out * out..(ch + 1) * out * out];
        for r in 0..side {
            let row = &src[r * side..(r + 1) * side];
            let drow = &mut dst[(r / f) * out..(r / f + 1) * out];
            for (c, &v) in row.iter().enumerate() {
                drow[c / f] += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(p.with_pixels(out_side, pixels))
}

/// Per-channel standardization statistics, estimated on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl ChannelStats {
    pub fn estimate<'a>(patches: impl IntoIterator<Item = &'a Patch>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for p in patches {
            for (ch, (s, q)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                for &v in p.plane(ch) {
                    *s += v as f64;
                    *q += (v as f64) * (v as f64);
                }
            }
            count += (p.side * p.side) as usize;
        }
        if count == 0 {
            return Err(SrhError::Contract("cannot estimate channel statistics from no patches".into()));
        }
        let mut stats = ChannelStats::default();
        for ch in 0..3 {
            let mean = sum[ch] / count as f64;
            let var = (sq[ch] / count as f64 - mean * mean).max(0.0);
            stats.mean[ch] = mean as f32;
            stats.std[ch] = var.sqrt().max(1e-6) as f32;
        }
        Ok(stats)
    }

    /// Writes the standardized pixels of `p` into `out` (CHW).
    pub fn apply_into(&self, p: &Patch, out: &mut [f32]) {
        let n = (p.side * p.side) as usize;
        for ch in 0..3 {
            let (m, inv) = (self.mean[ch], 1.0 / self.std[ch]);
            for (o, &v) in out[ch * n..(ch + 1) * n].iter_mut().zip(p.plane(ch)) {
                *o = (v - m) * inv;
            }
        }
    }
}

/// Tiling, filtering and network-resolution settings shared by training,
/// evaluation and segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub patch_side: u32,
    pub stride: u32,
    /// Side of the downsampled patch the network sees.
    pub input_side: u32,
    pub thresholds: FilterThresholds,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_side: 300,
            stride: 300,
            input_side: 60,
            thresholds: FilterThresholds::default(),
        }
    }
}

/// Network-resolution patch plus the filter decision taken at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPatch {
    pub patch: Patch,
    pub decision: FilterDecision,
}

pub fn extract_patch(img: &VirtualImage, row: u32, col: u32, side: u32, origin: &PatchOrigin) -> Result<Patch> {
    if row + side > img.height || col + side > img.width {
        return Err(SrhError::Size(format!("window at ({row}, {col}) of side {side} leaves the image")));
    }
    Ok(Patch {
        side,
        pixels: crop(img, row, col, side),
        slide_id: origin.slide_id.clone(),
        patient_id: origin.patient_id.clone(),
        offset: (row, col),
        label: origin.label,
    })
}

/// Tiles a virtual image with `stride`, filters each window, and downsamples it
/// to `cfg.input_side`. Windows are returned in row-major order.
pub fn prepare_patches(img: &VirtualImage, origin: &PatchOrigin, cfg: &PatchConfig, stride: u32) -> Result<Vec<PreparedPatch>> {
    use rayon::prelude::*;
    if stride == 0 {
        return Err(SrhError::Contract("stride must be at least 1".into()));
    }
    if cfg.patch_side == 0 || cfg.patch_side > img.height || cfg.patch_side > img.width {
        return Err(SrhError::Size(format!(
            "patch side {} does not fit in {}x{} image",
            cfg.patch_side, img.height, img.width
        )));
    }
    let rows = window_starts(img.height, cfg.patch_side, stride);
    let cols = window_starts(img.width, cfg.patch_side, stride);
    let offsets: Vec<(u32, u32)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    offsets
        .par_iter()
        .map(|&(r, c)| {
            let full = extract_patch(img, r, c, cfg.patch_side, origin)?;
            let decision = filter_patch(&full, &cfg.thresholds);
            Ok(PreparedPatch { patch: downsample(&full, cfg.input_side)?, decision })
        })
        .collect()
}
