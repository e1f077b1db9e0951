//! Overlapping-window probability heatmaps and tumor/nontumor overlays.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, LumaA, Rgba};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};
use crate::evaluate::{soft_aggregate, ProbDist};
use crate::io::{ClassLabel, Mask, RawSrhImage};
use crate::preprocess::{prepare_patches, to_three_channel, PatchOrigin, VirtualImage};
use crate::trainer::Checkpoint;

/// Per-pixel mean of the distributions of all windows covering the pixel.
///
/// Coverage is constant on the rectangles cut out by window edges, so sums
/// and counts are kept per rectangle; pixel queries expand them.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: u32,
    pub width: u32,
    pub patch_side: u32,
    pub stride: u32,
    pub num_classes: usize,
    pub windows: Vec<((u32, u32), ProbDist)>,
    row_edges: Vec<u32>,
    col_edges: Vec<u32>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

fn edges(extent: u32, starts: impl Iterator<Item = u32>, side: u32) -> Vec<u32> {
    let mut e: Vec<u32> = starts.flat_map(|s| [s, s + side]).chain([0, extent]).collect();
    e.sort_unstable();
    e.dedup();
    e
}

impl Heatmap {
    /// Fuses window distributions; offsets are (row, col) of window corners.
    pub fn from_windows(height: u32, width: u32, patch_side: u32, stride: u32, windows: Vec<((u32, u32), ProbDist)>) -> Result<Self> {
        let k = windows.first().map_or(0, |(_, d)| d.len());
        if windows.iter().any(|((r, c), d)| r + patch_side > height || c + patch_side > width || d.len() != k) {
            return Err(SrhError::Shape("window outside the slide or with a different class count".into()));
        }
        let row_edges = edges(height, windows.iter().map(|w| w.0 .0), patch_side);
        let col_edges = edges(width, windows.iter().map(|w| w.0 .1), patch_side);
        let (nr, nc) = (row_edges.len() - 1, col_edges.len() - 1);
        let mut sums = vec![0.0; nr * nc * k];
        let mut counts = vec![0u32; nr * nc];
        let pos = |e: &[u32], v: u32| e.partition_point(|&x| x < v);
        for ((r, c), d) in &windows {
            let (r0, r1) = (pos(&row_edges, *r), pos(&row_edges, r + patch_side));
            let (c0, c1) = (pos(&col_edges, *c), pos(&col_edges, c + patch_side));
            for i in r0..r1 {
                for j in c0..c1 {
                    let cell = i * nc + j;
                    counts[cell] += 1;
                    for (s, v) in sums[cell * k..(cell + 1) * k].iter_mut().zip(d.as_slice()) {
                        *s += v;
                    }
                }
            }
        }
        Ok(Self { height, width, patch_side, stride, num_classes: k, windows, row_edges, col_edges, sums, counts })
    }

    fn cell_index(edges: &[u32], v: u32) -> usize {
        edges.partition_point(|&x| x <= v) - 1
    }

    fn cell(&self, row: u32, col: u32) -> usize {
        Self::cell_index(&self.row_edges, row) * (self.col_edges.len() - 1) + Self::cell_index(&self.col_edges, col)
    }

    pub fn coverage(&self, row: u32, col: u32) -> u32 {
        self.counts[self.cell(row, col)]
    }

    /// Mean distribution at a pixel, `None` when no window covers it.
    pub fn pixel(&self, row: u32, col: u32) -> Option<Vec<f64>> {
        let cell = self.cell(row, col);
        let n = self.counts[cell];
        (n > 0).then(|| self.sums[cell * self.num_classes..(cell + 1) * self.num_classes].iter().map(|s| s / n as f64).collect())
    }

    /// Per-pixel map of `f(mean distribution)`, row-major; `None` where uncovered.
    pub fn map_pixels<T: Clone>(&self, f: impl Fn(&[f64]) -> T) -> Vec<Option<T>> {
        let (nr, nc) = (self.row_edges.len() - 1, self.col_edges.len() - 1);
        let k = self.num_classes;
        let per_cell: Vec<Option<T>> = (0..nr * nc)
            .map(|cell| {
                let n = self.counts[cell];
                (n > 0).then(|| {
                    let mean: Vec<f64> = self.sums[cell * k..(cell + 1) * k].iter().map(|s| s / n as f64).collect();
                    f(&mean)
                })
            })
            .collect();
        let col_cell: Vec<usize> = (0..self.width).map(|c| Self::cell_index(&self.col_edges, c)).collect();
        let mut out = Vec::with_capacity((self.height * self.width) as usize);
        for r in 0..self.height {
            let base = Self::cell_index(&self.row_edges, r) * nc;
            out.extend(col_cell.iter().map(|&j| per_cell[base + j].clone()));
        }
        out
    }

    /// Soft aggregate of every window on the slide.
    pub fn slide_distribution(&self) -> Result<ProbDist> {
        let d: Vec<ProbDist> = self.windows.iter().map(|(_, d)| d.clone()).collect();
        soft_aggregate(&d)
    }

    /// Pixels whose most probable class is a tumor class.
    pub fn tumor_mask(&self) -> Result<Mask> {
        let data = self
            .map_pixels(|p| {
                let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                best < ClassLabel::TUMOR.len()
            })
            .into_iter()
            .map(|v| v.unwrap_or(false))
            .collect();
        Mask::new(self.height, self.width, data)
    }

    pub fn coverage_stats(&self) -> CoverageStats {
        let total = self.height as u64 * self.width as u64;
        let (mut covered, mut min, mut max, mut sum) = (0u64, u32::MAX, 0u32, 0u64);
        for i in 0..self.row_edges.len() - 1 {
            for j in 0..self.col_edges.len() - 1 {
                let area = (self.row_edges[i + 1] - self.row_edges[i]) as u64 * (self.col_edges[j + 1] - self.col_edges[j]) as u64;
                let n = self.counts[i * (self.col_edges.len() - 1) + j];
                if n > 0 {
                    covered += area;
                    min = min.min(n);
                }
                max = max.max(n);
                sum += n as u64 * area;
            }
        }
        CoverageStats {
            covered_fraction: covered as f64 / total as f64,
            min_windows: if covered == 0 { 0 } else { min },
            max_windows: max,
            mean_windows: sum as f64 / total as f64,
            windows: self.windows.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub covered_fraction: f64,
    pub min_windows: u32,
    pub max_windows: u32,
    pub mean_windows: f64,
    pub windows: usize,
}

/// Predicts every window of a slide at `stride` and fuses them.
pub fn probability_heatmap(slide: &RawSrhImage, ckpt: &Checkpoint, stride: u32) -> Result<Heatmap> {
    let cfg = ckpt.meta.patch;
    if stride == 0 || stride > cfg.patch_side {
        return Err(SrhError::Contract(format!("stride {stride} must be in 1..={}", cfg.patch_side)));
    }
    slide.check_admissible(cfg.patch_side)?;
    let origin = PatchOrigin { slide_id: String::new(), patient_id: String::new(), label: ClassLabel::Nondiagnostic };
    let prepared = prepare_patches(&to_three_channel(slide), &origin, &cfg, stride)?;
    let refs: Vec<_> = prepared.iter().map(|p| &p.patch).collect();
    let dists = ckpt.predict(&refs)?;
    let windows = prepared
        .iter()
        .zip(dists)
        .map(|(p, d)| Ok((p.patch.offset, ProbDist::new(d)?)))
        .collect::<Result<Vec<_>>>()?;
    Heatmap::from_windows(slide.height, slide.width, cfg.patch_side, stride, windows)
}

/// Tumor and nontumor probability planes for the two classes chosen from
/// the slide-level aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoChannelView {
    pub height: u32,
    pub width: u32,
    pub tumor: Vec<f32>,
    pub nontumor: Vec<f32>,
    pub covered: Vec<bool>,
    pub tumor_class: ClassLabel,
    pub nontumor_class: ClassLabel,
}

fn best_of(dist: &ProbDist, classes: &[ClassLabel]) -> ClassLabel {
    let p = dist.as_slice();
    classes.iter().copied().fold(classes[0], |b, c| if p[c.index()] > p[b.index()] { c } else { b })
}

pub fn two_channel_view(h: &Heatmap) -> Result<TwoChannelView> {
    if h.num_classes != crate::io::NUM_CLASSES {
        return Err(SrhError::Shape(format!("heatmap has {} classes, expected {}", h.num_classes, crate::io::NUM_CLASSES)));
    }
    let slide = h.slide_distribution()?;
    let tumor_class = best_of(&slide, &ClassLabel::TUMOR);
    let nontumor_class = best_of(&slide, &ClassLabel::NONTUMOR);
    let (ti, ni) = (tumor_class.index(), nontumor_class.index());
    let px = h.map_pixels(|p| (p[ti] as f32, p[ni] as f32));
    Ok(TwoChannelView {
        height: h.height,
        width: h.width,
        tumor: px.iter().map(|v| v.map_or(0.0, |x| x.0)).collect(),
        nontumor: px.iter().map(|v| v.map_or(0.0, |x| x.1)).collect(),
        covered: px.iter().map(Option::is_some).collect(),
        tumor_class,
        nontumor_class,
    })
}

fn encode_png<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    img: ImageBuffer<P, Vec<S>>,
) -> Result<Vec<u8>>
where
    [S]: image::EncodableLayout,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Grayscale rendering of the virtual image, scaled by its brightest pixel.
pub fn grayscale_base(img: &VirtualImage) -> Vec<u8> {
    let n = (img.height * img.width) as usize;
    let lum: Vec<f32> = (0..n).map(|i| (img.plane(1)[i] + img.plane(2)[i]) * 0.5).collect();
    let max = lum.iter().copied().fold(0.0f32, f32::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    lum.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect()
}

/// RGBA overlay: red = tumor probability, blue = nontumor probability,
/// blended with weight `alpha` over the grayscale slide. Uncovered pixels
/// show the base only.
pub fn render_overlay(slide: &VirtualImage, view: &TwoChannelView, alpha: f32) -> Result<Vec<u8>> {
    if slide.height != view.height || slide.width != view.width {
        return Err(SrhError::Shape(format!(
            "slide {}x{} does not match heatmap {}x{}",
            slide.height, slide.width, view.height, view.width
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SrhError::Contract(format!("alpha {alpha} outside [0, 1]")));
    }
    let base = grayscale_base(slide);
    let img = ImageBuffer::from_fn(slide.width, slide.height, |c, r| {
        let i = (r * slide.width + c) as usize;
        let g = base[i] as f32;
        if !view.covered[i] {
            return Rgba([base[i], base[i], base[i], 255]);
        }
        let blend = |color: f32| ((1.0 - alpha) * g + alpha * color).round().clamp(0.0, 255.0) as u8;
        Rgba([blend(255.0 * view.tumor[i]), blend(0.0), blend(255.0 * view.nontumor[i]), 255])
    });
    encode_png(img)
}

/// 16-bit gray probability with alpha 0 on uncovered pixels.
pub fn render_channel(values: &[f32], covered: &[bool], height: u32, width: u32) -> Result<Vec<u8>> {
    if values.len() != (height * width) as usize || covered.len() != values.len() {
        return Err(SrhError::Shape("channel length does not match dimensions".into()));
    }
    let img = ImageBuffer::from_fn(width, height, |c, r| {
        let i = (r * width + c) as usize;
        let v = (values[i].clamp(0.0, 1.0) * 65535.0).round() as u16;
        LumaA([v, if covered[i] { u16::MAX } else { 0 }])
    });
    encode_png(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tumor_class: ClassLabel,
    pub nontumor_class: ClassLabel,
    pub stride: u32,
    pub patch_side: u32,
    pub alpha: f32,
    pub slide_distribution: ProbDist,
    pub coverage: CoverageStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutputs {
    pub overlay: PathBuf,
    pub tumor_channel: PathBuf,
    pub nontumor_channel: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes `{stem}_overlay.png`, `{stem}_tumor.png`, `{stem}_nontumor.png` and `{stem}.json`.
pub fn write_segmentation(dir: &Path, stem: &str, slide: &RawSrhImage, heatmap: &Heatmap, alpha: f32) -> Result<(SegmentationOutputs, Sidecar)> {
    fs::create_dir_all(dir).map_err(|e| SrhError::io(dir, e))?;
    let view = two_channel_view(heatmap)?;
    let write = |name: String, bytes: Vec<u8>| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| SrhError::io(&path, e))?;
        Ok(path)
    };
    let overlay = write(format!("{stem}_overlay.png"), render_overlay(&to_three_channel(slide), &view, alpha)?)?;
    let tumor_channel = write(format!("{stem}_tumor.png"), render_channel(&view.tumor, &view.covered, view.height, view.width)?)?;
    let nontumor_channel =
        write(format!("{stem}_nontumor.png"), render_channel(&view.nontumor, &view.covered, view.height, view.width)?)?;
    let sidecar = Sidecar {
        tumor_class: view.tumor_class,
        nontumor_class: view.nontumor_class,
        stride: heatmap.stride,
        patch_side: heatmap.patch_side,
        alpha,
        slide_distribution: heatmap.slide_distribution()?,
        coverage: heatmap.coverage_stats(),
    };
    let sidecar_path = write(format!("{stem}.json"), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok((SegmentationOutputs { overlay, tumor_channel, nontumor_channel, sidecar: sidecar_path }, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two(t: f64) -> ProbDist {
        ProbDist::new(vec![t, 1.0 - t]).unwrap()
    }

    fn eight(tumor: ClassLabel, t: f64, nontumor: ClassLabel) -> ProbDist {
        let mut p = vec![0.0; 8];
        p[tumor.index()] += t;
        p[nontumor.index()] += 1.0 - t;
        ProbDist::new(p).unwrap()
    }

    #[test]
    fn single_window_is_constant() {
        let h = Heatmap::from_windows(10, 10, 10, 10, vec![((0, 0), two(0.3))]).unwrap();
        for (r, c) in [(0, 0), (9, 9), (4, 7)] {
            assert_eq!(h.pixel(r, c).unwrap(), vec![0.3, 0.7]);
        }
        assert_eq!(h.coverage_stats().covered_fraction, 1.0);
    }

    #[test]
    fn half_overlap_averages() {
        let h = Heatmap::from_windows(10, 20, 10, 5, vec![((0, 0), two(0.2)), ((0, 5), two(0.8)), ((0, 10), two(0.8))]).unwrap();
        assert!((h.pixel(3, 2).unwrap()[0] - 0.2).abs() < 1e-15);
        assert!((h.pixel(3, 7).unwrap()[0] - 0.5).abs() < 1e-15);
        assert_eq!(h.coverage(3, 7), 2);
        assert_eq!(h.coverage(3, 19), 1);
    }

    #[test]
    fn uncovered_pixels_are_flagged() {
        let h = Heatmap::from_windows(10, 13, 10, 10, vec![((0, 0), two(0.5))]).unwrap();
        assert!(h.pixel(0, 12).is_none());
        assert_eq!(h.coverage(0, 12), 0);
        let m = h.map_pixels(|p| p[0]);
        assert!(m[12].is_none() && m[0].is_some());
        assert!(Heatmap::from_windows(10, 10, 10, 10, vec![((1, 0), two(0.5))]).is_err());
    }

    #[test]
    fn two_channel_picks_best_of_each_group() {
        use ClassLabel::*;
        let h = Heatmap::from_windows(
            4,
            8,
            4,
            4,
            vec![((0, 0), eight(Meningioma, 0.9, Nondiagnostic)), ((0, 4), eight(Meningioma, 0.2, Nondiagnostic))],
        )
        .unwrap();
        let v = two_channel_view(&h).unwrap();
        assert_eq!((v.tumor_class, v.nontumor_class), (Meningioma, Nondiagnostic));
        assert!((v.tumor[0] - 0.9).abs() < 1e-6 && (v.nontumor[7] - 0.8).abs() < 1e-6);
        let pure = Heatmap::from_windows(4, 4, 4, 4, vec![((0, 0), eight(Lymphoma, 1.0, NormalBrain))]).unwrap();
        let v = two_channel_view(&pure).unwrap();
        assert!(v.nontumor.iter().all(|&x| x < 1e-6));
    }

    fn flat_slide(h: u32, w: u32, v: u16) -> VirtualImage {
        to_three_channel(&RawSrhImage::new(h, w, vec![v; (h * w) as usize], vec![v; (h * w) as usize]).unwrap())
    }

    fn decode(png: &[u8]) -> image::RgbaImage {
        image::load_from_memory(png).unwrap().to_rgba8()
    }

    #[test]
    fn overlay_blend_limits() {
        use ClassLabel::*;
        let slide = flat_slide(4, 4, 30000);
        let h = Heatmap::from_windows(4, 4, 4, 4, vec![((0, 0), eight(Meningioma, 1.0, NormalBrain))]).unwrap();
        let v = two_channel_view(&h).unwrap();
        let base = decode(&render_overlay(&slide, &v, 0.0).unwrap());
        assert!(base.pixels().all(|p| p.0 == [255, 255, 255, 255]));
        let red = decode(&render_overlay(&slide, &v, 1.0).unwrap());
        assert!(red.pixels().all(|p| p.0 == [255, 0, 0, 255]));
        assert_eq!(render_overlay(&slide, &v, 0.4).unwrap(), render_overlay(&slide, &v, 0.4).unwrap());
        assert!(render_overlay(&flat_slide(4, 5, 1), &v, 0.5).is_err());
    }

    #[test]
    fn channel_png_is_sixteen_bit_with_coverage_alpha() {
        let png = render_channel(&[0.0, 0.5, 1.0, 0.25], &[true, true, true, false], 2, 2).unwrap();
        let img = image::load_from_memory(&png).unwrap().to_luma_alpha16();
        assert_eq!(img.get_pixel(1, 0).0, [32768, 65535]);
        assert_eq!(img.get_pixel(0, 1).0, [65535, 65535]);
        assert_eq!(img.get_pixel(1, 1).0[1], 0);
    }

    proptest! {
        #[test]
        fn no_overlap_reproduces_tiles(ts in proptest::collection::vec(0.0f64..1.0, 9)) {
            let windows: Vec<_> = (0..9).map(|i| (((i / 3) * 5, (i % 3) * 5), two(ts[i as usize]))).collect();
            let h = Heatmap::from_windows(15, 15, 5, 5, windows).unwrap();
            for r in 0..15 {
                for c in 0..15 {
                    let t = ts[((r / 5) * 3 + c / 5) as usize];
                    prop_assert_eq!(h.pixel(r, c).unwrap()[0], t);
                }
            }
        }

        #[test]
        fn shrinking_stride_keeps_pixels_with_same_cover(ts in proptest::collection::vec(0.0f64..1.0, 16)) {
            // Window value depends only on its offset, so the coarse grid is a
            // subset of the fine grid with identical distributions.
            let dist = |r: u32, c: u32| two(ts[((r / 2 + c / 2) % 16) as usize]);
            let grid = |stride: u32| -> Vec<((u32, u32), ProbDist)> {
                let starts: Vec<u32> = (0..=(16 - 8) / stride).map(|i| i * stride).collect();
                starts.iter().flat_map(|&r| starts.iter().map(move |&c| ((r, c), dist(r, c)))).collect()
            };
            let coarse = Heatmap::from_windows(16, 16, 8, 4, grid(4)).unwrap();
            let fine = Heatmap::from_windows(16, 16, 8, 2, grid(2)).unwrap();
            let covering = |windows: &[((u32, u32), ProbDist)], r: u32, c: u32| -> Vec<(u32, u32)> {
                windows.iter().map(|w| w.0).filter(|&(wr, wc)| wr <= r && r < wr + 8 && wc <= c && c < wc + 8).collect()
            };
            for r in 0..16 {
                for c in 0..16 {
                    if covering(&coarse.windows, r, c) == covering(&fine.windows, r, c) {
                        let (a, b) = (coarse.pixel(r, c).unwrap(), fine.pixel(r, c).unwrap());
                        prop_assert!((a[0] - b[0]).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn covered_pixels_are_distributions(ts in proptest::collection::vec(0.0f64..1.0, 16), stride in 1u32..8) {
            let starts: Vec<u32> = (0..=(20 - 8) / stride).map(|i| i * stride).collect();
            let windows: Vec<_> = starts.iter().enumerate()
                .flat_map(|(i, &r)| starts.iter().enumerate().map(move |(j, &c)| ((r, c), (i + j) % 16)))
                .map(|(o, k)| (o, two(ts[k])))
                .collect();
            let h = Heatmap::from_windows(20, 20, 8, stride, windows).unwrap();
            for p in h.map_pixels(|p| p.to_vec()).into_iter().flatten() {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
