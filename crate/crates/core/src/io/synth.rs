//! Deterministic procedural stand-ins for SRH slides.
//!
//! Every class is a background field (two octaves of value noise over a flat
//! lipid/protein level) plus one or more families of "nuclei": soft-edged
//! ellipses that raise the 2930 cm⁻¹ channel and dim the 2845 cm⁻¹ channel.
//! Meningioma additionally draws rare whorl rings. The whole parameter set
//! lives in [`texture_params`] so signatures can be computed from it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::label::ClassLabel;
use super::mask::Mask;
use super::slide::RawSrhImage;
use crate::error::{Result, SrhError};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    Random,
    /// Shared slide-level angle with per-nucleus jitter (radians).
    Aligned { jitter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arrangement {
    Uniform,
    /// Nuclei scattered around cluster centers.
    Clustered { members: usize, spread: f64 },
    /// Nuclei placed on small rings (acini).
    Acinar { members: usize, ring_radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NucleusFamily {
    /// Nuclei per 10⁴ px².
    pub density: f64,
    pub radius: f64,
    /// Relative uniform jitter on the radius.
    pub radius_jitter: f64,
    /// Major/minor axis ratio; area is kept at π·radius².
    pub elongation: f64,
    pub orientation: Orientation,
    pub arrangement: Arrangement,
    pub amp2845: f64,
    pub amp2930: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingFamily {
    /// Rings per 10⁶ px².
    pub density: f64,
    pub radius: f64,
    pub thickness: f64,
    pub amp2845: f64,
    pub amp2930: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureParams {
    pub bg2845: f64,
    pub bg2930: f64,
    /// Relative amplitude of the smooth background modulation.
    pub bg_noise: f64,
    /// Standard deviation of per-pixel Gaussian grain.
    pub grain: f64,
    pub nuclei: Vec<NucleusFamily>,
    pub rings: Option<RingFamily>,
}

const fn round_nuclei(density: f64, radius: f64, amp2845: f64, amp2930: f64) -> NucleusFamily {
    NucleusFamily {
        density,
        radius,
        radius_jitter: 0.1,
        elongation: 1.0,
        orientation: Orientation::Random,
        arrangement: Arrangement::Uniform,
        amp2845,
        amp2930,
    }
}

/// The per-class texture table.
pub fn texture_params(label: ClassLabel) -> TextureParams {
    use ClassLabel::*;
    match label {
        // Monotonous medium round nuclei, acinar structure lost.
        PituitaryAdenoma => TextureParams {
            bg2845: 0.30,
            bg2930: 0.40,
            bg_noise: 0.06,
            grain: 0.02,
            nuclei: vec![round_nuclei(18.0, 6.5, -0.06, 0.30)],
            rings: None,
        },
        // Round-oval nuclei with occasional whorls.
        Meningioma => TextureParams {
            bg2845: 0.32,
            bg2930: 0.42,
            bg_noise: 0.06,
            grain: 0.02,
            nuclei: vec![NucleusFamily {
                radius_jitter: 0.2,
                elongation: 1.4,
                ..round_nuclei(12.0, 7.0, -0.04, 0.26)
            }],
            rings: Some(RingFamily {
                density: 8.0,
                radius: 45.0,
                thickness: 5.0,
                amp2845: 0.0,
                amp2930: 0.18,
            }),
        },
        // Aligned spindle nuclei.
        Schwannoma => TextureParams {
            bg2845: 0.33,
            bg2930: 0.41,
            bg_noise: 0.06,
            grain: 0.02,
            nuclei: vec![NucleusFamily {
                radius_jitter: 0.15,
                elongation: 5.0,
                orientation: Orientation::Aligned { jitter: 0.25 },
                ..round_nuclei(20.0, 5.0, -0.05, 0.28)
            }],
            rings: None,
        },
        // Dense small round cells.
        Lymphoma => TextureParams {
            bg2845: 0.26,
            bg2930: 0.42,
            bg_noise: 0.06,
            grain: 0.02,
            nuclei: vec![NucleusFamily {
                radius_jitter: 0.15,
                ..round_nuclei(45.0, 4.5, -0.06, 0.34)
            }],
            rings: None,
        },
        // Large pleomorphic nuclei in cohesive clusters.
        Metastasis => TextureParams {
            bg2845: 0.30,
            bg2930: 0.40,
            bg_noise: 0.08,
            grain: 0.02,
            nuclei: vec![NucleusFamily {
                radius_jitter: 0.4,
                elongation: 1.5,
                arrangement: Arrangement::Clustered {
                    members: 10,
                    spread: 35.0,
                },
                ..round_nuclei(6.0, 10.0, -0.05, 0.32)
            }],
            rings: None,
        },
        // Lipid-rich neuropil with sparse somata and thin axons.
        NormalBrain => TextureParams {
            bg2845: 0.55,
            bg2930: 0.30,
            bg_noise: 0.05,
            grain: 0.02,
            nuclei: vec![
                round_nuclei(1.5, 8.0, -0.15, 0.20),
                NucleusFamily {
                    radius_jitter: 0.2,
                    elongation: 25.0,
                    ..round_nuclei(3.0, 2.5, 0.08, 0.03)
                },
            ],
            rings: None,
        },
        // Nuclei arranged in small acini.
        NormalPituitary => TextureParams {
            bg2845: 0.36,
            bg2930: 0.36,
            bg_noise: 0.05,
            grain: 0.02,
            nuclei: vec![NucleusFamily {
                arrangement: Arrangement::Acinar {
                    members: 8,
                    ring_radius: 18.0,
                },
                ..round_nuclei(12.0, 4.5, -0.03, 0.22)
            }],
            rings: None,
        },
        // Flat, near-background, almost no structure.
        Nondiagnostic => TextureParams {
            bg2845: 0.38,
            bg2930: 0.22,
            bg_noise: 0.012,
            grain: 0.004,
            nuclei: vec![],
            rings: None,
        },
    }
}

/// Per-patient multiplicative variation of nucleus contrast and density.
#[derive(Debug, Clone, Copy)]
struct PatientJitter {
    gain: f64,
    density: f64,
}

impl PatientJitter {
    fn from_seed(patient_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(patient_seed, 0xA11CE));
        Self {
            gain: rng.random_range(0.7..1.3),
            density: rng.random_range(0.55..1.45),
        }
    }
}

/// Smooth noise in roughly [-1, 1] from a bilinearly interpolated lattice.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, height: u32, width: u32, cell: f64) -> Self {
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let lattice = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            cell,
            cols,
            lattice,
        }
    }

    fn sample(&self, row: f64, col: f64) -> f64 {
        let (y, x) = (row / self.cell, col / self.cell);
        let (i, j) = (y.floor() as usize, x.floor() as usize);
        let (fy, fx) = (y - i as f64, x - j as f64);
        // Smoothstep for C1 continuity across cells.
        let (sy, sx) = (fy * fy * (3.0 - 2.0 * fy), fx * fx * (3.0 - 2.0 * fx));
        let at = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = at(i, j) * (1.0 - sx) + at(i, j + 1) * sx;
        let bottom = at(i + 1, j) * (1.0 - sx) + at(i + 1, j + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

/// Floating-point canvas; values are fractions of full scale.
struct Canvas {
    height: u32,
    width: u32,
    ch2845: Vec<f64>,
    ch2930: Vec<f64>,
    occupancy: Vec<f64>,
}

impl Canvas {
    /// Adds `coverage` worth of stain at a pixel without stacking overlapping nuclei.
    fn stain(&mut self, idx: usize, coverage: f64, amp2845: f64, amp2930: f64) {
        let delta = coverage - self.occupancy[idx];
        if delta > 0.0 {
            self.occupancy[idx] = coverage;
            self.ch2845[idx] += amp2845 * delta;
            self.ch2930[idx] += amp2930 * delta;
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, semi_major: f64, semi_minor: f64, angle: f64, amps: (f64, f64)) {
        let reach = semi_major + 1.0;
        let (r0, r1) = (
            (cy - reach).floor().max(0.0) as i64,
            (cy + reach).ceil().min(self.height as f64 - 1.0) as i64,
        );
        let (c0, c1) = (
            (cx - reach).floor().max(0.0) as i64,
            (cx + reach).ceil().min(self.width as f64 - 1.0) as i64,
        );
        let (sin, cos) = angle.sin_cos();
        let edge = semi_minor.min(semi_major);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                let q = ((u / semi_major).powi(2) + (v / semi_minor).powi(2)).sqrt();
                let coverage = ((1.0 - q) * edge + 0.5).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    let idx = r as usize * self.width as usize + c as usize;
                    self.stain(idx, coverage, amps.0, amps.1);
                }
            }
        }
    }

    fn ring(&mut self, cy: f64, cx: f64, radius: f64, thickness: f64, amps: (f64, f64)) {
        let reach = radius + thickness;
        let (r0, r1) = (
            (cy - reach).floor().max(0.0) as i64,
            (cy + reach).ceil().min(self.height as f64 - 1.0) as i64,
        );
        let (c0, c1) = (
            (cx - reach).floor().max(0.0) as i64,
            (cx + reach).ceil().min(self.width as f64 - 1.0) as i64,
        );
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                let coverage = (thickness / 2.0 - (d - radius).abs() + 0.5).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    let idx = r as usize * self.width as usize + c as usize;
                    self.stain(idx, coverage, amps.0, amps.1);
                }
            }
        }
    }
}

fn render_texture(label: ClassLabel, patient_seed: u64, slide_seed: u64, height: u32, width: u32) -> (Vec<f64>, Vec<f64>) {
    let params = texture_params(label);
    let jitter = PatientJitter::from_seed(patient_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(patient_seed, slide_seed),
        label.index() as u64 + 1,
    ));
    let n = height as usize * width as usize;

    let coarse = ValueNoise::new(&mut rng, height, width, 48.0);
    let fine = ValueNoise::new(&mut rng, height, width, 12.0);
    let mut canvas = Canvas {
        height,
        width,
        ch2845: vec![0.0; n],
        ch2930: vec![0.0; n],
        occupancy: vec![0.0; n],
    };
    for r in 0..height as usize {
        for c in 0..width as usize {
            let m = coarse.sample(r as f64, c as f64) + 0.5 * fine.sample(r as f64, c as f64);
            let idx = r * width as usize + c;
            canvas.ch2845[idx] = params.bg2845 * (1.0 + params.bg_noise * m);
            canvas.ch2930[idx] = params.bg2930 * (1.0 + params.bg_noise * m);
        }
    }

    let area = n as f64;
    let slide_angle = rng.random_range(0.0..PI);
    for fam in &params.nuclei {
        let count = (fam.density * jitter.density * area / 1e4).round() as usize;
        let amps = (fam.amp2845 * jitter.gain, fam.amp2930 * jitter.gain);
        let mut centers = Vec::with_capacity(count);
        match fam.arrangement {
            Arrangement::Uniform => {
                for _ in 0..count {
                    centers.push((rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64)));
                }
            }
            Arrangement::Clustered { members, spread } => {
                while centers.len() < count {
                    let (hy, hx) = (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64));
                    for _ in 0..members.min(count - centers.len()) {
                        let rad = spread * rng.random::<f64>().sqrt();
                        let phi = rng.random_range(0.0..2.0 * PI);
                        centers.push((hy + rad * phi.sin(), hx + rad * phi.cos()));
                    }
                }
            }
            Arrangement::Acinar { members, ring_radius } => {
                while centers.len() < count {
                    let (hy, hx) = (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64));
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for k in 0..members.min(count - centers.len()) {
                        let phi = phase + 2.0 * PI * k as f64 / members as f64;
                        let rad = ring_radius * rng.random_range(0.9..1.1);
                        centers.push((hy + rad * phi.sin(), hx + rad * phi.cos()));
                    }
                }
            }
        }
        for (cy, cx) in centers {
            let radius = fam.radius * (1.0 + fam.radius_jitter * rng.random_range(-1.0..1.0));
            let angle = match fam.orientation {
                Orientation::Random => rng.random_range(0.0..PI),
                Orientation::Aligned { jitter } => slide_angle + jitter * rng.random_range(-1.0..1.0),
            };
            let e = fam.elongation.sqrt();
            canvas.ellipse(cy, cx, radius * e, radius / e, angle, amps);
        }
    }

    if let Some(rings) = params.rings {
        let expected = rings.density * jitter.density * area / 1e6;
        // Rare structures: round the expectation stochastically.
        let count = expected.floor() as usize + (rng.random::<f64>() < expected.fract()) as usize;
        for _ in 0..count {
            let (cy, cx) = (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64));
            let radius = rings.radius * rng.random_range(0.75..1.25);
            canvas.ring(cy, cx, radius, rings.thickness, (rings.amp2845 * jitter.gain, rings.amp2930 * jitter.gain));
        }
    }

    let grain = Normal::new(0.0, params.grain).expect("grain std is finite");
    for idx in 0..n {
        canvas.ch2845[idx] += grain.sample(&mut rng);
        canvas.ch2930[idx] += grain.sample(&mut rng);
    }
    (canvas.ch2845, canvas.ch2930)
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn check_dims(height: u32, width: u32, patch_side: u32) -> Result<()> {
    if height < patch_side || width < patch_side {
        return Err(SrhError::Size(format!(
            "synthetic slide {height}x{width} is smaller than patch side {patch_side}"
        )));
    }
    Ok(())
}

/// One synthetic slide of the given class. Pure function of its arguments.
pub fn generate_synthetic_slide(
    label: ClassLabel,
    patient_seed: u64,
    slide_seed: u64,
    height: u32,
    width: u32,
    patch_side: u32,
) -> Result<RawSrhImage> {
    check_dims(height, width, patch_side)?;
    let (a, b) = render_texture(label, patient_seed, slide_seed, height, width);
    RawSrhImage::new(
        height,
        width,
        a.into_iter().map(quantize).collect(),
        b.into_iter().map(quantize).collect(),
    )
}

fn check_pair(tumor: ClassLabel, nontumor: ClassLabel) -> Result<()> {
    if !tumor.is_tumor() {
        return Err(SrhError::Label(format!("`{tumor}` is not a tumor class")));
    }
    if nontumor.is_tumor() {
        return Err(SrhError::Label(format!("`{nontumor}` is not a nontumor class")));
    }
    Ok(())
}

fn compose(tumor: ClassLabel, nontumor: ClassLabel, seed: u64, mask: &Mask) -> Result<RawSrhImage> {
    let (h, w) = (mask.height, mask.width);
    let patient = mix_seed(seed, 0x7001);
    let (ta, tb) = render_texture(tumor, patient, mix_seed(seed, 1), h, w);
    let (na, nb) = render_texture(nontumor, patient, mix_seed(seed, 2), h, w);
    let pick = |t: &[f64], n: &[f64]| -> Vec<u16> {
        mask.data
            .iter()
            .enumerate()
            .map(|(i, &is_tumor)| quantize(if is_tumor { t[i] } else { n[i] }))
            .collect()
    };
    RawSrhImage::new(h, w, pick(&ta, &na), pick(&tb, &nb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSpec {
    pub height: u32,
    pub width: u32,
    /// Requested fraction of tumor pixels.
    pub tumor_fraction: f64,
    pub patch_side: u32,
}

impl Default for MarginSpec {
    fn default() -> Self {
        Self {
            height: 1500,
            width: 1500,
            tumor_fraction: 0.5,
            patch_side: 300,
        }
    }
}

/// Two textures split by a smooth random boundary, plus the exact mask used.
///
/// The boundary is a level set of a random linear ramp perturbed by a few
/// low-frequency sinusoids; its offset is the requested quantile of that
/// field, so the tumor fraction is met up to ties.
pub fn generate_synthetic_margin_slide(
    tumor: ClassLabel,
    nontumor: ClassLabel,
    mask_seed: u64,
    spec: &MarginSpec,
) -> Result<(RawSrhImage, Mask)> {
    check_pair(tumor, nontumor)?;
    check_dims(spec.height, spec.width, spec.patch_side)?;
    if !(spec.tumor_fraction > 0.0 && spec.tumor_fraction < 1.0) {
        return Err(SrhError::Contract(format!(
            "tumor fraction {} must lie in (0, 1)",
            spec.tumor_fraction
        )));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mask_seed, 0xB0DE));
    let theta = rng.random_range(0.0..2.0 * PI);
    let (normal_y, normal_x) = theta.sin_cos();
    let scale = h.max(w) as f64;
    let waves: Vec<(f64, f64, f64)> = (1..=3)
        .map(|k| {
            let freq = 2.0 * PI * k as f64 / scale;
            let amp = scale * 0.06 / k as f64 * rng.random_range(0.5..1.0);
            (freq, amp, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let field: Vec<f64> = (0..h as usize * w as usize)
        .map(|i| {
            let (r, c) = ((i / w as usize) as f64, (i % w as usize) as f64);
            let along = -r * normal_x + c * normal_y;
            let across = r * normal_y + c * normal_x;
            across
                + waves
                    .iter()
                    .map(|(f, a, p)| a * (f * along + p).sin())
                    .sum::<f64>()
        })
        .collect();
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = ((spec.tumor_fraction * sorted.len() as f64).round() as usize).clamp(1, sorted.len() - 1);
    let cut = sorted[k];
    let mask = Mask::new(h, w, field.iter().map(|&v| v < cut).collect())?;
    let img = compose(tumor, nontumor, mask_seed, &mask)?;
    Ok((img, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiltrationSpec {
    pub height: u32,
    pub width: u32,
    pub islands: usize,
    /// Mean island radius in pixels.
    pub radius: f64,
    pub patch_side: u32,
}

impl Default for InfiltrationSpec {
    fn default() -> Self {
        Self {
            height: 2700,
            width: 2700,
            islands: 2,
            radius: 300.0,
            patch_side: 300,
        }
    }
}

/// Mostly-nontumor slide with small irregular tumor islands, plus their mask.
pub fn generate_synthetic_infiltration_slide(
    tumor: ClassLabel,
    nontumor: ClassLabel,
    seed: u64,
    spec: &InfiltrationSpec,
) -> Result<(RawSrhImage, Mask)> {
    check_pair(tumor, nontumor)?;
    check_dims(spec.height, spec.width, spec.patch_side)?;
    let (h, w) = (spec.height as f64, spec.width as f64);
    let margin = spec.radius * 1.3;
    if h < 2.0 * margin || w < 2.0 * margin {
        return Err(SrhError::Size("slide too small for the requested islands".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x151A));
    let mut islands: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while islands.len() < spec.islands {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SrhError::Contract("could not place non-overlapping islands".into()));
        }
        let cy = rng.random_range(margin..h - margin);
        let cx = rng.random_range(margin..w - margin);
        if islands
            .iter()
            .all(|&(y, x, _, _)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() > 2.6 * spec.radius)
        {
            islands.push((cy, cx, rng.random_range(0.0..2.0 * PI), rng.random_range(0.9..1.1)));
        }
    }
    let (hh, ww) = (spec.height as usize, spec.width as usize);
    let data = (0..hh * ww)
        .map(|i| {
            let (r, c) = ((i / ww) as f64, (i % ww) as f64);
            islands.iter().any(|&(cy, cx, phase, size)| {
                let (dy, dx) = (r - cy, c - cx);
                let phi = dy.atan2(dx);
                let boundary = spec.radius * size * (1.0 + 0.12 * (3.0 * phi + phase).sin());
                dy * dy + dx * dx < boundary * boundary
            })
        })
        .collect();
    let mask = Mask::new(spec.height, spec.width, data)?;
    let img = compose(tumor, nontumor, seed, &mask)?;
    Ok((img, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate_synthetic_slide(ClassLabel::Meningioma, 3, 4, 120, 130, 60).unwrap();
        let b = generate_synthetic_slide(ClassLabel::Meningioma, 3, 4, 120, 130, 60).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_slide(ClassLabel::Meningioma, 3, 5, 120, 130, 60).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_is_size_error() {
        assert!(matches!(
            generate_synthetic_slide(ClassLabel::Lymphoma, 1, 1, 299, 900, 300),
            Err(SrhError::Size(_))
        ));
    }

    #[test]
    fn margin_label_contract() {
        let spec = MarginSpec {
            height: 64,
            width: 64,
            patch_side: 32,
            ..MarginSpec::default()
        };
        assert!(generate_synthetic_margin_slide(ClassLabel::Meningioma, ClassLabel::NormalBrain, 1, &spec).is_ok());
        assert!(matches!(
            generate_synthetic_margin_slide(ClassLabel::NormalBrain, ClassLabel::Meningioma, 1, &spec),
            Err(SrhError::Label(_))
        ));
        assert!(matches!(
            generate_synthetic_margin_slide(ClassLabel::Meningioma, ClassLabel::Lymphoma, 1, &spec),
            Err(SrhError::Label(_))
        ));
    }

    #[test]
    fn margin_is_deterministic_and_mask_drives_pixels() {
        let spec = MarginSpec {
            height: 96,
            width: 80,
            patch_side: 32,
            ..MarginSpec::default()
        };
        let (img, mask) =
            generate_synthetic_margin_slide(ClassLabel::Meningioma, ClassLabel::Nondiagnostic, 9, &spec).unwrap();
        let (img2, mask2) =
            generate_synthetic_margin_slide(ClassLabel::Meningioma, ClassLabel::Nondiagnostic, 9, &spec).unwrap();
        assert_eq!(img, img2);
        assert_eq!(mask, mask2);
        assert!(mask.data.iter().any(|&b| b) && mask.data.iter().any(|&b| !b));
    }

    #[test]
    fn islands_cover_a_small_fraction() {
        let spec = InfiltrationSpec {
            height: 400,
            width: 400,
            islands: 2,
            radius: 40.0,
            patch_side: 100,
        };
        let (_, mask) =
            generate_synthetic_infiltration_slide(ClassLabel::Meningioma, ClassLabel::NormalBrain, 2, &spec).unwrap();
        let f = mask.fraction();
        assert!(f > 0.03 && f < 0.10, "island fraction {f}");
    }

    #[test]
    fn mix_seed_spreads() {
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
    }
}
