//! Checks of the synthetic generator against quantities derived from its
//! parameter table, and of the tissue filter against generated patches.

use std::f64::consts::PI;

use rayon::prelude::*;
use srh_core::evaluate::ProbDist;
use srh_core::io::synth::{Arrangement, InfiltrationSpec, TextureParams};
use srh_core::io::{
    generate_synthetic_infiltration_slide, generate_synthetic_margin_slide, generate_synthetic_slide, texture_params, ClassLabel, MarginSpec, Mask,
};
use srh_core::segment::{two_channel_view, Heatmap};
use srh_core::preprocess::{channel_moments, filter_patch, tile, to_three_channel, FilterDecision, FilterThresholds, PatchOrigin};

/// Expected (2845, 2930) channel means under a Boolean model: nuclei of one
/// family cover a pixel with probability 1 − exp(−λ·E[area]).
fn predicted_means(t: &TextureParams) -> (f64, f64) {
    let (mut a, mut b) = (t.bg2845, t.bg2930);
    for fam in &t.nuclei {
        let area = PI * fam.radius * fam.radius * (1.0 + fam.radius_jitter.powi(2) / 3.0);
        let cover = 1.0 - (-fam.density / 1e4 * area).exp();
        a += fam.amp2845 * cover;
        b += fam.amp2930 * cover;
    }
    (a, b)
}

fn measured_means(label: ClassLabel, seeds: u64) -> (f64, f64) {
    let sums: Vec<(f64, f64)> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let img = generate_synthetic_slide(label, 100 + s, s, 300, 300, 300).unwrap();
            let v = to_three_channel(&img);
            (channel_moments(v.plane(1)).0, channel_moments(v.plane(2)).0)
        })
        .collect();
    let n = sums.len() as f64;
    (sums.iter().map(|s| s.0).sum::<f64>() / n, sums.iter().map(|s| s.1).sum::<f64>() / n)
}

#[test]
fn class_signatures_follow_parameter_table() {
    // Clustered and acinar arrangements overlap more than the Boolean model assumes.
    const TOL: f64 = 0.01;
    let mut rows = Vec::new();
    for label in ClassLabel::ALL {
        let t = texture_params(label);
        let p = predicted_means(&t);
        let m = measured_means(label, 8);
        let tol = if t.nuclei.iter().any(|f| f.arrangement != Arrangement::Uniform) { 3.0 * TOL } else { TOL };
        println!("{label:>20}: predicted ({:.3}, {:.3}) measured ({:.3}, {:.3})", p.0, p.1, m.0, m.1);
        assert!((p.0 - m.0).abs() < tol && (p.1 - m.1).abs() < tol, "{label}");
        rows.push((label, m));
    }
    for (i, (la, a)) in rows.iter().enumerate() {
        for (lb, b) in &rows[i + 1..] {
            let gap = (a.0 - b.0).abs().max((a.1 - b.1).abs());
            assert!(gap > 0.005, "{la} and {lb} share a mean signature");
        }
    }
}

#[test]
fn different_labels_same_seeds_differ() {
    for pair in ClassLabel::ALL.windows(2) {
        let a = generate_synthetic_slide(pair[0], 7, 7, 300, 300, 300).unwrap();
        let b = generate_synthetic_slide(pair[1], 7, 7, 300, 300, 300).unwrap();
        let (va, vb) = (to_three_channel(&a), to_three_channel(&b));
        let sig = |v: &srh_core::preprocess::VirtualImage| [channel_moments(v.plane(1)), channel_moments(v.plane(2))];
        let (sa, sb) = (sig(&va), sig(&vb));
        let gap = sa.iter().zip(&sb).map(|(x, y)| (x.0 - y.0).abs().max((x.1 - y.1).abs() * 100.0)).fold(0.0, f64::max);
        assert!(gap > 0.005, "{} vs {}", pair[0], pair[1]);
    }
}

/// Decisions of the default filter on `slides` 900² slides (nine 300² patches each).
fn decisions(label: ClassLabel, slides: u64) -> Vec<FilterDecision> {
    let thresholds = FilterThresholds::default();
    (0..slides)
        .into_par_iter()
        .flat_map_iter(|s| {
            let img = generate_synthetic_slide(label, 5000 + s / 2, s, 900, 900, 300).unwrap();
            let origin = PatchOrigin { slide_id: format!("s{s}"), patient_id: "p".into(), label };
            tile(&to_three_channel(&img), 300, 300, &origin)
                .unwrap()
                .into_iter()
                .map(move |p| filter_patch(&p, &thresholds))
        })
        .collect()
}

fn share(d: &[FilterDecision], want: FilterDecision) -> f64 {
    d.iter().filter(|&&x| x == want).count() as f64 / d.len() as f64
}

#[test]
fn meningioma_patches_are_tumor_candidates() {
    let d = decisions(ClassLabel::Meningioma, 112);
    assert!(d.len() >= 1000);
    let s = share(&d, FilterDecision::TumorCandidate);
    assert!(s >= 0.95, "tumor candidate share {s}");
}

#[test]
fn normal_brain_patches_are_normal_candidates() {
    let d = decisions(ClassLabel::NormalBrain, 112);
    let s = share(&d, FilterDecision::NormalCandidate);
    assert!(s >= 0.90, "normal candidate share {s}");
}

#[test]
fn nondiagnostic_patches_fall_below_variance_threshold() {
    let t = FilterThresholds::default();
    // Background grain and modulation alone give B variance ≈ grain² + (bg·noise)²·Var(m).
    let p = texture_params(ClassLabel::Nondiagnostic);
    let bound = p.grain.powi(2) + (p.bg2930 * p.bg_noise * 1.5).powi(2);
    assert!(bound < t.var_threshold);
    for s in 0..20 {
        let img = generate_synthetic_slide(ClassLabel::Nondiagnostic, s, s, 300, 300, 300).unwrap();
        let v = to_three_channel(&img);
        let (_, var) = channel_moments(v.plane(2));
        assert!(var < t.var_threshold, "seed {s}: variance {var}");
    }
    assert!(share(&decisions(ClassLabel::Nondiagnostic, 4), FilterDecision::Nondiagnostic) == 1.0);
}

#[test]
fn margin_mask_fraction_matches_request() {
    let spec = MarginSpec { height: 300, width: 300, tumor_fraction: 0.5, patch_side: 300 };
    let fractions: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            generate_synthetic_margin_slide(ClassLabel::Meningioma, ClassLabel::NormalBrain, s, &spec)
                .unwrap()
                .1
                .fraction()
        })
        .collect();
    for (s, f) in fractions.iter().enumerate() {
        assert!((f - 0.5).abs() <= 0.05, "seed {s}: fraction {f}");
    }
}

/// Heatmap from a window classifier that sees the true mask: a window is
/// meningioma when more than half of it is tumor, nondiagnostic otherwise.
fn ideal_heatmap(mask: &Mask, patch: u32, stride: u32) -> Heatmap {
    let w = mask.width as usize;
    let mut integral = vec![0u32; (mask.height as usize + 1) * (w + 1)];
    for r in 0..mask.height as usize {
        for c in 0..w {
            integral[(r + 1) * (w + 1) + c + 1] = mask.data[r * w + c] as u32 + integral[r * (w + 1) + c + 1]
                + integral[(r + 1) * (w + 1) + c]
                - integral[r * (w + 1) + c];
        }
    }
    let at = |r: u32, c: u32| integral[r as usize * (w + 1) + c as usize] as f64;
    let mut windows = Vec::new();
    for r in (0..=mask.height - patch).step_by(stride as usize) {
        for c in (0..=mask.width - patch).step_by(stride as usize) {
            let inside = at(r + patch, c + patch) - at(r, c + patch) - at(r + patch, c) + at(r, c);
            let winner = if inside / (patch * patch) as f64 > 0.5 { ClassLabel::Meningioma } else { ClassLabel::Nondiagnostic };
            let mut p = vec![0.02 / 7.0; 8];
            p[winner.index()] = 0.98;
            windows.push(((r, c), ProbDist::new(p).unwrap()));
        }
    }
    Heatmap::from_windows(mask.height, mask.width, patch, stride, windows).unwrap()
}

#[test]
fn infiltration_fixture_is_detectable_by_an_ideal_window_classifier() {
    let spec = InfiltrationSpec::default();
    let results: Vec<(f64, f64)> = (0..5u64)
        .into_par_iter()
        .map(|s| {
            let (_, mask) = generate_synthetic_infiltration_slide(ClassLabel::Meningioma, ClassLabel::Nondiagnostic, 700 + s, &spec).unwrap();
            let view = two_channel_view(&ideal_heatmap(&mask, spec.patch_side, 100)).unwrap();
            let island: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
            let hit = island.iter().filter(|&&i| view.covered[i] && view.tumor[i] > 0.5).count();
            (mask.fraction(), hit as f64 / island.len() as f64)
        })
        .collect();
    for (s, (fraction, detection)) in results.iter().enumerate() {
        println!("seed {s}: island fraction {fraction:.3}, ideal detection {detection:.3}");
        assert!(*fraction <= 0.10, "seed {s}: slide is only {:.1}% nontumor", 100.0 * (1.0 - fraction));
    }
    let mean = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    assert!(mean >= 0.7, "ideal detection {mean}");
}
