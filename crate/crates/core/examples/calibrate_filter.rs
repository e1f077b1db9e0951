//! Derives the tissue-filter thresholds from the synthetic generator.
//!
//! For every class, tiles generated slides into 300 px patches and records the
//! mean and variance of the B channel. The variance threshold sits between the
//! nondiagnostic class and the least textured diagnostic class; the mean
//! threshold is the midpoint between the lowest tumor-class 2nd percentile and
//! the highest nontumor-class 98th percentile.
//!
//! `cargo run --release -p srh-core --example calibrate_filter [slides_per_class]`

use rayon::prelude::*;
use srh_core::io::{generate_synthetic_slide, ClassLabel};
use srh_core::preprocess::{channel_moments, tile, to_three_channel, PatchOrigin};

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn main() {
    let slides: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let mut moments = Vec::new();
    for label in ClassLabel::ALL {
        let mut m: Vec<(f64, f64)> = (0..slides)
            .into_par_iter()
            .flat_map_iter(|s| {
                let img = generate_synthetic_slide(label, 9000 + s / 2, s, 900, 900, 300).unwrap();
                let origin = PatchOrigin { slide_id: String::new(), patient_id: String::new(), label };
                tile(&to_three_channel(&img), 300, 300, &origin)
                    .unwrap()
                    .into_iter()
                    .map(|p| channel_moments(p.plane(2)))
            })
            .collect();
        m.sort_by(|a, b| a.0.total_cmp(&b.0));
        let means: Vec<f64> = m.iter().map(|x| x.0).collect();
        let mut vars: Vec<f64> = m.iter().map(|x| x.1).collect();
        vars.sort_by(f64::total_cmp);
        println!(
            "{:>18}  mean p02 {:.4} p50 {:.4} p98 {:.4}   var min {:.2e} p50 {:.2e} max {:.2e}",
            label.name(),
            quantile(&means, 0.02),
            quantile(&means, 0.5),
            quantile(&means, 0.98),
            vars[0],
            quantile(&vars, 0.5),
            vars[vars.len() - 1]
        );
        moments.push((label, means, vars));
    }

    let nondiag_var_max = moments.iter().filter(|m| m.0 == ClassLabel::Nondiagnostic).map(|m| m.2[m.2.len() - 1]).fold(0.0, f64::max);
    let diag_var_min = moments.iter().filter(|m| m.0 != ClassLabel::Nondiagnostic).map(|m| m.2[0]).fold(f64::INFINITY, f64::min);
    let tumor_low = moments.iter().filter(|m| m.0.is_tumor()).map(|m| quantile(&m.1, 0.02)).fold(f64::INFINITY, f64::min);
    let normal_high = moments
        .iter()
        .filter(|m| !m.0.is_tumor() && m.0 != ClassLabel::Nondiagnostic)
        .map(|m| quantile(&m.1, 0.98))
        .fold(0.0, f64::max);
    // Geometric midpoint: the variances span orders of magnitude.
    let var_threshold = (nondiag_var_max * diag_var_min).sqrt();
    let mean_threshold = (tumor_low + normal_high) / 2.0;
    println!("nondiagnostic var max {nondiag_var_max:.2e}, diagnostic var min {diag_var_min:.2e}");
    println!("tumor mean p02 min {tumor_low:.4}, nontumor mean p98 max {normal_high:.4}");
    println!("suggested var_threshold {var_threshold:.2e}, mean_threshold {mean_threshold:.4}");
}
