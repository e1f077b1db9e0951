//! Patch embeddings and an exact tSNE projection.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};
use crate::io::{mix_seed, ClassLabel};
use crate::preprocess::Patch;
use crate::trainer::Checkpoint;

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<ClassLabel>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Which representation to embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Pre-projection extractor features (dimension D).
    #[default]
    Features,
    /// Unit-norm projection head outputs (dimension d).
    Projections,
}

pub fn extract_embeddings(ckpt: &Checkpoint, patches: &[&Patch], repr: Representation) -> Result<EmbeddingSet> {
    let labels = patches.iter().map(|p| p.label).collect();
    let (dim, values) = match repr {
        Representation::Features => {
            let f = ckpt.features(patches)?;
            (ckpt.extractor.config.feature_dim, f.into_iter().map(f64::from).collect())
        }
        Representation::Projections => {
            let mut out = Vec::with_capacity(patches.len() * ckpt.extractor.config.projection_dim);
            for chunk in patches.chunks(128) {
                let batch = crate::trainer::batch_tensor(chunk.iter().copied(), &ckpt.meta.stats)?;
                out.extend(ckpt.extractor.forward(&batch)?.projections.into_iter().map(f64::from));
            }
            (ckpt.extractor.config.projection_dim, out)
        }
    };
    Ok(EmbeddingSet { dim, values, labels })
}

/// At most `cap` indices, split as evenly as possible across labels
/// (smaller classes give their leftover share to larger ones). Sorted.
pub fn stratified_sample(labels: &[ClassLabel], cap: usize, seed: u64) -> Vec<usize> {
    if labels.len() <= cap {
        return (0..labels.len()).collect();
    }
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = by_class.into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    groups.sort_by_key(Vec::len);
    let mut left = cap;
    let mut out = Vec::with_capacity(cap);
    for (k, g) in groups.iter().enumerate() {
        let share = left / (groups.len() - k);
        let take = share.min(g.len());
        out.extend_from_slice(&g[..take]);
        left -= take;
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 2022,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// Entropy (bits) of each conditional distribution after bisection.
    pub entropies: Vec<f64>,
    pub betas: Vec<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
}

const ENTROPY_TOL: f64 = 1e-5;

/// Conditional affinities of one point, with `beta = 1/(2σ²)` found by
/// bisection on the entropy. Returns (row, beta, entropy in bits).
pub fn conditional_row(dists: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64, f64) {
    let target = perplexity.log2();
    let dmin = dists.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let eval = |beta: f64| {
        let mut p: Vec<f64> = dists.iter().enumerate().map(|(j, &d)| if j == i { 0.0 } else { (-beta * (d - dmin)).exp() }).collect();
        let s: f64 = p.iter().sum();
        let mean_d: f64 = p.iter().zip(dists).map(|(pj, d)| pj * (d - dmin)).sum::<f64>() / s;
        p.iter_mut().for_each(|v| *v /= s);
        // H = ln s + β·E[d − dmin], converted to bits.
        let h = (s.ln() + beta * mean_d) / std::f64::consts::LN_2;
        (p, h)
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0 / dists.iter().copied().fold(0.0, f64::max).max(1e-300);
    let mut best = eval(beta);
    for _ in 0..500 {
        let diff = best.1 - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (lo + hi) / 2.0;
        }
        best = eval(beta);
    }
    (best.0, beta, best.1)
}

fn point_key(row: &[f64]) -> u64 {
    row.iter().fold(0x243f_6a88_85a3_08d3, |h, v| mix_seed(h, v.to_bits()))
}

fn kl(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &num)| pij * (pij / (num / q_sum).max(1e-300)).ln())
        .sum()
}

/// Student-t kernel numerators for the current layout.
fn kernel(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Exact tSNE of `n = features.len() / dim` points.
///
/// Points are processed in an order fixed by their values, and each point's
/// initial position is seeded from its values, so permuting the input only
/// permutes the output rows.
pub fn tsne(features: &[f64], dim: usize, cfg: &TsneConfig) -> Result<TsneResult> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(SrhError::Shape(format!("{} values are not rows of width {dim}", features.len())));
    }
    let n = features.len() / dim;
    if n < 10 {
        return Err(SrhError::Contract(format!("tSNE needs at least 10 points, got {n}")));
    }
    if !(cfg.perplexity > 1.0 && cfg.perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(SrhError::Contract(format!(
            "perplexity {} must lie in (1, {:.3}) for {n} points",
            cfg.perplexity,
            (n as f64 - 1.0) / 3.0
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(SrhError::Contract("tSNE input contains non-finite values".into()));
    }
    let rows: Vec<&[f64]> = features.chunks_exact(dim).collect();
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(SrhError::Degenerate("all tSNE input points are identical".into()));
    }
    let keys: Vec<u64> = rows.iter().map(|r| point_key(r)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        keys[a].cmp(&keys[b]).then_with(|| {
            rows[a].iter().zip(rows[b]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let x: Vec<&[f64]> = order.iter().map(|&i| rows[i]).collect();

    let dists: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| x[i].iter().zip(x[j]).map(|(a, b)| (a - b) * (a - b)).sum()).collect())
        .collect();
    let cond: Vec<(Vec<f64>, f64, f64)> = (0..n).into_par_iter().map(|i| conditional_row(&dists[i], i, cfg.perplexity)).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i].0[j] + cond[j].0[i]) / (2.0 * n as f64);
        }
    }

    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = order
        .iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, keys[i]));
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let num = kernel(&y);
    let kl_initial = kl(&p, &num, num.iter().sum());
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iterations { cfg.initial_momentum } else { cfg.final_momentum };
        let num = kernel(&y);
        let z: f64 = num.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let k = i * n + j;
                    let m = (exaggeration * p[k] - num[k] / z) * num[k];
                    g[0] += m * (y[i][0] - y[j][0]);
                    g[1] += m * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for a in 0..2 {
                let same = (grad[i][a] > 0.0) == (velocity[i][a] > 0.0);
                gains[i][a] = if same { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                velocity[i][a] = momentum * velocity[i][a] - cfg.learning_rate * gains[i][a] * grad[i][a];
                y[i][a] += velocity[i][a];
            }
        }
        let mean = y.iter().fold([0.0; 2], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
    }
    let num = kernel(&y);
    let kl_final = kl(&p, &num, num.iter().sum());

    let mut coords = vec![[0.0; 2]; n];
    let mut entropies = vec![0.0; n];
    let mut betas = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        coords[i] = y[pos];
        entropies[i] = cond[pos].2;
        betas[i] = cond[pos].1;
    }
    Ok(TsneResult { coords, entropies, betas, kl_initial, kl_final })
}

/// Symmetrized tSNE affinities for inspection; sums to 1.
pub fn joint_affinities(features: &[f64], dim: usize, perplexity: f64) -> Vec<f64> {
    let rows: Vec<&[f64]> = features.chunks_exact(dim).collect();
    let n = rows.len();
    let cond: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let d: Vec<f64> = rows.iter().map(|r| r.iter().zip(rows[i]).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
            conditional_row(&d, i, perplexity).0
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Mean silhouette width in the 2-D layout; points alone in their class score 0.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if coords.len() != labels.len() || coords.is_empty() {
        return Err(SrhError::Shape("silhouette needs one label per point".into()));
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(SrhError::Contract("silhouette needs at least two classes".into()));
    }
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let scores: Vec<f64> = (0..coords.len())
        .into_par_iter()
        .map(|i| {
            let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for j in 0..coords.len() {
                if i != j {
                    let e = sums.entry(labels[j]).or_insert((0.0, 0));
                    e.0 += dist(&coords[i], &coords[j]);
                    e.1 += 1;
                }
            }
            let own = match sums.get(&labels[i]) {
                Some(&(s, c)) if c > 0 => s / c as f64,
                _ => return 0.0,
            };
            let other = sums
                .iter()
                .filter(|(&l, _)| l != labels[i])
                .map(|(_, &(s, c))| s / c as f64)
                .fold(f64::INFINITY, f64::min);
            let m = own.max(other);
            if m > 0.0 { (other - own) / m } else { 0.0 }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// CSV with header `x,y,label`, rows in input order.
pub fn export_scatter(coords: &[[f64; 2]], labels: &[String]) -> Result<String> {
    if coords.len() != labels.len() {
        return Err(SrhError::Shape(format!("{} coordinates but {} labels", coords.len(), labels.len())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| SrhError::Format(e.to_string());
    w.write_record(["x", "y", "label"]).map_err(wrap)?;
    for (c, l) in coords.iter().zip(labels) {
        w.write_record([c[0].to_string(), c[1].to_string(), l.clone()]).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| SrhError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SrhError::Format(e.to_string()))
}

pub fn parse_scatter(text: &str) -> Result<(Vec<[f64; 2]>, Vec<String>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| SrhError::Format(e.to_string()))?;
    if header != vec!["x", "y", "label"] {
        return Err(SrhError::Format(format!("unexpected scatter header {header:?}")));
    }
    let (mut coords, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| SrhError::Format(e.to_string()))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| SrhError::Format(format!("bad coordinate {:?}: {e}", &rec[i])));
        coords.push([num(0)?, num(1)?]);
        labels.push(rec[2].to_string());
    }
    Ok((coords, labels))
}

pub fn write_scatter(path: impl AsRef<Path>, coords: &[[f64; 2]], labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, export_scatter(coords, labels)?).map_err(|e| SrhError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three Gaussian clusters in 16-D, centers 10 within-cluster std apart.
    pub(crate) fn clusters(per: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            let mut center = vec![0.0; 16];
            center[c] = 10.0 / std::f64::consts::SQRT_2;
            for _ in 0..per {
                x.extend(center.iter().map(|m| m + normal.sample(&mut rng)));
                labels.push(c);
            }
        }
        (x, labels)
    }

    #[test]
    fn affinities_sum_to_one_and_hit_entropy() {
        let (x, _) = clusters(10, 1);
        let p = joint_affinities(&x, 16, 5.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let rows: Vec<&[f64]> = x.chunks_exact(16).collect();
        for i in 0..rows.len() {
            let d: Vec<f64> = rows.iter().map(|r| r.iter().zip(rows[i]).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
            let (row, _, h) = conditional_row(&d, i, 5.0);
            assert!((h - 5.0f64.log2()).abs() < 1e-5);
            let direct: f64 = -row.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>();
            assert!((direct - h).abs() < 1e-8);
        }
    }

    #[test]
    fn simplex_points_get_equal_sigma() {
        let n = 12;
        let x: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| if i == j { 1.0 } else { 0.0 })).collect();
        let r = tsne(&x, n, &TsneConfig { perplexity: 3.0, iterations: 10, ..TsneConfig::default() }).unwrap();
        for b in &r.betas {
            assert!((b - r.betas[0]).abs() < 1e-12 * r.betas[0].abs().max(1.0));
        }
    }

    #[test]
    fn validation() {
        let (x, _) = clusters(4, 2);
        assert!(tsne(&x, 16, &TsneConfig { perplexity: 3.0, iterations: 5, ..TsneConfig::default() }).is_ok());
        assert!(tsne(&x[..16 * 9], 16, &TsneConfig::default()).is_err());
        assert!(tsne(&x, 16, &TsneConfig { perplexity: 30.0, ..TsneConfig::default() }).is_err());
        let same = vec![1.0; 16 * 12];
        assert!(matches!(tsne(&same, 16, &TsneConfig { perplexity: 2.0, ..TsneConfig::default() }), Err(SrhError::Degenerate(_))));
    }

    #[test]
    fn permuting_input_permutes_output() {
        let (x, _) = clusters(8, 3);
        let cfg = TsneConfig { perplexity: 5.0, iterations: 200, ..TsneConfig::default() };
        let a = tsne(&x, 16, &cfg).unwrap();
        let n = x.len() / 16;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 16..(i + 1) * 16].to_vec()).collect();
        let b = tsne(&px, 16, &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.coords[k], a.coords[i]);
        }
        assert_eq!(tsne(&x, 16, &cfg).unwrap(), a);
    }

    #[test]
    fn silhouette_examples() {
        let coords = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = silhouette(&coords, &[0, 0, 1, 1]).unwrap();
        let expect_point = 1.0 - 1.0 / ((100.0f64).sqrt() + (101.0f64).sqrt()) * 2.0;
        assert!((s - expect_point).abs() < 1e-12);
        assert!(silhouette(&coords, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn scatter_round_trip() {
        let coords = [[0.1, -2.5], [1e-7, 3.0], [123.456, 0.0]];
        let labels: Vec<String> = ["meningioma", "lymphoma", "normal_brain"].iter().map(|s| s.to_string()).collect();
        let csv = export_scatter(&coords, &labels).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap(), "x,y,label");
        let (c, l) = parse_scatter(&csv).unwrap();
        assert_eq!(l, labels);
        for (a, b) in c.iter().zip(&coords) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
        assert_eq!(export_scatter(&[], &[]).unwrap(), "x,y,label\n");
        assert!(export_scatter(&coords, &labels[..2]).is_err());
    }

    #[test]
    fn stratified_sampling_caps_and_balances() {
        use ClassLabel::*;
        let labels: Vec<ClassLabel> = std::iter::repeat_n(Lymphoma, 50).chain(std::iter::repeat_n(Meningioma, 5)).chain(std::iter::repeat_n(Schwannoma, 30)).collect();
        let s = stratified_sample(&labels, 30, 1);
        assert_eq!(s.len(), 30);
        let count = |l| s.iter().filter(|&&i| labels[i] == l).count();
        assert_eq!((count(Meningioma), count(Lymphoma) + count(Schwannoma)), (5, 25));
        assert!(count(Lymphoma).abs_diff(count(Schwannoma)) <= 1);
        assert_eq!(stratified_sample(&labels, 100, 1).len(), labels.len());
        assert_eq!(s, stratified_sample(&labels, 30, 1));
    }

    #[test]
    fn separated_clusters_embed_well() {
        let (x, labels) = clusters(30, 4);
        let r = tsne(&x, 16, &TsneConfig { perplexity: 15.0, ..TsneConfig::default() }).unwrap();
        assert!(r.kl_final < r.kl_initial);
        assert!(silhouette(&r.coords, &labels).unwrap() > 0.5);
    }
}
