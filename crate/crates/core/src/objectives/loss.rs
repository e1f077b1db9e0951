use crate::error::{Result, SrhError};
use crate::io::ClassLabel;
use crate::nn::{cosine_sim, log_sum_exp, softmax};

/// Loss value with its gradient with respect to the rows it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(SrhError::Contract(format!("temperature must be positive, got {tau}")))
    }
}

/// Mean over positives `p` of `−log exp(z·p/τ) / Σ_{n∈denominator} exp(z·n/τ)`.
/// The denominator is expected to contain the positives.
pub fn contrastive_loss(z: &[f64], positives: &[&[f64]], denominator: &[&[f64]], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if positives.is_empty() {
        return Err(SrhError::Contract("contrastive loss needs at least one positive".into()));
    }
    if denominator.is_empty() {
        return Err(SrhError::Contract("empty denominator set".into()));
    }
    let lse = log_sum_exp(denominator.iter().map(|n| cosine_sim(z, n) / tau));
    let sum: f64 = positives.iter().map(|p| lse - cosine_sim(z, p) / tau).sum();
    Ok(sum / positives.len() as f64)
}

/// Batch form over row-major unit embeddings `z` (n×d): anchor `i` uses
/// `positives[i]` and every other row as its denominator. Returns the mean
/// over anchors and its gradient with respect to `z`.
pub fn multi_positive_loss(z: &[f64], d: usize, positives: &[Vec<usize>], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    if d == 0 || z.len() % d != 0 {
        return Err(SrhError::Shape(format!("{} values are not rows of width {d}", z.len())));
    }
    let n = z.len() / d;
    if positives.len() != n {
        return Err(SrhError::Shape(format!("{} positive sets for {n} anchors", positives.len())));
    }
    if n < 2 {
        return Err(SrhError::Contract("contrastive batch needs at least two rows".into()));
    }
    let row = |i: usize| &z[i * d..(i + 1) * d];
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_sim(row(i), row(j)) / tau;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    // g[i][j] = dL/d(z_i·z_j) as seen from anchor i.
    let mut g = vec![0.0; n * n];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let pos = &positives[i];
        if pos.is_empty() {
            return Err(SrhError::Contract(format!("anchor {i} has no positive")));
        }
        if pos.iter().any(|&p| p == i || p >= n) {
            return Err(SrhError::Contract(format!("anchor {i} has an invalid positive index")));
        }
        let logits: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sim[i * n + j]).collect();
        let lse = log_sum_exp(logits.iter().copied());
        let k = pos.len() as f64;
        loss += pos.iter().map(|&p| lse - sim[i * n + p]).sum::<f64>() / k;
        for j in (0..n).filter(|&j| j != i) {
            g[i * n + j] += (sim[i * n + j] - lse).exp() * inv_n / tau;
        }
        for &p in pos {
            g[i * n + p] -= inv_n / (k * tau);
        }
    }
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            let c = g[i * n + j] + g[j * n + i];
            if c != 0.0 {
                let (zj, gi) = (row(j), &mut grad[i * d..(i + 1) * d]);
                for (a, &b) in gi.iter_mut().zip(zj) {
                    *a += c * b;
                }
            }
        }
    }
    Ok(LossGrad { loss: loss * inv_n, grad })
}

/// Self-supervised loss over 2N views stored as sibling pairs `(2i, 2i+1)`.
pub fn simclr_loss(z: &[f64], d: usize, tau: f64) -> Result<LossGrad> {
    let n = if d == 0 { 0 } else { z.len() / d };
    if n < 4 || n % 2 != 0 {
        return Err(SrhError::Contract(format!("SimCLR needs an even number ≥ 4 of views, got {n}")));
    }
    let positives: Vec<Vec<usize>> = (0..n).map(|i| vec![i ^ 1]).collect();
    multi_positive_loss(z, d, &positives, tau)
}

/// Supervised loss: positives of an anchor are all other rows with its label.
pub fn supcon_loss(z: &[f64], d: usize, labels: &[ClassLabel], tau: f64) -> Result<LossGrad> {
    let positives: Vec<Vec<usize>> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (0..labels.len()).filter(|&j| j != i && labels[j] == l).collect())
        .collect();
    if let Some(i) = positives.iter().position(Vec::is_empty) {
        return Err(SrhError::Contract(format!(
            "class {} has a single member in the batch (anchor {i}); the sampler must emit at least two",
            labels[i]
        )));
    }
    multi_positive_loss(z, d, &positives, tau)
}

/// `−ln p[label]` with `p` clipped below at 1e-12.
pub fn cross_entropy_loss(p: &[f64], label: usize) -> Result<f64> {
    let v = p
        .get(label)
        .ok_or_else(|| SrhError::Label(format!("label index {label} outside {} classes", p.len())))?;
    Ok(-v.max(1e-12).ln())
}

/// Mean cross-entropy of softmax(logits) with gradient with respect to the logits.
pub fn cross_entropy_with_logits(logits: &[f64], k: usize, labels: &[usize]) -> Result<LossGrad> {
    if k == 0 || logits.len() != labels.len() * k {
        return Err(SrhError::Shape(format!("{} logits for {} labels × {k} classes", logits.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(SrhError::Contract("cross-entropy over an empty batch".into()));
    }
    let inv_n = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let p = softmax(row);
        loss += cross_entropy_loss(&p, y)?;
        grad.extend(p.iter().enumerate().map(|(c, &pc)| (pc - if c == y { 1.0 } else { 0.0 }) * inv_n));
    }
    Ok(LossGrad { loss: loss * inv_n, grad })
}
