use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};

/// Norms below this are rejected by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-8;

/// Unit-norm representation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps a vector that is already unit-norm (checked to 1e-6).
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > 1e-6 {
            return Err(SrhError::Contract(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(SrhError::DegenerateNorm { norm: n, eps: NORM_EPS });
    }
    Ok(Embedding(v.iter().map(|x| x / n).collect()))
}

/// Cosine similarity of unit vectors, i.e. their dot product.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.into_iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let e = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((e[0] - 0.6).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
        let u = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(&*u, &[0.0, 1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(SrhError::DegenerateNorm { .. })));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[0.6, 0.8], &[0.6, 0.8]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_sim(&[0.6, 0.8], &[0.8, 0.6]) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1000.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_self_is_one(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4)) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let (a, b) = (l2_normalize(&a).unwrap(), l2_normalize(&b).unwrap());
            prop_assert!((cosine_sim(&a, &b) - cosine_sim(&b, &a)).abs() < 1e-9);
            prop_assert!((cosine_sim(&a, &a) - 1.0).abs() < 1e-9);
            prop_assert!((norm(&a) - 1.0).abs() < 1e-6);
            let s = cosine_sim(&a, &b);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
            if (s - 1.0).abs() < 1e-12 {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }
}
