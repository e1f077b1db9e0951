use super::extractor::init_params;
use super::params::{ParamSet, ParamSpec};
use super::Scalar;
use crate::error::{Result, SrhError};

/// Linear classification layer over frozen features: logits = W f + b.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<F> {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub params: ParamSet<F>,
}

impl<F: Scalar> LinearProbe<F> {
    pub fn param_specs(feature_dim: usize, num_classes: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec { name: "probe.weight".into(), shape: vec![num_classes, feature_dim] },
            ParamSpec { name: "probe.bias".into(), shape: vec![num_classes] },
        ]
    }

    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            feature_dim,
            num_classes,
            params: init_params(&Self::param_specs(feature_dim, num_classes), seed),
        }
    }

    pub fn from_params(feature_dim: usize, num_classes: usize, params: ParamSet<F>) -> Result<Self> {
        if params.specs() != Self::param_specs(feature_dim, num_classes) {
            return Err(SrhError::Shape("probe parameters do not match dimensions".into()));
        }
        Ok(Self { feature_dim, num_classes, params })
    }

    pub fn cast<G: Scalar>(&self) -> LinearProbe<G> {
        LinearProbe { feature_dim: self.feature_dim, num_classes: self.num_classes, params: self.params.cast() }
    }

    fn check(&self, features: &[F]) -> Result<usize> {
        if features.len() % self.feature_dim != 0 {
            return Err(SrhError::Shape(format!(
                "{} feature values are not a multiple of probe input dim {}",
                features.len(),
                self.feature_dim
            )));
        }
        Ok(features.len() / self.feature_dim)
    }

    /// Logits, N×K row-major.
    pub fn logits(&self, features: &[F]) -> Result<Vec<F>> {
        let n = self.check(features)?;
        let (d, k) = (self.feature_dim, self.num_classes);
        let mut out = vec![F::zero(); n * k];
        F::gemm(n, d, k, F::one(), features, d as isize, 1, &self.params.tensors[0].data, 1, d as isize, F::zero(), &mut out, k as isize, 1);
        for row in out.chunks_exact_mut(k) {
            for (v, &b) in row.iter_mut().zip(&self.params.tensors[1].data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Gradients of the probe parameters and of its input features.
    pub fn backward(&self, features: &[F], d_logits: &[F]) -> Result<(ParamSet<F>, Vec<F>)> {
        let n = self.check(features)?;
        let (d, k) = (self.feature_dim, self.num_classes);
        if d_logits.len() != n * k {
            return Err(SrhError::Shape("logit gradient does not match batch".into()));
        }
        let mut g = self.params.zeros_like();
        F::gemm(k, n, d, F::one(), d_logits, 1, k as isize, features, d as isize, 1, F::zero(), &mut g.tensors[0].data, d as isize, 1);
        for row in d_logits.chunks_exact(k) {
            for (b, &v) in g.tensors[1].data.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut d_features = vec![F::zero(); n * d];
        F::gemm(n, k, d, F::one(), d_logits, k as isize, 1, &self.params.tensors[0].data, d as isize, 1, F::zero(), &mut d_features, d as isize, 1);
        Ok((g, d_features))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logits_match_hand_computation() {
        let mut p = LinearProbe::<f64>::new(2, 3, 0);
        p.params.tensors[0].data = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        p.params.tensors[1].data = vec![0.5, -0.5, 0.0];
        let l = p.logits(&[2.0, 3.0]).unwrap();
        assert_eq!(l, vec![2.5, 2.5, 5.0]);
        let (g, df) = p.backward(&[2.0, 3.0], &[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(g.tensors[0].data, vec![2.0, 3.0, 0.0, 0.0, -2.0, -3.0]);
        assert_eq!(g.tensors[1].data, vec![1.0, 0.0, -1.0]);
        assert_eq!(df, vec![0.0, -1.0]);
        assert!(p.logits(&[1.0, 2.0, 3.0]).is_err());
    }
}
