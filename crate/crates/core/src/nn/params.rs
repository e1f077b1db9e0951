use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Result, SrhError};

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub spec: ParamSpec,
    pub data: Vec<F>,
}

/// Ordered collection of named tensors. Gradients and optimizer state use
/// the same type with the same layout as the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub tensors: Vec<Param<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            tensors: specs
                .iter()
                .map(|s| Param {
                    spec: s.clone(),
                    data: vec![F::zero(); s.len()],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.specs())
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.tensors.iter().map(|t| t.spec.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.tensors.iter().find(|t| t.spec.name == name)
    }

    pub fn check_same_layout<G>(&self, other: &ParamSet<G>) -> Result<()> {
        let same = self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.spec == b.spec && a.data.len() == b.data.len());
        if same {
            Ok(())
        } else {
            Err(SrhError::Shape("parameter sets have different layouts".into()))
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ParamSet<F>) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Param {
                    spec: t.spec.clone(),
                    data: t.data.iter().map(|&v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    pub fn iter_scalars(&self) -> impl Iterator<Item = F> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn max_abs(&self) -> F {
        self.iter_scalars().fold(F::zero(), |m, v| m.max(v.abs()))
    }
}
