//! Training objectives: cross-entropy, self-supervised and supervised
//! contrastive, all selectable by name.

mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    contrastive_loss, cross_entropy_loss, cross_entropy_with_logits, multi_positive_loss, simclr_loss, supcon_loss,
    LossGrad,
};

use crate::error::{Result, SrhError};
use crate::io::{mix_seed, ClassLabel};
use crate::preprocess::{augment, augment_pair, AugmentationSpec, Patch};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveParams {
    pub temperature: f64,
    pub augmentation: AugmentationSpec,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self { temperature: 0.07, augmentation: AugmentationSpec::default() }
    }
}

/// What the network produced for one batch of views.
pub struct HeadOutputs<'a> {
    /// Unit projections, row-major with `projection_dim` columns.
    pub projections: &'a [f64],
    pub projection_dim: usize,
    /// Probe logits when the objective trains the probe jointly.
    pub logits: Option<&'a [f64]>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub loss: f64,
    pub d_projections: Option<Vec<f64>>,
    pub d_logits: Option<Vec<f64>>,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the linear probe is optimized together with the extractor.
    fn trains_probe(&self) -> bool {
        false
    }

    /// Whether the loss reads the normalized projections.
    fn uses_projections(&self) -> bool {
        true
    }

    /// Whether batches must hold at least two members of each class present.
    fn class_balanced(&self) -> bool {
        false
    }

    fn default_batch_size(&self) -> usize;

    /// Turns a batch of patches into the views fed through the network.
    fn prepare_views(&self, batch: &[Patch], seed: u64) -> Vec<Patch>;

    /// Loss over the views produced by `prepare_views`; `labels` are the
    /// view labels in the same order.
    fn loss(&self, out: &HeadOutputs, labels: &[ClassLabel]) -> Result<ObjectiveGrad>;
}

fn single_views(batch: &[Patch], spec: &AugmentationSpec, seed: u64) -> Vec<Patch> {
    batch
        .iter()
        .enumerate()
        .map(|(i, p)| augment(p, spec, &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64))))
        .collect()
}

pub struct CrossEntropy {
    pub augmentation: AugmentationSpec,
}

impl Objective for CrossEntropy {
    fn name(&self) -> &'static str {
        "ce"
    }

    fn trains_probe(&self) -> bool {
        true
    }

    fn uses_projections(&self) -> bool {
        false
    }

    fn default_batch_size(&self) -> usize {
        64
    }

    fn prepare_views(&self, batch: &[Patch], seed: u64) -> Vec<Patch> {
        single_views(batch, &self.augmentation, seed)
    }

    fn loss(&self, out: &HeadOutputs, labels: &[ClassLabel]) -> Result<ObjectiveGrad> {
        let logits = out
            .logits
            .ok_or_else(|| SrhError::Contract("cross-entropy objective needs probe logits".into()))?;
        let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let r = cross_entropy_with_logits(logits, out.num_classes, &idx)?;
        Ok(ObjectiveGrad { loss: r.loss, d_projections: None, d_logits: Some(r.grad) })
    }
}

pub struct SimClr {
    pub temperature: f64,
    pub augmentation: AugmentationSpec,
}

impl Objective for SimClr {
    fn name(&self) -> &'static str {
        "simclr"
    }

    fn default_batch_size(&self) -> usize {
        176
    }

    /// Two views per patch, siblings adjacent.
    fn prepare_views(&self, batch: &[Patch], seed: u64) -> Vec<Patch> {
        batch
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let (a, b) = augment_pair(p, &self.augmentation, mix_seed(seed, i as u64));
                [a, b]
            })
            .collect()
    }

    fn loss(&self, out: &HeadOutputs, _labels: &[ClassLabel]) -> Result<ObjectiveGrad> {
        let r = simclr_loss(out.projections, out.projection_dim, self.temperature)?;
        Ok(ObjectiveGrad { loss: r.loss, d_projections: Some(r.grad), d_logits: None })
    }
}

pub struct SupCon {
    pub temperature: f64,
    pub augmentation: AugmentationSpec,
}

impl Objective for SupCon {
    fn name(&self) -> &'static str {
        "supcon"
    }

    fn class_balanced(&self) -> bool {
        true
    }

    fn default_batch_size(&self) -> usize {
        176
    }

    fn prepare_views(&self, batch: &[Patch], seed: u64) -> Vec<Patch> {
        single_views(batch, &self.augmentation, seed)
    }

    fn loss(&self, out: &HeadOutputs, labels: &[ClassLabel]) -> Result<ObjectiveGrad> {
        let r = supcon_loss(out.projections, out.projection_dim, labels, self.temperature)?;
        Ok(ObjectiveGrad { loss: r.loss, d_projections: Some(r.grad), d_logits: None })
    }
}

pub type ObjectiveRegistry = Registry<dyn Objective, ObjectiveParams>;

impl ObjectiveRegistry {
    /// Registry holding `ce`, `simclr` and `supcon`.
    pub fn builtin() -> Self {
        let mut r = Registry::empty("objective");
        r.register("ce", |p: &ObjectiveParams| {
            Ok(Box::new(CrossEntropy { augmentation: p.augmentation.clone() }) as Box<dyn Objective>)
        });
        r.register("simclr", |p: &ObjectiveParams| {
            Ok(Box::new(SimClr { temperature: p.temperature, augmentation: p.augmentation.clone() }) as Box<dyn Objective>)
        });
        r.register("supcon", |p: &ObjectiveParams| {
            Ok(Box::new(SupCon { temperature: p.temperature, augmentation: p.augmentation.clone() }) as Box<dyn Objective>)
        });
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(label: ClassLabel, v: f32) -> Patch {
        Patch {
            side: 2,
            pixels: (0..12).map(|i| v + i as f32).collect(),
            slide_id: "s".into(),
            patient_id: "p".into(),
            offset: (0, 0),
            label,
        }
    }

    #[test]
    fn registry_builds_every_objective() {
        let reg = ObjectiveRegistry::builtin();
        assert_eq!(reg.names(), vec!["ce", "simclr", "supcon"]);
        for name in reg.names() {
            assert_eq!(reg.create(&name, &ObjectiveParams::default()).unwrap().name(), name);
        }
        assert!(reg.create("triplet", &ObjectiveParams::default()).is_err());
    }

    #[test]
    fn simclr_views_are_adjacent_pairs() {
        let o = SimClr { temperature: 0.1, augmentation: AugmentationSpec::identity() };
        let batch = [patch(ClassLabel::Lymphoma, 0.0), patch(ClassLabel::Meningioma, 5.0)];
        let v = o.prepare_views(&batch, 3);
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], batch[0]);
        assert_eq!(v[1], batch[0]);
        assert_eq!(v[3], batch[1]);
    }

    #[test]
    fn ce_requires_logits() {
        let o = CrossEntropy { augmentation: AugmentationSpec::identity() };
        let out = HeadOutputs { projections: &[1.0, 0.0], projection_dim: 2, logits: None, num_classes: 8 };
        assert!(o.loss(&out, &[ClassLabel::Lymphoma]).is_err());
        let logits = [0.0; 8];
        let out = HeadOutputs { logits: Some(&logits), ..out };
        let g = o.loss(&out, &[ClassLabel::Lymphoma]).unwrap();
        assert!((g.loss - 8.0f64.ln()).abs() < 1e-12);
    }
}
