use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, SrhError};
use crate::io::{ClassLabel, SlideSource};
use crate::nn::Tensor4;
use crate::preprocess::{prepare_patches, to_three_channel, ChannelStats, FilterDecision, Patch, PatchConfig, PatchOrigin};

/// Network-resolution, unstandardized patches with their filter decisions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<Patch>,
    pub decisions: Vec<FilterDecision>,
}

impl PatchDataset {
    /// Tiles every slide of `source` whose patient is in `patients` (all
    /// slides when `None`), in manifest order.
    pub fn from_source(source: &dyn SlideSource, patients: Option<&BTreeSet<String>>, cfg: &PatchConfig) -> Result<Self> {
        let entries: Vec<_> = source
            .entries()
            .iter()
            .filter(|e| patients.is_none_or(|p| p.contains(&e.patient_id)))
            .collect();
        let per_slide: Vec<_> = entries
            .par_iter()
            .map(|e| {
                let raw = source.load(e)?;
                raw.check_admissible(cfg.patch_side)?;
                let origin = PatchOrigin { slide_id: e.slide_id.clone(), patient_id: e.patient_id.clone(), label: e.label };
                prepare_patches(&to_three_channel(&raw), &origin, cfg, cfg.stride)
            })
            .collect::<Result<_>>()?;
        let mut out = PatchDataset::default();
        for prepared in per_slide.into_iter().flatten() {
            out.patches.push(prepared.patch);
            out.decisions.push(prepared.decision);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Training target: the slide label, or nondiagnostic when the filter says so.
    pub fn target(&self, i: usize) -> ClassLabel {
        match self.decisions[i] {
            FilterDecision::Nondiagnostic => ClassLabel::Nondiagnostic,
            _ => self.patches[i].label,
        }
    }

    pub fn targets(&self) -> Vec<ClassLabel> {
        (0..self.len()).map(|i| self.target(i)).collect()
    }

    pub fn patients(&self) -> BTreeSet<String> {
        self.patches.iter().map(|p| p.patient_id.clone()).collect()
    }

    /// Training samples with their targets written into the patch labels.
    pub fn training_patches(&self) -> Vec<Patch> {
        self.patches
            .iter()
            .enumerate()
            .map(|(i, p)| Patch { label: self.target(i), ..p.clone() })
            .collect()
    }
}

/// Standardizes patches into a network batch.
pub fn batch_tensor<'a>(patches: impl IntoIterator<Item = &'a Patch>, stats: &ChannelStats) -> Result<Tensor4<f32>> {
    let patches: Vec<&Patch> = patches.into_iter().collect();
    let side = patches
        .first()
        .map(|p| p.side)
        .ok_or_else(|| SrhError::Contract("empty batch".into()))?;
    if patches.iter().any(|p| p.side != side) {
        return Err(SrhError::Shape("batch mixes patch sides".into()));
    }
    let per = 3 * (side * side) as usize;
    let mut data = vec![0.0f32; patches.len() * per];
    for (p, out) in patches.iter().zip(data.chunks_exact_mut(per)) {
        stats.apply_into(p, out);
    }
    Tensor4::new(patches.len(), 3, side as usize, side as usize, data)
}

/// Random partition of `0..n` into batches; a trailing batch smaller than 2 is dropped.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Batches in which every represented class has at least two members.
/// Classes are visited round-robin; each contributes `batch_size / classes`
/// samples (at least 2) drawn without replacement from a reshuffled queue.
/// Emits about `n / batch_size` batches.
pub fn balanced_batches(labels: &[ClassLabel], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(SrhError::Contract("balanced batches need batch size ≥ 2".into()));
    }
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for (l, members) in &by_class {
        if members.len() < 2 {
            log::warn!("class {l} has a single sample and is left out of balanced batches");
        }
    }
    let mut queues: Vec<(Vec<usize>, usize)> = by_class.into_values().filter(|m| m.len() >= 2).map(|m| (m, usize::MAX)).collect();
    if queues.is_empty() {
        return Err(SrhError::Contract("no class has two samples".into()));
    }
    let nc = queues.len();
    let per_class = (batch_size / nc).max(2);
    let classes_per_batch = (batch_size / per_class).clamp(1, nc);
    let used: usize = queues.iter().map(|(m, _)| m.len()).sum();
    let n_batches = used.div_ceil(per_class * classes_per_batch);
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(per_class * classes_per_batch);
        for k in 0..classes_per_batch {
            let (members, cursor) = &mut queues[(b * classes_per_batch + k) % nc];
            let take = per_class.min(members.len());
            let start = batch.len();
            while batch.len() - start < take {
                if *cursor >= members.len() {
                    members.shuffle(rng);
                    *cursor = 0;
                }
                let pick = members[*cursor];
                *cursor += 1;
                if !batch[start..].contains(&pick) {
                    batch.push(pick);
                }
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}
