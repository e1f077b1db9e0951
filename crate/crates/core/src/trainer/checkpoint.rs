//! `SRHCKPT1` files: magic, `u64` LE length of a JSON metadata blob, the
//! blob, then every parameter tensor as LE `f32` in declaration order
//! (extractor first, then the probe when present).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainHistory};
use crate::error::{Result, SrhError};
use crate::io::NUM_CLASSES;
use crate::nn::{softmax, FeatureExtractor, FeatureExtractorConfig, LinearProbe, ParamSet, ParamSpec, Scalar};
use crate::preprocess::{ChannelStats, Patch, PatchConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRHCKPT1";

/// Patches per inference batch.
const INFER_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub objective: String,
    pub extractor: FeatureExtractorConfig,
    pub patch: PatchConfig,
    pub stats: ChannelStats,
    pub train_patients: BTreeSet<String>,
    pub train: TrainConfig,
    pub history: TrainHistory,
    pub params: Vec<ParamSpec>,
    pub probe_params: Option<Vec<ParamSpec>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub extractor: FeatureExtractor<f32>,
    pub probe: Option<LinearProbe<f32>>,
}

fn push_params(out: &mut Vec<u8>, p: &ParamSet<f32>) {
    for v in p.iter_scalars() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_params(bytes: &mut &[u8], specs: &[ParamSpec]) -> Result<ParamSet<f32>> {
    let mut set = ParamSet::<f32>::zeros(specs);
    for t in &mut set.tensors {
        let need = 4 * t.data.len();
        if bytes.len() < need {
            return Err(SrhError::Size("checkpoint parameter payload is truncated".into()));
        }
        let (head, rest) = bytes.split_at(need);
        for (v, c) in t.data.iter_mut().zip(head.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
        *bytes = rest;
    }
    Ok(set)
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, extractor: FeatureExtractor<f32>, probe: Option<LinearProbe<f32>>) -> Result<Self> {
        let mut ck = Self { meta, extractor, probe };
        ck.sync_meta();
        ck.validate()?;
        Ok(ck)
    }

    fn sync_meta(&mut self) {
        self.meta.extractor = self.extractor.config.clone();
        self.meta.params = self.extractor.params.specs();
        self.meta.probe_params = self.probe.as_ref().map(|p| p.params.specs());
    }

    fn validate(&self) -> Result<()> {
        if self.meta.extractor.input_side != self.meta.patch.input_side as usize {
            return Err(SrhError::Shape(format!(
                "extractor input side {} differs from patch input side {}",
                self.meta.extractor.input_side, self.meta.patch.input_side
            )));
        }
        if let Some(p) = &self.probe {
            if p.feature_dim != self.extractor.config.feature_dim {
                return Err(SrhError::Shape("probe input does not match extractor features".into()));
            }
        }
        Ok(())
    }

    pub fn with_probe(&self, probe: LinearProbe<f32>, history: TrainHistory) -> Result<Self> {
        let mut meta = self.meta.clone();
        meta.history = history;
        Self::new(meta, self.extractor.clone(), Some(probe))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.extractor.params.num_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_params(&mut out, &self.extractor.params);
        if let Some(p) = &self.probe {
            push_params(&mut out, &p.params);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(SrhError::Format("missing SRHCKPT1 header".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let rest = &bytes[16..];
        if rest.len() < len {
            return Err(SrhError::Size("checkpoint metadata is truncated".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&rest[..len])?;
        let mut payload = &rest[len..];
        let extractor = FeatureExtractor::from_params(meta.extractor.clone(), take_params(&mut payload, &meta.params)?)?;
        let probe = match &meta.probe_params {
            Some(specs) => {
                let params = take_params(&mut payload, specs)?;
                let shape = &specs[0].shape;
                Some(LinearProbe::from_params(shape[1], shape[0], params)?)
            }
            None => None,
        };
        if !payload.is_empty() {
            return Err(SrhError::Size(format!("{} trailing bytes after checkpoint parameters", payload.len())));
        }
        let ck = Self { meta, extractor, probe };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| SrhError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| SrhError::io(path, e))?)
    }

    /// Pre-projection features (N×D) of network-resolution patches.
    pub fn features(&self, patches: &[&Patch]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(patches.len() * self.extractor.config.feature_dim);
        for chunk in patches.chunks(INFER_BATCH) {
            let batch = super::batch_tensor(chunk.iter().copied(), &self.meta.stats)?;
            out.extend(self.extractor.features(&batch)?);
        }
        Ok(out)
    }

    /// Class distributions for network-resolution patches.
    pub fn predict(&self, patches: &[&Patch]) -> Result<Vec<Vec<f64>>> {
        let probe = self
            .probe
            .as_ref()
            .ok_or_else(|| SrhError::State("checkpoint has no classification probe; run the probe stage".into()))?;
        let feats = self.features(patches)?;
        let logits = probe.logits(&feats)?;
        Ok(logits
            .chunks_exact(probe.num_classes)
            .map(|row| softmax(&row.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()))
            .collect())
    }

    pub fn num_classes(&self) -> usize {
        self.probe.as_ref().map_or(NUM_CLASSES, |p| p.num_classes)
    }
}
