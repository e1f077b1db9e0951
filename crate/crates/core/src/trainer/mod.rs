//! Optimization of the feature extractor and the linear probe.

mod checkpoint;
mod data;
mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use data::{balanced_batches, batch_tensor, shuffled_batches, PatchDataset};
pub use optim::{adam_step, sgd_step, Adam, AdamConfig, AdamMoments, Optimizer, Sgd, SgdConfig};

use crate::error::{Result, SrhError};
use crate::io::{mix_seed, NUM_CLASSES};
use crate::nn::{FeatureExtractor, FeatureExtractorConfig, ForwardPass, LinearProbe, ParamSet, Scalar};
use crate::objectives::{cross_entropy_with_logits, HeadOutputs, ObjectiveParams, ObjectiveRegistry};
use crate::preprocess::{ChannelStats, PatchConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: String,
    /// Defaults to the objective's own batch size when absent.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub sgd: SgdConfig,
    #[serde(flatten)]
    pub objective_params: ObjectiveParams,
    /// Defaults to what the objective requires when absent.
    pub class_balanced: Option<bool>,
    /// Global L2 norm cap on each step's gradient (extractor and probe together).
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: "supcon".into(),
            batch_size: None,
            epochs: 20,
            sgd: SgdConfig::default(),
            objective_params: ObjectiveParams::default(),
            class_balanced: None,
            max_grad_norm: Some(5.0),
            seed: 2022,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub probe_epoch_losses: Vec<f64>,
}

impl TrainHistory {
    /// Mean loss over the first and the last `fraction` of steps.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.step_losses.len();
        let k = ((n as f64 * fraction).ceil() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.step_losses[..k]), mean(&self.step_losses[n - k..])))
    }
}

fn to_f64<F: Scalar>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Trains the extractor (and, for objectives that ask for it, the probe
/// jointly) with momentum SGD. Channel statistics come from `dataset`,
/// which must be the training split.
pub fn train_extractor(
    dataset: &PatchDataset,
    cfg: &TrainConfig,
    net_cfg: &FeatureExtractorConfig,
    patch_cfg: &PatchConfig,
    objectives: &ObjectiveRegistry,
) -> Result<Checkpoint> {
    if dataset.is_empty() {
        return Err(SrhError::Contract("training dataset is empty".into()));
    }
    let objective = objectives.create(&cfg.objective, &cfg.objective_params)?;
    let samples = dataset.training_patches();
    let targets = dataset.targets();
    let distinct: std::collections::BTreeSet<_> = targets.iter().collect();
    if objective.name() != "simclr" && distinct.len() < 2 {
        return Err(SrhError::Contract(format!("objective {} needs at least two classes", objective.name())));
    }
    let stats = ChannelStats::estimate(&dataset.patches)?;
    let mut net = FeatureExtractor::<f32>::new(net_cfg.clone(), cfg.seed)?;
    let mut probe = objective
        .trains_probe()
        .then(|| LinearProbe::<f32>::new(net_cfg.feature_dim, NUM_CLASSES, mix_seed(cfg.seed, 1)));
    let mut net_opt = Sgd::new(cfg.sgd, &net.params);
    let mut probe_opt = probe.as_ref().map(|p| Sgd::new(cfg.sgd, &p.params));
    let batch_size = cfg.batch_size.unwrap_or_else(|| objective.default_batch_size());
    let balanced = cfg.class_balanced.unwrap_or_else(|| objective.class_balanced());
    let mut history = TrainHistory::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1000 + epoch as u64));
        let batches = if balanced {
            balanced_batches(&targets, batch_size, &mut rng)?
        } else {
            shuffled_batches(samples.len(), batch_size, &mut rng)
        };
        let mut epoch_loss = 0.0;
        for idx in &batches {
            let batch: Vec<_> = idx.iter().map(|&i| samples[i].clone()).collect();
            let views = objective.prepare_views(&batch, mix_seed(cfg.seed ^ 0x5eed, step));
            let labels: Vec<_> = views.iter().map(|v| v.label).collect();
            let input = batch_tensor(&views, &stats)?;
            let mut pass = ForwardPass::new(&net);
            if !objective.uses_projections() {
                pass = pass.without_projections();
            }
            let out = pass.forward(&input)?;
            let projections = to_f64(&out.projections);
            let logits = probe.as_ref().map(|p| p.logits(&out.features)).transpose()?.map(|l| to_f64(&l));
            let head = HeadOutputs {
                projections: &projections,
                projection_dim: net_cfg.projection_dim,
                logits: logits.as_deref(),
                num_classes: NUM_CLASSES,
            };
            let g = objective.loss(&head, &labels)?;
            if !g.loss.is_finite() {
                return Err(SrhError::Contract(format!("non-finite loss at step {step}")));
            }
            let mut d_features = None;
            let mut probe_grads = None;
            if let (Some(p), Some(dl)) = (probe.as_ref(), g.d_logits.as_ref()) {
                let (pg, df) = p.backward(&out.features, &to_f32(dl))?;
                probe_grads = Some(pg);
                d_features = Some(df);
            }
            let d_proj = g.d_projections.as_deref().map(to_f32);
            let mut grads = pass.backward(d_features.as_deref(), d_proj.as_deref())?;
            drop(pass);
            if let Some(cap) = cfg.max_grad_norm {
                let sq = |p: &ParamSet<f32>| p.iter_scalars().map(|v| (v as f64).powi(2)).sum::<f64>();
                let norm = (sq(&grads.params) + probe_grads.as_ref().map_or(0.0, sq)).sqrt();
                if norm > cap {
                    let s = (cap / norm) as f32;
                    grads.params.scale(s);
                    if let Some(pg) = probe_grads.as_mut() {
                        pg.scale(s);
                    }
                }
            }
            net_opt.step(&mut net.params, &grads.params)?;
            if let (Some(p), Some(opt), Some(pg)) = (probe.as_mut(), probe_opt.as_mut(), probe_grads) {
                opt.step(&mut p.params, &pg)?;
            }
            history.step_losses.push(g.loss);
            epoch_loss += g.loss;
            step += 1;
        }
        let mean = epoch_loss / batches.len().max(1) as f64;
        log::info!("{} epoch {}/{}: loss {mean:.4}", objective.name(), epoch + 1, cfg.epochs);
        history.epoch_losses.push(mean);
    }
    let meta = CheckpointMeta {
        objective: objective.name().to_string(),
        extractor: net_cfg.clone(),
        patch: *patch_cfg,
        stats,
        train_patients: dataset.patients(),
        train: cfg.clone(),
        history,
        params: Vec::new(),
        probe_params: None,
    };
    Checkpoint::new(meta, net, probe)
}

/// Fits a softmax-linear classifier on fixed features with Adam.
/// Returns the probe and its mean loss per epoch.
pub fn fit_probe(
    features: &[f32],
    labels: &[usize],
    feature_dim: usize,
    num_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(LinearProbe<f32>, Vec<f64>)> {
    if labels.is_empty() || features.len() != labels.len() * feature_dim {
        return Err(SrhError::Shape(format!(
            "{} feature values for {} labels of dimension {feature_dim}",
            features.len(),
            labels.len()
        )));
    }
    let mut probe = LinearProbe::<f32>::new(feature_dim, num_classes, seed);
    let mut opt = Adam::new(cfg.adam, &probe.params);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64));
        let batches = shuffled_batches(labels.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let x: Vec<f32> = idx.iter().flat_map(|&i| features[i * feature_dim..(i + 1) * feature_dim].iter().copied()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = to_f64(&probe.logits(&x)?);
            let g = cross_entropy_with_logits(&logits, num_classes, &y)?;
            let (pg, _) = probe.backward(&x, &to_f32(&g.grad))?;
            opt.step(&mut probe.params, &pg)?;
            total += g.loss;
        }
        losses.push(total / batches.len().max(1) as f64);
    }
    Ok((probe, losses))
}

/// Trains a fresh probe on frozen extractor features of `dataset`.
pub fn train_linear_probe(ckpt: &Checkpoint, dataset: &PatchDataset, cfg: &ProbeConfig) -> Result<Checkpoint> {
    if dataset.is_empty() {
        return Err(SrhError::Contract("probe dataset is empty".into()));
    }
    let refs: Vec<_> = dataset.patches.iter().collect();
    let features = ckpt.features(&refs)?;
    let labels: Vec<usize> = dataset.targets().iter().map(|l| l.index()).collect();
    let d = ckpt.extractor.config.feature_dim;
    let (probe, losses) = fit_probe(&features, &labels, d, NUM_CLASSES, cfg, mix_seed(ckpt.meta.train.seed, 2))?;
    log::info!("probe final epoch loss {:.4}", losses.last().copied().unwrap_or(f64::NAN));
    let mut history = ckpt.meta.history.clone();
    history.probe_epoch_losses = losses;
    let mut out = ckpt.with_probe(probe, history)?;
    out.meta.train.probe = cfg.clone();
    Ok(out)
}
