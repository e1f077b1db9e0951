//! Pipeline commands behind the `srh` binary.
//!
//! Output layout under `out`:
//!
//! ```text
//! cohort/manifest.json, cohort/slides/*.srh   gen
//! split.json                                   gen
//! checkpoints/<objective>.ckpt                 train
//! checkpoints/<objective>-probe.ckpt           probe
//! eval/<objective>.json, eval/<objective>.txt  eval
//! eval/comparison.txt                          all
//! segment/<stem>_*                             segment
//! embed/<objective>.csv, embed/<objective>.json embed
//! config/<command>.json                        every command
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use srh_core::embed::{extract_embeddings, silhouette, stratified_sample, tsne, write_scatter, Representation, TsneConfig};
use srh_core::evaluate::{comparison_table, evaluate_testset, AggregatorRegistry, EvalReport};
use srh_core::io::{
    generate_synthetic_margin_slide, read_slide, split_by_patient, ClassLabel, CohortConfig, DatasetManifest, MarginSpec,
    SplitSpec, SyntheticCohort,
};
use srh_core::nn::FeatureExtractorConfig;
use srh_core::objectives::ObjectiveRegistry;
use srh_core::preprocess::PatchConfig;
use srh_core::segment::{probability_heatmap, write_segmentation};
use srh_core::trainer::{train_extractor, train_linear_probe, Checkpoint, PatchDataset, TrainConfig};

pub const OBJECTIVES: [&str; 3] = ["ce", "simclr", "supcon"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub stride: u32,
    pub alpha: f32,
    /// Slide to segment; a margin fixture is generated when absent.
    pub slide: Option<PathBuf>,
    pub fixture_tumor: ClassLabel,
    pub fixture_nontumor: ClassLabel,
    pub fixture_side: u32,
    pub fixture_tumor_fraction: f64,
    pub fixture_seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            stride: 100,
            alpha: 0.5,
            slide: None,
            fixture_tumor: ClassLabel::Meningioma,
            fixture_nontumor: ClassLabel::NormalBrain,
            fixture_side: 1500,
            fixture_tumor_fraction: 0.5,
            fixture_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub max_points: usize,
    pub representation: Representation,
    pub tsne: TsneConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { max_points: 2000, representation: Representation::Features, tsne: TsneConfig::default() }
    }
}

/// Everything a run needs. Precedence: built-in defaults, then the JSON
/// config file, then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out: PathBuf,
    /// When set, overrides the cohort, split, training and tSNE seeds.
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub cohort: CohortConfig,
    /// Manifest to train and evaluate on; defaults to `out/cohort/manifest.json`.
    pub manifest: Option<PathBuf>,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub patch: PatchConfig,
    pub extractor: FeatureExtractorConfig,
    pub train: TrainConfig,
    pub aggregator: String,
    pub segment: SegmentConfig,
    pub embed: EmbedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("srh-run"),
            seed: None,
            deterministic: false,
            cohort: CohortConfig::default(),
            manifest: None,
            test_fraction: 0.2,
            split_seed: 2022,
            patch: PatchConfig::default(),
            extractor: FeatureExtractorConfig::default(),
            train: TrainConfig::default(),
            aggregator: "soft".into(),
            segment: SegmentConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub objective: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(obj) = &o.objective {
            self.train.objective = obj.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        self.deterministic |= o.deterministic;
        if let Some(s) = self.seed {
            self.cohort.seed = s;
            self.split_seed = s;
            self.train.seed = s;
            self.embed.tsne.seed = s;
        }
        if self.cohort.patch_side != self.patch.patch_side {
            bail!("cohort patch side {} differs from preprocessing patch side {}", self.cohort.patch_side, self.patch.patch_side);
        }
        if self.patch.input_side as usize != self.extractor.input_side {
            bail!("patch input side {} differs from network input side {}", self.patch.input_side, self.extractor.input_side);
        }
        Ok(self)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("cohort").join("manifest.json"))
    }

    pub fn checkpoint_path(&self, objective: &str) -> PathBuf {
        self.out.join("checkpoints").join(format!("{objective}.ckpt"))
    }

    pub fn probe_path(&self, objective: &str) -> PathBuf {
        self.out.join("checkpoints").join(format!("{objective}-probe.ckpt"))
    }

    /// Writes this config to `out/config/<name>.json`.
    pub fn write_resolved(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join("config");
        create_dir(&dir)?;
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Saves a checkpoint and confirms it reads back byte-identical.
fn save_checked(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    create_dir(path.parent().unwrap_or(Path::new(".")))?;
    ckpt.save(path)?;
    let back = Checkpoint::load(path)?;
    if back.to_bytes()? != ckpt.to_bytes()? {
        bail!("checkpoint {} did not round-trip", path.display());
    }
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<DatasetManifest> {
    let dir = cfg.out.join("cohort");
    let cohort = SyntheticCohort::new(cfg.cohort.clone())?;
    let manifest = cohort.write_to_dir(&dir)?;
    manifest.validate_files()?;
    let split = split_by_patient(&manifest.entries, cfg.test_fraction, cfg.split_seed)?;
    write_json(&cfg.out.join("split.json"), &split)?;
    log::info!(
        "wrote {} slides of {} patients to {}",
        manifest.entries.len(),
        manifest.patients().len(),
        dir.display()
    );
    cfg.write_resolved("gen")?;
    Ok(manifest)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.manifest_path();
    if !path.exists() {
        bail!("manifest {} not found; run `srh gen` first or set `manifest`", path.display());
    }
    Ok(DatasetManifest::load(&path)?)
}

/// The split written by `gen` if present, otherwise one drawn from the manifest.
fn load_split(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<SplitSpec> {
    let path = cfg.out.join("split.json");
    if path.exists() {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    Ok(split_by_patient(&manifest.entries, cfg.test_fraction, cfg.split_seed)?)
}

fn dataset(manifest: &DatasetManifest, patients: &BTreeSet<String>, patch: &PatchConfig) -> Result<PatchDataset> {
    let ds = PatchDataset::from_source(manifest, Some(patients), patch)?;
    if ds.is_empty() {
        bail!("no patches for the selected patients");
    }
    Ok(ds)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let objective = cfg.train.objective.as_str();
    let registry = ObjectiveRegistry::builtin();
    if !registry.contains(objective) {
        registry.create(objective, &cfg.train.objective_params)?;
    }
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let ds = dataset(&manifest, &split.train_patients, &cfg.patch)?;
    log::info!("training {objective} on {} patches of {} patients", ds.len(), split.train_patients.len());
    let ckpt = train_extractor(&ds, &cfg.train, &cfg.extractor, &cfg.patch, &registry)?;
    let path = cfg.checkpoint_path(objective);
    save_checked(&ckpt, &path)?;
    cfg.write_resolved(&format!("train-{objective}"))?;
    Ok(path)
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<PathBuf> {
    let objective = cfg.train.objective.as_str();
    let path = cfg.checkpoint_path(objective);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}; run `srh train` first", path.display()))?;
    let manifest = load_manifest(cfg)?;
    let ds = dataset(&manifest, &ckpt.meta.train_patients, &cfg.patch)?;
    let probed = train_linear_probe(&ckpt, &ds, &cfg.train.probe)?;
    let out = cfg.probe_path(objective);
    save_checked(&probed, &out)?;
    cfg.write_resolved(&format!("probe-{objective}"))?;
    Ok(out)
}

/// The checkpoint that can classify: the probed one, or a jointly trained one.
pub fn classifier(cfg: &RunConfig, objective: &str) -> Result<Checkpoint> {
    let probed = cfg.probe_path(objective);
    if probed.exists() {
        return Ok(Checkpoint::load(&probed)?);
    }
    let base = cfg.checkpoint_path(objective);
    let ckpt = Checkpoint::load(&base).with_context(|| format!("loading {}; run `srh train` first", base.display()))?;
    if ckpt.probe.is_none() {
        bail!("{} has no classification layer; run `srh probe` first", base.display());
    }
    Ok(ckpt)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let objective = cfg.train.objective.as_str();
    let ckpt = classifier(cfg, objective)?;
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let aggregator = AggregatorRegistry::builtin().create(&cfg.aggregator, &())?;
    let report = evaluate_testset(&ckpt, &manifest, &split, aggregator.as_ref())?;
    let dir = cfg.out.join("eval");
    create_dir(&dir)?;
    write_json(&dir.join(format!("{objective}.json")), &report)?;
    let table = report.to_text_table(objective);
    fs::write(dir.join(format!("{objective}.txt")), &table)?;
    println!("{table}");
    cfg.write_resolved(&format!("eval-{objective}"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub slide: String,
    pub tumor_class: ClassLabel,
    pub nontumor_class: ClassLabel,
    /// Tumor-mask IoU against the fixture's ground truth, when generated.
    pub iou: Option<f64>,
}

pub fn cmd_segment(cfg: &RunConfig) -> Result<SegmentSummary> {
    let objective = cfg.train.objective.as_str();
    let ckpt = classifier(cfg, objective)?;
    let dir = cfg.out.join("segment");
    create_dir(&dir)?;
    let s = &cfg.segment;
    let (slide, truth, stem) = match &s.slide {
        Some(path) => {
            let stem = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| "slide".into());
            (read_slide(path)?, None, stem)
        }
        None => {
            let spec = MarginSpec {
                height: s.fixture_side,
                width: s.fixture_side,
                tumor_fraction: s.fixture_tumor_fraction,
                patch_side: cfg.patch.patch_side,
            };
            let (img, mask) = generate_synthetic_margin_slide(s.fixture_tumor, s.fixture_nontumor, s.fixture_seed, &spec)?;
            let stem = format!("margin-{}-{}-{}", s.fixture_tumor.name(), s.fixture_nontumor.name(), s.fixture_seed);
            srh_core::io::write_slide(dir.join(format!("{stem}.srh")), &img)?;
            mask.write_pgm(dir.join(format!("{stem}_truth.pgm")))?;
            (img, Some(mask), stem)
        }
    };
    let heatmap = probability_heatmap(&slide, &ckpt, s.stride)?;
    let (_, sidecar) = write_segmentation(&dir, &stem, &slide, &heatmap, s.alpha)?;
    let iou = truth.map(|t| heatmap.tumor_mask().and_then(|m| m.iou(&t))).transpose()?;
    let summary = SegmentSummary { slide: stem.clone(), tumor_class: sidecar.tumor_class, nontumor_class: sidecar.nontumor_class, iou };
    write_json(&dir.join(format!("{stem}_summary.json")), &summary)?;
    cfg.write_resolved(&format!("segment-{objective}"))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub points: usize,
    pub silhouette: f64,
    pub kl_initial: f64,
    pub kl_final: f64,
}

/// tSNE of held-out patches, capped at `embed.max_points` by class-stratified sampling.
pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedSummary> {
    let objective = cfg.train.objective.as_str();
    let path = cfg.checkpoint_path(objective);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}; run `srh train` first", path.display()))?;
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let ds = dataset(&manifest, &split.test_patients, &cfg.patch)?;
    let targets = ds.targets();
    let keep = stratified_sample(&targets, cfg.embed.max_points, cfg.embed.tsne.seed);
    let patches: Vec<_> = keep.iter().map(|&i| &ds.patches[i]).collect();
    let mut emb = extract_embeddings(&ckpt, &patches, cfg.embed.representation)?;
    emb.labels = keep.iter().map(|&i| targets[i]).collect();
    let result = tsne(&emb.values, emb.dim, &cfg.embed.tsne)?;
    let label_idx: Vec<usize> = emb.labels.iter().map(|l| l.index()).collect();
    let summary = EmbedSummary {
        points: emb.len(),
        silhouette: silhouette(&result.coords, &label_idx)?,
        kl_initial: result.kl_initial,
        kl_final: result.kl_final,
    };
    let dir = cfg.out.join("embed");
    create_dir(&dir)?;
    let names: Vec<String> = emb.labels.iter().map(|l| l.name().to_string()).collect();
    write_scatter(dir.join(format!("{objective}.csv")), &result.coords, &names)?;
    write_json(&dir.join(format!("{objective}.json")), &summary)?;
    cfg.write_resolved(&format!("embed-{objective}"))?;
    Ok(summary)
}

/// gen, then train, probe and evaluate every objective, then segment and
/// embed with the configured objective.
pub fn cmd_all(cfg: &RunConfig) -> Result<String> {
    cmd_gen(cfg)?;
    let mut reports = Vec::new();
    for objective in OBJECTIVES {
        let mut c = cfg.clone();
        c.train.objective = objective.into();
        cmd_train(&c)?;
        if !ObjectiveRegistry::builtin().create(objective, &c.train.objective_params)?.trains_probe() {
            cmd_probe(&c)?;
        }
        reports.push((objective, cmd_eval(&c)?));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let table = comparison_table(&rows);
    fs::write(cfg.out.join("eval").join("comparison.txt"), &table)?;
    cmd_segment(cfg)?;
    cmd_embed(cfg)?;
    cfg.write_resolved("all")?;
    Ok(table)
}

/// Sizes the global rayon pool: one thread in deterministic mode, otherwise
/// capped by `SRH_THREADS` when set.
pub fn init_threads(deterministic: bool) -> Result<()> {
    let cap = match std::env::var("SRH_THREADS") {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("SRH_THREADS={v} is not a thread count"))?),
        Err(_) => None,
    };
    let threads = if deterministic { Some(1) } else { cap.filter(|&n| n > 0) };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    Ok(())
}
