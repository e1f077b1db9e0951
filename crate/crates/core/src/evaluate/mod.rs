//! Patch inference, slide and patient aggregation, and the metric grid.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{
    majority_vote, soft_aggregate, top_k_accuracy, vote_shares, Aggregator, AggregatorRegistry, ConfusionMatrix,
    MajorityAggregator, ProbDist, SoftAggregator,
};

use crate::error::{Result, SrhError};
use crate::io::{ClassLabel, SlideSource, SplitSpec};
use crate::trainer::{Checkpoint, PatchDataset};

/// One patch's prediction with everything needed to aggregate it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub slide_id: String,
    pub patient_id: String,
    pub slide_label: ClassLabel,
    /// Patch-level truth: the slide label unless the filter marked the patch nondiagnostic.
    pub target: ClassLabel,
    pub diagnostic: bool,
    pub dist: ProbDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Slide,
    Patient,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Patch, Level::Slide, Level::Patient];

    pub fn title(self) -> &'static str {
        match self {
            Level::Patch => "Patch",
            Level::Slide => "Slide",
            Level::Patient => "Patient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub top2: f64,
    pub mca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: Level,
    pub metrics: Metrics,
    pub confusion: Vec<Vec<u64>>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub aggregator: String,
    pub levels: Vec<LevelReport>,
}

impl EvalReport {
    pub fn level(&self, level: Level) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }

    /// Metrics by level, one row.
    pub fn to_text_table(&self, row_name: &str) -> String {
        comparison_table(&[(row_name, self)])
    }
}

/// Rows of models, column groups Patch | Slide | Patient, each with Acc, Top 2 and MCA.
pub fn comparison_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "");
    for level in Level::ALL {
        let _ = write!(out, " | {:^23}", level.title());
    }
    out.push('\n');
    let _ = write!(out, "{:width$}", "");
    for _ in Level::ALL {
        let _ = write!(out, " | {:>7}{:>8}{:>8}", "Acc", "Top 2", "MCA");
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + 3 * 26));
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(out, "{name:width$}");
        for level in Level::ALL {
            match report.level(level) {
                Some(l) => {
                    let _ = write!(out, " | {:>7.3}{:>8.3}{:>8.3}", l.metrics.acc, l.metrics.top2, l.metrics.mca);
                }
                None => {
                    let _ = write!(out, " | {:>23}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn level_report(level: Level, items: &[(ProbDist, usize)], k: usize) -> Result<LevelReport> {
    let confusion = ConfusionMatrix::from_pairs(k, items.iter().map(|(d, y)| (*y, d.argmax())));
    let top2 = top_k_accuracy(items, 2.min(k))?;
    Ok(LevelReport {
        level,
        metrics: Metrics { acc: confusion.accuracy(), top2, mca: confusion.mean_class_accuracy()? },
        confusion: confusion.counts,
        count: items.len(),
    })
}

/// Distributions to pool for one slide or patient: the diagnostic patches,
/// or every patch when the filter rejected all of them.
fn pooled(preds: &[&PatchPrediction]) -> Vec<ProbDist> {
    let diagnostic: Vec<ProbDist> = preds.iter().filter(|p| p.diagnostic).map(|p| p.dist.clone()).collect();
    if diagnostic.is_empty() {
        preds.iter().map(|p| p.dist.clone()).collect()
    } else {
        diagnostic
    }
}

/// Most common slide label of a patient; ties go to the lowest class index.
fn patient_label(preds: &[&PatchPrediction]) -> ClassLabel {
    let mut slides: BTreeMap<&str, ClassLabel> = BTreeMap::new();
    for p in preds {
        slides.insert(&p.slide_id, p.slide_label);
    }
    let mut counts = [0usize; crate::io::NUM_CLASSES];
    for l in slides.values() {
        counts[l.index()] += 1;
    }
    let best = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    ClassLabel::from_index(best).unwrap_or(ClassLabel::Nondiagnostic)
}

/// Patch, slide and patient metrics. Slide and patient distributions pool
/// patches with `aggregator`.
pub fn build_report(preds: &[PatchPrediction], aggregator: &dyn Aggregator) -> Result<EvalReport> {
    let k = preds
        .first()
        .map(|p| p.dist.len())
        .ok_or_else(|| SrhError::Contract("no predictions to evaluate".into()))?;
    let patch_items: Vec<(ProbDist, usize)> = preds.iter().map(|p| (p.dist.clone(), p.target.index())).collect();
    let mut slides: BTreeMap<&str, Vec<&PatchPrediction>> = BTreeMap::new();
    let mut patients: BTreeMap<&str, Vec<&PatchPrediction>> = BTreeMap::new();
    for p in preds {
        slides.entry(&p.slide_id).or_default().push(p);
        patients.entry(&p.patient_id).or_default().push(p);
    }
    let slide_items = slides
        .values()
        .map(|ps| Ok((aggregator.aggregate(&pooled(ps))?, ps[0].slide_label.index())))
        .collect::<Result<Vec<_>>>()?;
    let patient_items = patients
        .values()
        .map(|ps| Ok((aggregator.aggregate(&pooled(ps))?, patient_label(ps).index())))
        .collect::<Result<Vec<_>>>()?;
    let names = if k == crate::io::NUM_CLASSES { ClassLabel::names() } else { (0..k).map(|i| i.to_string()).collect() };
    Ok(EvalReport {
        class_names: names,
        aggregator: aggregator.name().to_string(),
        levels: vec![
            level_report(Level::Patch, &patch_items, k)?,
            level_report(Level::Slide, &slide_items, k)?,
            level_report(Level::Patient, &patient_items, k)?,
        ],
    })
}

/// Fails when the split is not patient-disjoint or when any test patient
/// was seen while training the checkpoint.
pub fn check_leakage(train_patients: &BTreeSet<String>, split: &SplitSpec) -> Result<()> {
    let overlap = split.overlap();
    if !overlap.is_empty() {
        return Err(SrhError::Leakage(format!("split places patients on both sides: {}", overlap.join(", "))));
    }
    let seen: Vec<&str> = split.test_patients.intersection(train_patients).map(String::as_str).collect();
    if !seen.is_empty() {
        return Err(SrhError::Leakage(format!("checkpoint was trained on test patients: {}", seen.join(", "))));
    }
    Ok(())
}

/// Runs the checkpoint over every patch of `dataset`.
pub fn predict_dataset(ckpt: &Checkpoint, dataset: &PatchDataset) -> Result<Vec<PatchPrediction>> {
    let refs: Vec<_> = dataset.patches.iter().collect();
    let dists = ckpt.predict(&refs)?;
    dataset
        .patches
        .iter()
        .zip(dists)
        .enumerate()
        .map(|(i, (p, d))| {
            Ok(PatchPrediction {
                slide_id: p.slide_id.clone(),
                patient_id: p.patient_id.clone(),
                slide_label: p.label,
                target: dataset.target(i),
                diagnostic: dataset.decisions[i] != crate::preprocess::FilterDecision::Nondiagnostic,
                dist: ProbDist::new(d)?,
            })
        })
        .collect()
}

/// Held-out evaluation of the test patients of `split`. The leakage check
/// runs before any slide is read.
pub fn evaluate_testset(
    ckpt: &Checkpoint,
    source: &dyn SlideSource,
    split: &SplitSpec,
    aggregator: &dyn Aggregator,
) -> Result<EvalReport> {
    check_leakage(&ckpt.meta.train_patients, split)?;
    let mut cfg = ckpt.meta.patch;
    cfg.stride = cfg.patch_side;
    let dataset = PatchDataset::from_source(source, Some(&split.test_patients), &cfg)?;
    if dataset.is_empty() {
        return Err(SrhError::Contract("no test slides found for the split".into()));
    }
    build_report(&predict_dataset(ckpt, &dataset)?, aggregator)
}
