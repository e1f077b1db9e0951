use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::label::ClassLabel;
use super::manifest::{DatasetManifest, ManifestEntry, SlideSource};
use super::slide::{write_slide, RawSrhImage};
use super::synth::{generate_synthetic_slide, mix_seed};
use crate::error::{Result, SrhError};

/// Shape of a synthetic cohort. Patients are grouped by class; a patient's
/// slides share its `patient_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub patients_per_class: usize,
    pub slides_per_patient: usize,
    pub height: u32,
    pub width: u32,
    pub patch_side: u32,
    pub centers: usize,
    pub seed: u64,
    pub classes: Vec<ClassLabel>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            // 40 train + 10 test per class under a 20% patient hold-out.
            patients_per_class: 50,
            slides_per_patient: 2,
            height: 900,
            width: 900,
            patch_side: 300,
            centers: 3,
            seed: 2022,
            classes: ClassLabel::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SlideSeeds {
    label: ClassLabel,
    patient_seed: u64,
    slide_seed: u64,
}

/// In-memory cohort that renders slides on demand.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub config: CohortConfig,
    entries: Vec<ManifestEntry>,
    seeds: HashMap<String, SlideSeeds>,
}

impl SyntheticCohort {
    pub fn new(config: CohortConfig) -> Result<Self> {
        if config.height < config.patch_side || config.width < config.patch_side {
            return Err(SrhError::Size(format!(
                "cohort slides {}x{} smaller than patch side {}",
                config.height, config.width, config.patch_side
            )));
        }
        let mut entries = Vec::new();
        let mut seeds = HashMap::new();
        for &label in &config.classes {
            for p in 0..config.patients_per_class {
                let patient_id = format!("{}-p{p:03}", label.name());
                let patient_seed = mix_seed(mix_seed(config.seed, label.index() as u64), p as u64);
                for s in 0..config.slides_per_patient {
                    let slide_id = format!("{patient_id}-s{s}");
                    seeds.insert(
                        slide_id.clone(),
                        SlideSeeds {
                            label,
                            patient_seed,
                            slide_seed: mix_seed(patient_seed, s as u64 + 1),
                        },
                    );
                    entries.push(ManifestEntry {
                        path: PathBuf::from("slides").join(format!("{slide_id}.srh")),
                        patient_id: patient_id.clone(),
                        slide_id,
                        label,
                        center: format!("center{}", p % config.centers.max(1)),
                    });
                }
            }
        }
        Ok(Self {
            config,
            entries,
            seeds,
        })
    }

    /// Writes every slide under `dir/slides/` and the manifest to
    /// `dir/manifest.json`. Slides are rendered in parallel.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        let slides = dir.join("slides");
        fs::create_dir_all(&slides).map_err(|e| SrhError::io(&slides, e))?;
        self.entries
            .par_iter()
            .try_for_each(|e| write_slide(dir.join(&e.path), &self.load(e)?))?;
        let manifest = DatasetManifest::new(self.entries.clone())?;
        manifest.save(dir.join("manifest.json"))?;
        DatasetManifest::load(dir.join("manifest.json"))
    }
}

impl SlideSource for SyntheticCohort {
    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn load(&self, entry: &ManifestEntry) -> Result<RawSrhImage> {
        let s = self
            .seeds
            .get(&entry.slide_id)
            .ok_or_else(|| SrhError::Contract(format!("slide `{}` is not part of this cohort", entry.slide_id)))?;
        generate_synthetic_slide(
            s.label,
            s.patient_seed,
            s.slide_seed,
            self.config.height,
            self.config.width,
            self.config.patch_side,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_layout() {
        let cfg = CohortConfig {
            patients_per_class: 3,
            slides_per_patient: 2,
            height: 64,
            width: 64,
            patch_side: 32,
            ..CohortConfig::default()
        };
        let c = SyntheticCohort::new(cfg).unwrap();
        assert_eq!(c.entries().len(), 8 * 3 * 2);
        let e = &c.entries()[0];
        let a = c.load(e).unwrap();
        assert_eq!(a, c.load(e).unwrap());
        assert_eq!((a.height, a.width), (64, 64));
        // Slides of one patient differ.
        assert_ne!(a, c.load(&c.entries()[1]).unwrap());
    }

    #[test]
    fn written_cohort_reads_back() {
        let cfg = CohortConfig {
            patients_per_class: 1,
            slides_per_patient: 1,
            height: 40,
            width: 40,
            patch_side: 20,
            classes: vec![ClassLabel::Lymphoma, ClassLabel::NormalBrain],
            ..CohortConfig::default()
        };
        let c = SyntheticCohort::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = c.write_to_dir(dir.path()).unwrap();
        assert_eq!(m.entries, c.entries());
        for e in c.entries() {
            assert_eq!(m.load(e).unwrap(), c.load(e).unwrap());
        }
    }
}
