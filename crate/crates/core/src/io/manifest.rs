use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::label::ClassLabel;
use super::slide::{read_slide, RawSrhImage};
use crate::error::{Result, SrhError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub patient_id: String,
    pub slide_id: String,
    pub label: ClassLabel,
    pub center: String,
}

/// List of slides on disk. Serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            entries,
            base_dir: None,
        };
        m.check_unique_slides()?;
        Ok(m)
    }

    fn check_unique_slides(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.slide_id.as_str()) {
                return Err(SrhError::Format(format!(
                    "slide id `{}` appears more than once in manifest",
                    e.slide_id
                )));
            }
        }
        Ok(())
    }

    /// Loads a manifest; relative slide paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SrhError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.check_unique_slides()?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| SrhError::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        match (&self.base_dir, entry.path.is_relative()) {
            (Some(base), true) => base.join(&entry.path),
            _ => entry.path.clone(),
        }
    }

    /// Every distinct patient id, sorted.
    pub fn patients(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.patient_id.clone()).collect()
    }

    /// Reads every slide once to confirm the manifest points at well-formed files.
    pub fn validate_files(&self) -> Result<()> {
        for e in &self.entries {
            read_slide(self.resolve(e))?;
        }
        Ok(())
    }
}

/// Anything that can enumerate slides and produce their pixels.
pub trait SlideSource: Sync {
    fn entries(&self) -> &[ManifestEntry];
    fn load(&self, entry: &ManifestEntry) -> Result<RawSrhImage>;
}

impl SlideSource for DatasetManifest {
    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn load(&self, entry: &ManifestEntry) -> Result<RawSrhImage> {
        read_slide(self.resolve(entry))
    }
}

/// Patient-disjoint train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn overlap(&self) -> Vec<String> {
        self.train_patients
            .intersection(&self.test_patients)
            .cloned()
            .collect()
    }
}

/// Holds out `round(test_fraction * #patients)` patients, at least one per side.
pub fn split_by_patient(
    entries: &[ManifestEntry],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SrhError::Split(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    // BTreeMap keeps the pre-shuffle order independent of manifest order.
    let mut patients: Vec<String> = entries
        .iter()
        .map(|e| (e.patient_id.clone(), ()))
        .collect::<BTreeMap<_, _>>()
        .into_keys()
        .collect();
    let n = patients.len();
    if n < 2 {
        return Err(SrhError::Split(format!(
            "need at least 2 patients to split, manifest has {n}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let test_patients = patients[..n_test].iter().cloned().collect();
    let train_patients = patients[n_test..].iter().cloned().collect();
    Ok(SplitSpec {
        train_patients,
        test_patients,
        seed,
    })
}
