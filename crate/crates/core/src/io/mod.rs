//! Slide containers, dataset manifests, patient splits and the synthetic cohort.

mod cohort;
mod label;
mod manifest;
mod mask;
mod slide;
pub mod synth;

pub use cohort::{CohortConfig, SyntheticCohort};
pub use label::{ClassLabel, NUM_CLASSES};
pub use manifest::{split_by_patient, DatasetManifest, ManifestEntry, SlideSource, SplitSpec};
pub use mask::Mask;
pub use slide::{read_slide, write_slide, RawSrhImage, SLIDE_MAGIC};
pub use synth::{
    mix_seed,
    generate_synthetic_infiltration_slide, generate_synthetic_margin_slide, generate_synthetic_slide,
    texture_params, InfiltrationSpec, MarginSpec,
};
