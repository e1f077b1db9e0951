use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SrhError;

/// Diagnostic category of a slide or patch. The discriminant is the class
/// index used by every probability vector in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    PituitaryAdenoma = 0,
    Meningioma = 1,
    Schwannoma = 2,
    Lymphoma = 3,
    Metastasis = 4,
    NormalBrain = 5,
    NormalPituitary = 6,
    /// Acellular tissue, including dura.
    Nondiagnostic = 7,
}

pub const NUM_CLASSES: usize = 8;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::PituitaryAdenoma,
        ClassLabel::Meningioma,
        ClassLabel::Schwannoma,
        ClassLabel::Lymphoma,
        ClassLabel::Metastasis,
        ClassLabel::NormalBrain,
        ClassLabel::NormalPituitary,
        ClassLabel::Nondiagnostic,
    ];

    pub const TUMOR: [ClassLabel; 5] = [
        ClassLabel::PituitaryAdenoma,
        ClassLabel::Meningioma,
        ClassLabel::Schwannoma,
        ClassLabel::Lymphoma,
        ClassLabel::Metastasis,
    ];

    pub const NONTUMOR: [ClassLabel; 3] = [
        ClassLabel::NormalBrain,
        ClassLabel::NormalPituitary,
        ClassLabel::Nondiagnostic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<ClassLabel> {
        Self::ALL.get(index).copied()
    }

    pub fn is_tumor(self) -> bool {
        self.index() < 5
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::PituitaryAdenoma => "pituitary_adenoma",
            ClassLabel::Meningioma => "meningioma",
            ClassLabel::Schwannoma => "schwannoma",
            ClassLabel::Lymphoma => "lymphoma",
            ClassLabel::Metastasis => "metastasis",
            ClassLabel::NormalBrain => "normal_brain",
            ClassLabel::NormalPituitary => "normal_pituitary",
            ClassLabel::Nondiagnostic => "nondiagnostic",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.name().to_string()).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = SrhError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "dura" {
            return Ok(ClassLabel::Nondiagnostic);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| SrhError::Label(format!("unknown class label `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_tumor_three_nontumor() {
        assert_eq!(ClassLabel::ALL.iter().filter(|l| l.is_tumor()).count(), 5);
        assert_eq!(ClassLabel::ALL.iter().filter(|l| !l.is_tumor()).count(), 3);
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(ClassLabel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn dura_is_nondiagnostic() {
        assert_eq!("dura".parse::<ClassLabel>().unwrap(), ClassLabel::Nondiagnostic);
        assert_eq!("meningioma".parse::<ClassLabel>().unwrap(), ClassLabel::Meningioma);
        assert!("glioma".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn serde_uses_snake_case() {
        let s = serde_json::to_string(&ClassLabel::NormalPituitary).unwrap();
        assert_eq!(s, "\"normal_pituitary\"");
    }
}
