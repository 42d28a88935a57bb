//! Datasets: procedural lesions, PPM files, pyramids and splits.

pub mod dataset;
pub mod lesion;
pub mod ppm;
pub mod pyramid;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    build_dataset, load_dataset_dir, reduce_class, restore_with_synthetic, split_dataset, ClassCounts,
    ExperimentDataset, Sample, SampleSource,
};
pub use lesion::{generate_lesion, LesionParams};
pub use pyramid::{real_pyramid, Interpolation, Pyramid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Benign,
    Melanoma,
    Keratosis,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Benign, ClassLabel::Melanoma, ClassLabel::Keratosis];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Melanoma => "melanoma",
            ClassLabel::Keratosis => "keratosis",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown class `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}
