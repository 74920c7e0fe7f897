//! Patient/image bookkeeping shared by the goodness-of-fit, screening and
//! classification stages: depth-indexed stacks of intensity samples, one or
//! more acquisitions per patient.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ggd::Sample;

/// Imaging depth in hundredths of a micrometre (4950 = 49.5 µm), kept as a
/// fixed-point integer so file names and grouping never suffer float drift.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Depth(pub u32);

impl Depth {
    pub fn from_um(um: f64) -> Self {
        Depth((um * 100.0).round() as u32)
    }

    pub fn um(&self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // "49.5", "54" — minimal decimals
        write!(f, "{}", self.um())
    }
}

/// Clinical class of a patient.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Healthy,
    Lentigo,
    Unlabeled,
}

impl ClassLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "healthy" => Some(ClassLabel::Healthy),
            "lentigo" => Some(ClassLabel::Lentigo),
            "unlabeled" => Some(ClassLabel::Unlabeled),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Lentigo => "lentigo",
            ClassLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Identifies one image: (patient, acquisition index, depth).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageKey {
    pub patient: String,
    pub acquisition: usize,
    pub depth: Depth,
}

impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/acq{}/{}", self.patient, self.acquisition, self.depth.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CohortError {
    #[error("patient {0} has no acquisitions")]
    NoAcquisitions(String),
    #[error("patient {patient}: acquisition {acquisition} does not share the depth grid")]
    InconsistentGrid { patient: String, acquisition: usize },
}

/// All images of one patient: per acquisition, an ordered map depth → sample.
#[derive(Debug, Clone)]
pub struct PatientStack {
    pub patient: String,
    pub label: ClassLabel,
    pub acquisitions: Vec<BTreeMap<Depth, Sample<f64>>>,
}

impl PatientStack {
    /// Validates that at least one acquisition exists and that all
    /// acquisitions of the patient share one depth grid.
    pub fn new(
        patient: String,
        label: ClassLabel,
        acquisitions: Vec<BTreeMap<Depth, Sample<f64>>>,
    ) -> Result<Self, CohortError> {
        if acquisitions.is_empty() {
            return Err(CohortError::NoAcquisitions(patient));
        }
        let grid: Vec<Depth> = acquisitions[0].keys().copied().collect();
        for (k, acq) in acquisitions.iter().enumerate().skip(1) {
            if acq.keys().copied().collect::<Vec<_>>() != grid {
                return Err(CohortError::InconsistentGrid { patient, acquisition: k });
            }
        }
        Ok(Self { patient, label, acquisitions })
    }

    /// The shared depth grid.
    pub fn depths(&self) -> Vec<Depth> {
        self.acquisitions[0].keys().copied().collect()
    }

    /// Iterates every image of the patient as (key, sample).
    pub fn images(&self) -> impl Iterator<Item = (ImageKey, &Sample<f64>)> + '_ {
        self.acquisitions.iter().enumerate().flat_map(move |(k, acq)| {
            acq.iter().map(move |(&depth, sample)| {
                (
                    ImageKey { patient: self.patient.clone(), acquisition: k, depth },
                    sample,
                )
            })
        })
    }
}
