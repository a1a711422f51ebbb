//! Audio ingestion and feature extraction.

mod cycles;
mod mel;
mod resample;
mod stats;
mod variability;
mod wav;

pub use cycles::{parse_annotations, read_annotations, slice_cycles, Annotation, BreathingCycle, Label};
pub use mel::{fix_width, mel_spectrogram, MelConfig, MelExtractor, MelFilterbank, MelSpectrogram};
pub use resample::{resample, resample_samples, resample_to_len};
pub use stats::{cycle_stats, CycleStats};
pub use variability::{variability_report, FeatureVariability, Quartiles, VariabilityReport};
pub use wav::{load_wav, parse_recording_name, read_wav_samples, write_wav, RecordingMeta};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sample rate every recording is brought to before slicing.
pub const TARGET_RATE: u32 = 4000;

/// Auscultation site on the chest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChestLocation {
    Trachea,
    AnteriorLeft,
    AnteriorRight,
    PosteriorLeft,
    PosteriorRight,
    LateralLeft,
    LateralRight,
}

impl ChestLocation {
    pub const ALL: [ChestLocation; 7] = [
        ChestLocation::Trachea,
        ChestLocation::AnteriorLeft,
        ChestLocation::AnteriorRight,
        ChestLocation::PosteriorLeft,
        ChestLocation::PosteriorRight,
        ChestLocation::LateralLeft,
        ChestLocation::LateralRight,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ChestLocation::Trachea => "Tc",
            ChestLocation::AnteriorLeft => "Al",
            ChestLocation::AnteriorRight => "Ar",
            ChestLocation::PosteriorLeft => "Pl",
            ChestLocation::PosteriorRight => "Pr",
            ChestLocation::LateralLeft => "Ll",
            ChestLocation::LateralRight => "Lr",
        }
    }
}

impl fmt::Display for ChestLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ChestLocation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| Error::Argument(format!("unknown chest location `{s}`")))
    }
}

/// A mono recording with its acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecording {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub patient_id: String,
    pub recording_id: String,
    pub chest_location: ChestLocation,
    pub equipment: String,
}

impl AudioRecording {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
