use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{AudioRecording, TARGET_RATE};
use crate::error::{Error, Result};

/// Breathing-cycle class. The discriminant order is the fixed class order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Crackle = 1,
    Wheeze = 2,
    Both = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Normal, Label::Crackle, Label::Wheeze, Label::Both];
    pub const COUNT: usize = 4;

    pub fn from_flags(crackle: bool, wheeze: bool) -> Self {
        match (crackle, wheeze) {
            (false, false) => Label::Normal,
            (true, false) => Label::Crackle,
            (false, true) => Label::Wheeze,
            (true, true) => Label::Both,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Input(format!("class index {i} out of range")))
    }

    pub fn is_abnormal(self) -> bool {
        self != Label::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Crackle => "crackle",
            Label::Wheeze => "wheeze",
            Label::Both => "both",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| Error::Input(format!("unknown class label `{s}`")))
    }
}

/// One annotated row: `start end crackle wheeze`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

/// A labelled segment of a 4 kHz recording.
#[derive(Debug, Clone, PartialEq)]
pub struct BreathingCycle {
    pub samples: Vec<f64>,
    pub label: Label,
    pub start_s: f64,
    pub end_s: f64,
    pub patient_id: String,
    pub recording_id: String,
}

impl BreathingCycle {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / TARGET_RATE as f64
    }
}

/// Parses whitespace-separated annotation rows. Blank lines are ignored; rows are numbered from 1.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Annotation { row, reason: format!("expected 4 fields, found {}", fields.len()) });
        }
        let time = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Annotation { row, reason: format!("bad time `{s}`") })
        };
        let flag = |s: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Annotation { row, reason: format!("flag must be 0 or 1, found `{s}`") }),
            }
        };
        out.push(Annotation {
            start_s: time(fields[0])?,
            end_s: time(fields[1])?,
            crackle: flag(fields[2])?,
            wheeze: flag(fields[3])?,
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

/// Sample index range `[floor(start*rate), floor(end*rate))` for an annotation.
pub(crate) fn sample_span(a: &Annotation, n: usize, row: usize) -> Result<(usize, usize)> {
    if !(a.start_s < a.end_s) {
        return Err(Error::Annotation { row, reason: format!("start {} is not before end {}", a.start_s, a.end_s) });
    }
    if a.start_s < 0.0 {
        return Err(Error::Annotation { row, reason: format!("negative start {}", a.start_s) });
    }
    let rate = TARGET_RATE as f64;
    let lo = (a.start_s * rate).floor() as usize;
    let hi = (a.end_s * rate).floor() as usize;
    if hi > n {
        return Err(Error::Annotation {
            row,
            reason: format!("end {} s exceeds recording length {} s", a.end_s, n as f64 / rate),
        });
    }
    if lo >= hi {
        return Err(Error::Annotation { row, reason: "interval shorter than one sample".into() });
    }
    Ok((lo, hi))
}

/// Cuts a 4 kHz recording into labelled breathing cycles.
pub fn slice_cycles(rec: &AudioRecording, annotations: &[Annotation]) -> Result<Vec<BreathingCycle>> {
    if rec.sample_rate != TARGET_RATE {
        return Err(Error::Input(format!(
            "recording `{}` is at {} Hz; resample to {TARGET_RATE} Hz before slicing",
            rec.recording_id, rec.sample_rate
        )));
    }
    annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (lo, hi) = sample_span(a, rec.samples.len(), i + 1)?;
            Ok(BreathingCycle {
                samples: rec.samples[lo..hi].to_vec(),
                label: Label::from_flags(a.crackle, a.wheeze),
                start_s: a.start_s,
                end_s: a.end_s,
                patient_id: rec.patient_id.clone(),
                recording_id: rec.recording_id.clone(),
            })
        })
        .collect()
}
