use std::path::Path;

use super::{AudioRecording, ChestLocation};
use crate::error::{Error, Result};

/// Fields encoded in a `patient_recIdx_location_mode_equipment` file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingMeta {
    pub patient_id: String,
    pub recording_index: String,
    pub chest_location: ChestLocation,
    pub acquisition_mode: String,
    pub equipment: String,
}

pub fn parse_recording_name(stem: &str) -> Result<RecordingMeta> {
    let err = |reason: &str| Error::Metadata { raw: stem.to_string(), reason: reason.to_string() };
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() != 5 {
        return Err(err("expected 5 underscore-separated fields"));
    }
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty field"));
    }
    if !parts[0].chars().all(|c| c.is_ascii_digit()) {
        return Err(err("patient id must be numeric"));
    }
    let chest_location = parts[2].parse().map_err(|_| err("unknown chest location"))?;
    Ok(RecordingMeta {
        patient_id: parts[0].to_string(),
        recording_index: parts[1].to_string(),
        chest_location,
        acquisition_mode: parts[3].to_string(),
        equipment: parts[4].to_string(),
    })
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads an integer-PCM mono WAV file, scaling samples by `2^(bits-1)` into [-1, 1).
pub fn read_wav_samples(path: &Path) -> Result<(Vec<f64>, u32)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let reader = hound::WavReader::new(file).map_err(|e| format_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(format_err(path, "expected integer PCM samples"));
    }
    if !(8..=32).contains(&spec.bits_per_sample) {
        return Err(format_err(path, format!("unsupported bit depth {}", spec.bits_per_sample)));
    }
    let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
    let samples = reader
        .into_samples::<i32>()
        .map(|s| s.map(|v| v as f64 / scale))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| format_err(path, e.to_string()))?;
    if samples.is_empty() {
        return Err(format_err(path, "no samples"));
    }
    Ok((samples, spec.sample_rate))
}

/// Loads a recording and parses its metadata from the file name.
pub fn load_wav(path: &Path) -> Result<AudioRecording> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Metadata { raw: path.display().to_string(), reason: "no file stem".into() })?;
    let meta = parse_recording_name(stem)?;
    let (samples, sample_rate) = read_wav_samples(path)?;
    Ok(AudioRecording {
        samples,
        sample_rate,
        patient_id: meta.patient_id,
        recording_id: stem.to_string(),
        chest_location: meta.chest_location,
        equipment: meta.equipment,
    })
}

/// Writes 16-bit PCM mono. Values are clamped to the representable range.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec =
        hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| format_err(path, e.to_string()))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| format_err(path, e.to_string()))
}
