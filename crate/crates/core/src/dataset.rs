//! Dataset directory scanning and the per-cycle manifest.
//!
//! A dataset root holds `stem.wav` + `stem.txt` pairs, possibly in
//! subdirectories. The manifest is tab-separated with a header row; offsets are
//! in seconds and `source` is the WAV path relative to the root with `/` separators.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::audio::{load_wav, read_annotations, resample, slice_cycles, BreathingCycle, Label, TARGET_RATE};
use crate::error::{Error, Result};
use crate::par;

pub const MANIFEST_HEADER: &str = "patient_id\trecording_id\tcycle\tlabel\tstart_s\tend_s\tduration_s\tsource";

/// A file that was left out of a prepared dataset, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScanResult {
    /// (wav, annotation) pairs sorted by WAV path.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub orphans: Vec<Skipped>,
}

pub fn scan_dataset(root: &Path) -> Result<ScanResult> {
    if !root.is_dir() {
        return Err(Error::Input(format!("dataset root {} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    let mut scan = ScanResult::default();
    for wav in files.iter().filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))) {
        let txt = wav.with_extension("txt");
        if txt.is_file() {
            scan.pairs.push((wav.clone(), txt));
        } else {
            scan.orphans.push(Skipped { path: wav.clone(), reason: "no annotation file".into() });
        }
    }
    Ok(scan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patient_id: String,
    pub recording_id: String,
    /// Zero-based position of the cycle within its recording.
    pub cycle: usize,
    pub label: Label,
    pub start_s: f64,
    pub end_s: f64,
    pub source: String,
}

impl ManifestRow {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreparedDataset {
    pub rows: Vec<ManifestRow>,
    pub cycles: Vec<BreathingCycle>,
    pub recordings: usize,
    pub skipped: Vec<Skipped>,
}

fn relative_source(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn load_pair(wav: &Path, txt: &Path) -> Result<Vec<BreathingCycle>> {
    let rec = load_wav(wav)?;
    let rec = if rec.sample_rate == TARGET_RATE { rec } else { resample(&rec, TARGET_RATE)? };
    slice_cycles(&rec, &read_annotations(txt)?)
}

/// Loads, resamples and slices every pair under `root`. Recordings that fail to
/// load are skipped with their error; the rest are processed in parallel.
pub fn prepare_dataset(root: &Path) -> Result<PreparedDataset> {
    let scan = scan_dataset(root)?;
    let loaded = par::map_slice(&scan.pairs, |(wav, txt)| load_pair(wav, txt));
    let mut out = PreparedDataset { skipped: scan.orphans, ..Default::default() };
    for ((wav, _), res) in scan.pairs.iter().zip(loaded) {
        match res {
            Ok(cycles) => {
                out.recordings += 1;
                let source = relative_source(root, wav);
                for (i, c) in cycles.iter().enumerate() {
                    out.rows.push(ManifestRow {
                        patient_id: c.patient_id.clone(),
                        recording_id: c.recording_id.clone(),
                        cycle: i,
                        label: c.label,
                        start_s: c.start_s,
                        end_s: c.end_s,
                        source: source.clone(),
                    });
                }
                out.cycles.extend(cycles);
            }
            Err(e) => out.skipped.push(Skipped { path: wav.clone(), reason: e.to_string() }),
        }
    }
    out.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{}",
            r.patient_id,
            r.recording_id,
            r.cycle,
            r.label,
            r.start_s,
            r.end_s,
            r.duration_s(),
            r.source
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => return Err(Error::Input(format!("manifest header mismatch: {:?}", other.unwrap_or("")))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::Input(format!("manifest line {}: {what}", i + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(bad(&format!("expected 8 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
            Ok(ManifestRow {
                patient_id: f[0].to_string(),
                recording_id: f[1].to_string(),
                cycle: f[2].parse().map_err(|_| bad("bad cycle index"))?,
                label: f[3].parse().map_err(|_| bad(&format!("bad label `{}`", f[3])))?,
                start_s: num(f[4])?,
                end_s: num(f[5])?,
                source: f[7].to_string(),
            })
        })
        .collect()
}

/// Re-reads the audio behind manifest rows. Each source file is decoded once.
pub fn load_manifest_cycles(root: &Path, rows: &[ManifestRow]) -> Result<Vec<BreathingCycle>> {
    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_source.entry(r.source.as_str()).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = by_source.into_iter().collect();
    let loaded = par::map_slice(&groups, |(source, idx)| -> Result<Vec<(usize, BreathingCycle)>> {
        let rec = load_wav(&root.join(source))?;
        let rec = if rec.sample_rate == TARGET_RATE { rec } else { resample(&rec, TARGET_RATE)? };
        let anns: Vec<_> = idx
            .iter()
            .map(|&i| crate::audio::Annotation {
                start_s: rows[i].start_s,
                end_s: rows[i].end_s,
                crackle: matches!(rows[i].label, Label::Crackle | Label::Both),
                wheeze: matches!(rows[i].label, Label::Wheeze | Label::Both),
            })
            .collect();
        Ok(idx.iter().copied().zip(slice_cycles(&rec, &anns)?).collect())
    });
    let mut slots: Vec<Option<BreathingCycle>> = vec![None; rows.len()];
    for group in loaded {
        for (i, c) in group? {
            slots[i] = Some(c);
        }
    }
    Ok(slots.into_iter().map(|c| c.expect("every row belongs to one group")).collect())
}
