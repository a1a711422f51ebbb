use std::collections::BTreeMap;

use super::stats::cycle_stats;
use super::{BreathingCycle, CycleStats};
use crate::error::{Error, Result};

/// Quartile summary (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self { min: v[0], q1: at(0.25), median: at(0.5), q3: at(0.75), max: v[v.len() - 1] })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVariability {
    pub feature: &'static str,
    /// Each cycle's value divided by its patient's mean.
    pub intra: Vec<f64>,
    /// Each cycle's value divided by the mean over all cycles.
    pub inter: Vec<f64>,
    pub intra_summary: Option<Quartiles>,
    pub inter_summary: Option<Quartiles>,
    /// Patients dropped from `intra` because their mean was zero.
    pub excluded_patients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityReport {
    pub features: Vec<FeatureVariability>,
    pub n_patients: usize,
    pub n_cycles: usize,
}

impl VariabilityReport {
    pub fn feature(&self, name: &str) -> Option<&FeatureVariability> {
        self.features.iter().find(|f| f.feature == name)
    }
}

pub fn variability_report(cycles: &[BreathingCycle]) -> Result<VariabilityReport> {
    let stats = crate::par::map_slice(cycles, cycle_stats).into_iter().collect::<Result<Vec<_>>>()?;
    let patients: Vec<&str> = cycles.iter().map(|c| c.patient_id.as_str()).collect();
    report_from_stats(&patients, &stats)
}

pub(crate) fn report_from_stats(patients: &[&str], stats: &[CycleStats]) -> Result<VariabilityReport> {
    if stats.is_empty() {
        return Err(Error::Input("variability report needs at least one cycle".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in patients.iter().enumerate() {
        groups.entry(p).or_default().push(i);
    }
    if groups.len() < 2 {
        log::warn!("variability report over a single patient; intra and inter coincide");
    }
    let features = CycleStats::FEATURES
        .iter()
        .enumerate()
        .map(|(f, &name)| {
            let values: Vec<f64> = stats.iter().map(|s| s.values()[f]).collect();
            let global = values.iter().sum::<f64>() / values.len() as f64;
            let inter = if global != 0.0 {
                values.iter().map(|v| v / global).collect()
            } else {
                log::warn!("feature {name} has zero global mean; inter ratios omitted");
                Vec::new()
            };
            let mut intra = Vec::with_capacity(values.len());
            let mut excluded_patients = Vec::new();
            for (patient, idx) in &groups {
                let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
                if mean == 0.0 {
                    log::warn!("patient {patient} has zero mean {name}; excluded");
                    excluded_patients.push(patient.to_string());
                    continue;
                }
                intra.extend(idx.iter().map(|&i| values[i] / mean));
            }
            FeatureVariability {
                feature: name,
                intra_summary: Quartiles::of(&intra),
                inter_summary: Quartiles::of(&inter),
                intra,
                inter,
                excluded_patients,
            }
        })
        .collect();
    Ok(VariabilityReport { features, n_patients: groups.len(), n_cycles: stats.len() })
}
