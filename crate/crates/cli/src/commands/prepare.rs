use std::fmt::Write as _;

use lungnet::dataset::{manifest_to_string, prepare_dataset};
use lungnet::train::label_counts;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::write_output;

pub fn prepare(cfg: &RunConfig) -> CliResult<()> {
    if !cfg.dataset_root.is_dir() {
        return Err(CliError::Missing { what: "dataset root", path: cfg.dataset_root.clone(), producer: "prepare" });
    }
    let mut ds = prepare_dataset(&cfg.dataset_root)?;
    if let Some(keep) = &cfg.patients {
        ds.rows.retain(|r| keep.contains(&r.patient_id));
        ds.cycles.retain(|c| keep.contains(&c.patient_id));
    }
    if ds.rows.is_empty() {
        log::warn!("no breathing cycles found under {}; manifest is empty", cfg.dataset_root.display());
    }
    for s in &ds.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    write_output(&cfg.manifest_path(), manifest_to_string(&ds.rows).as_bytes())?;

    let mut skipped = String::from("path\treason\n");
    for s in &ds.skipped {
        let rel = s.path.strip_prefix(&cfg.dataset_root).unwrap_or(&s.path);
        let _ = writeln!(skipped, "{}\t{}", rel.display(), s.reason.replace(['\t', '\n'], " "));
    }
    write_output(&cfg.output_dir.join("skipped.tsv"), skipped.as_bytes())?;

    let counts = label_counts(ds.rows.iter().map(|r| &r.label));
    let patients: std::collections::BTreeSet<&str> = ds.rows.iter().map(|r| r.patient_id.as_str()).collect();
    let recordings: std::collections::BTreeSet<&str> = ds.rows.iter().map(|r| r.recording_id.as_str()).collect();
    let mut summary = String::new();
    let _ = writeln!(summary, "recordings = {}", recordings.len());
    let _ = writeln!(summary, "patients = {}", patients.len());
    let _ = writeln!(summary, "cycles = {}", ds.rows.len());
    for l in lungnet::audio::Label::ALL {
        let _ = writeln!(summary, "cycles.{l} = {}", counts[l.index()]);
    }
    let _ = writeln!(summary, "skipped = {}", ds.skipped.len());
    write_output(&cfg.output_dir.join("prepare_summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}
