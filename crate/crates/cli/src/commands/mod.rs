mod eval;
mod prepare;
mod quantize;
mod report;
mod train;
mod tune;

use std::collections::BTreeSet;
use std::path::Path;

use lungnet::audio::{BreathingCycle, MelExtractor};
use lungnet::container::read_model;
use lungnet::dataset::{load_manifest_cycles, parse_manifest, ManifestRow};
use lungnet::model::Model;
use lungnet::train::{examples_from_cycles, Example, SplitPlan};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{parse_split, read_text};

pub use eval::{eval, eval_predictions};
pub use prepare::prepare;
pub use quantize::quantize;
pub use report::report;
pub use train::train;
pub use tune::tune;

/// Manifest rows, narrowed to `cfg.patients` when set.
fn manifest_rows(cfg: &RunConfig) -> CliResult<Vec<ManifestRow>> {
    let text = read_text(&cfg.manifest_path(), "manifest", "prepare")?;
    let mut rows = parse_manifest(&text)?;
    if let Some(keep) = &cfg.patients {
        let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        rows.retain(|r| keep.contains(r.patient_id.as_str()));
        if rows.is_empty() {
            return Err(CliError::Usage(format!("none of the patients {:?} appear in the manifest", cfg.patients)));
        }
    }
    Ok(rows)
}

fn load_cycles(cfg: &RunConfig, rows: &[ManifestRow]) -> CliResult<Vec<BreathingCycle>> {
    Ok(load_manifest_cycles(&cfg.dataset_root, rows)?)
}

fn to_examples(cfg: &RunConfig, cycles: &[BreathingCycle]) -> CliResult<Vec<Example>> {
    let extractor = MelExtractor::new(cfg.mel())?;
    Ok(examples_from_cycles(cycles, &extractor, cfg.width())?)
}

fn load_split(cfg: &RunConfig) -> CliResult<SplitPlan> {
    let path = cfg.split_path();
    parse_split(&read_text(&path, "patient split", "train")?, &path, cfg.split.seed)
}

fn load_model_file(path: &Path, producer: &'static str) -> CliResult<Model> {
    if !path.exists() {
        return Err(CliError::Missing { what: "model", path: path.to_path_buf(), producer });
    }
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(read_model(bytes.as_slice())?)
}

/// Test-patient rows with their examples, in manifest order.
fn test_set(cfg: &RunConfig) -> CliResult<(Vec<ManifestRow>, Vec<Example>)> {
    let split = load_split(cfg)?;
    let mut rows = manifest_rows(cfg)?;
    rows.retain(|r| split.test_patients.contains(&r.patient_id));
    if rows.is_empty() {
        return Err(CliError::Usage("no test-patient cycles selected".into()));
    }
    let cycles = load_cycles(cfg, &rows)?;
    let examples = to_examples(cfg, &cycles)?;
    Ok((rows, examples))
}
