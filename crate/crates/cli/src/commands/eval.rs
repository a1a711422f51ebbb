use std::path::Path;

use lungnet::model::Model;
use lungnet::quantize::{apply_quantized, read_qmodel, QMODEL_MAGIC};
use lungnet::train::{argmax_label, evaluate_metrics, predict_proba};

use super::{load_model_file, test_set};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{parse_predictions, predictions_text, read_text, write_metrics, write_output, PredictionRow};

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

/// A `.rmdl` as is, or a `.qmodel` applied on top of the trained model.
fn load_any(cfg: &RunConfig, path: &Path) -> CliResult<Model> {
    if !path.exists() {
        return Err(CliError::Missing { what: "model", path: path.to_path_buf(), producer: "train" });
    }
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    if bytes.starts_with(QMODEL_MAGIC) {
        let base = load_model_file(&cfg.model_path(), "train")?;
        let qm = read_qmodel(bytes.as_slice())?;
        let network = apply_quantized(&base.network, &qm)?;
        return Ok(Model { spec: base.spec, network });
    }
    Ok(lungnet::container::read_model(bytes.as_slice())?)
}

pub fn eval(cfg: &RunConfig, model: Option<&Path>) -> CliResult<()> {
    let path = model.map_or_else(|| cfg.model_path(), Path::to_path_buf);
    let model = load_any(cfg, &path)?;
    let (rows, examples) = test_set(cfg)?;
    let proba = predict_proba(&model.network, &examples)?;
    let preds: Vec<_> = proba.iter().map(argmax_label).collect();
    let labels: Vec<_> = examples.iter().map(|e| e.label).collect();
    let metrics = evaluate_metrics(&preds, &labels)?;

    let table: Vec<PredictionRow> = rows
        .iter()
        .zip(&proba)
        .zip(&preds)
        .map(|((r, p), &predicted)| PredictionRow {
            patient_id: &r.patient_id,
            recording_id: &r.recording_id,
            cycle: r.cycle,
            label: r.label,
            proba: *p,
            predicted,
        })
        .collect();
    let dir = cfg.output_dir.join("eval").join(stem(&path));
    write_output(&dir.join("predictions.tsv"), predictions_text(&table).as_bytes())?;
    write_metrics(&dir, &metrics)?;
    println!("n = {}\nse = {:.6}\nsp = {:.6}\nscore = {:.6}", metrics.n, metrics.se, metrics.sp, metrics.score);
    Ok(())
}

pub fn eval_predictions(cfg: &RunConfig, path: &Path) -> CliResult<()> {
    let text = read_text(path, "predictions file", "eval")?;
    let (labels, preds) = parse_predictions(&text, path)?;
    let metrics = evaluate_metrics(&preds, &labels)?;
    write_metrics(&cfg.output_dir.join("eval").join(stem(path)), &metrics)?;
    println!("n = {}\nse = {:.6}\nsp = {:.6}\nscore = {:.6}", metrics.n, metrics.se, metrics.sp, metrics.score);
    Ok(())
}
