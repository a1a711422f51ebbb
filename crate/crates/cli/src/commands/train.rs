use std::collections::BTreeSet;
use std::fmt::Write as _;

use lungnet::container::model_to_bytes;
use lungnet::model::{build_hybrid, count_params, estimate_flops, ParamFilter};
use lungnet::train::{self as training, label_counts, split_patients, SplitPlan};

use super::{load_cycles, manifest_rows};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{split_text, write_output};

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let rows = manifest_rows(cfg)?;
    if rows.is_empty() {
        return Err(CliError::Usage("manifest has no cycles to train on".into()));
    }
    let cycles = load_cycles(cfg, &rows)?;
    let plan = match (&cfg.split.train_patients, &cfg.split.test_patients) {
        (Some(a), Some(b)) => SplitPlan {
            train_patients: a.iter().cloned().collect(),
            test_patients: b.iter().cloned().collect(),
            seed: cfg.split.seed,
        },
        _ => split_patients(&cycles, cfg.split.frac, cfg.split.seed)?,
    };
    let train_cycles: Vec<_> = cycles.into_iter().filter(|c| plan.train_patients.contains(&c.patient_id)).collect();
    if train_cycles.is_empty() {
        return Err(CliError::Usage("split leaves no training cycles".into()));
    }
    let forbidden: BTreeSet<String> = plan.test_patients.clone();
    let tcfg = cfg.train_config(forbidden);
    let mut model = build_hybrid(&cfg.model.spec, cfg.model.seed)?;
    let extractor = lungnet::audio::MelExtractor::new(cfg.mel())?;
    let report = training::train(&mut model.network, &train_cycles, &extractor, cfg.width(), &tcfg)?;

    write_output(&cfg.split_path(), split_text(&plan).as_bytes())?;
    write_output(&cfg.model_path(), &model_to_bytes(&model)?)?;

    let mut curve = String::from("epoch\tloss\ttrain_accuracy\n");
    for (i, loss) in report.loss_curve.iter().enumerate() {
        let acc = report.accuracy_curve.get(i).map_or("-".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(curve, "{}\t{loss:.8}\t{acc}", i + 1);
    }
    write_output(&cfg.output_dir.join("loss_curve.tsv"), curve.as_bytes())?;

    let counts = label_counts(train_cycles.iter().map(|c| &c.label));
    let net = &model.network;
    let mut s = String::new();
    let _ = writeln!(s, "model = {}", cfg.model.spec);
    let _ = writeln!(s, "params = {}", count_params(net, ParamFilter::All));
    let _ = writeln!(s, "flops = {}", estimate_flops(net, &cfg.model.spec.sample_shape())?);
    let _ = writeln!(s, "train_patients = {}", plan.train_patients.len());
    let _ = writeln!(s, "test_patients = {}", plan.test_patients.len());
    let _ = writeln!(s, "train_cycles = {}", train_cycles.len());
    for l in lungnet::audio::Label::ALL {
        let _ = writeln!(s, "train_cycles.{l} = {}", counts[l.index()]);
    }
    let _ = writeln!(s, "epochs_run = {}", report.epochs_run);
    let _ = writeln!(s, "stopped_early = {}", report.stopped_early);
    if let Some(last) = report.loss_curve.last() {
        let _ = writeln!(s, "final_loss = {last:.8}");
    }
    write_output(&cfg.output_dir.join("train_summary.txt"), s.as_bytes())?;
    print!("{s}");
    Ok(())
}
