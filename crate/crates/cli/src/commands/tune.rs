use std::fmt::Write as _;

use lungnet::container::model_to_bytes;
use lungnet::model::Model;
use lungnet::train::MetricsReport;
use lungnet::tuning::{
    fine_tune, group_patients, loo_validate, pooled_metrics, screen_patient, LooReport, Predictor, Verdict,
};
use serde::Serialize;

use super::{load_model_file, test_set};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::formats::{json_line, metrics_text, write_output};

#[derive(Serialize)]
struct PatientSummary<'a> {
    patient_id: &'a str,
    recordings: usize,
    cycles: usize,
    tuned: Option<&'a MetricsReport>,
    generalized: Option<&'a MetricsReport>,
    majority: Option<&'a MetricsReport>,
}

#[derive(Serialize)]
struct TuneSummary<'a> {
    tuned: Option<MetricsReport>,
    generalized: Option<MetricsReport>,
    majority: Option<MetricsReport>,
    patients: Vec<PatientSummary<'a>>,
    skipped_patients: Vec<&'a str>,
}

fn pooled(reports: &[LooReport], which: Predictor) -> CliResult<Option<MetricsReport>> {
    match pooled_metrics(reports, which) {
        Ok(m) => Ok(Some(m)),
        Err(lungnet::Error::UndefinedMetric(why)) => {
            log::warn!("pooled {which:?} metrics undefined: {why}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn correct(pred: &[lungnet::audio::Label], labels: &[lungnet::audio::Label]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

pub fn tune(cfg: &RunConfig) -> CliResult<()> {
    let model = load_model_file(&cfg.model_path(), "train")?;
    let (_, examples) = test_set(cfg)?;
    let tcfg = cfg.tune_config();
    let patients = group_patients(&examples);
    let dir = cfg.output_dir.join("tune");

    let mut screening = String::from("patient_id\tcycles\tabnormal_fraction\tverdict\n");
    let mut folds = String::from("patient_id\ttest_recording\ttuning_cycles\ttest_cycles\ttuned_correct\tgeneralized_correct\tmajority_correct\n");
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for p in &patients {
        let s = screen_patient(&model.network, p, tcfg.screening_threshold)?;
        let verdict = if s.verdict == Verdict::Unhealthy { "unhealthy" } else { "healthy" };
        let _ = writeln!(screening, "{}\t{}\t{:.6}\t{verdict}", p.patient_id, p.examples.len(), s.abnormal_fraction);

        let (tuned, _) = fine_tune(&model.network, &p.examples, &tcfg)?;
        let tuned = Model { spec: model.spec.clone(), network: tuned };
        write_output(&dir.join(format!("patient_{}.rmdl", p.patient_id)), &model_to_bytes(&tuned)?)?;

        match loo_validate(&model.network, p, &tcfg)? {
            Some(r) => {
                for f in &r.folds {
                    let _ = writeln!(
                        folds,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        r.patient_id,
                        f.test_recording,
                        f.tuning_size,
                        f.labels.len(),
                        correct(&f.tuned, &f.labels),
                        correct(&f.generalized, &f.labels),
                        correct(&f.majority, &f.labels)
                    );
                }
                reports.push(r);
            }
            None => skipped.push(p.patient_id.as_str()),
        }
    }
    let summary = TuneSummary {
        tuned: pooled(&reports, Predictor::Tuned)?,
        generalized: pooled(&reports, Predictor::Generalized)?,
        majority: pooled(&reports, Predictor::Majority)?,
        patients: reports
            .iter()
            .map(|r| PatientSummary {
                patient_id: &r.patient_id,
                recordings: r.folds.len(),
                cycles: r.folds.iter().map(|f| f.labels.len()).sum(),
                tuned: r.tuned.as_ref(),
                generalized: r.generalized.as_ref(),
                majority: r.majority.as_ref(),
            })
            .collect(),
        skipped_patients: skipped.clone(),
    };
    let mut text = String::new();
    let _ = writeln!(text, "patients_evaluated = {}", reports.len());
    let _ = writeln!(text, "patients_skipped = {}", skipped.len());
    for (name, m) in [("tuned", &summary.tuned), ("generalized", &summary.generalized), ("majority", &summary.majority)]
    {
        match m {
            Some(m) => metrics_text(&format!("{name}."), m, &mut text),
            None => {
                let _ = writeln!(text, "{name}.score = undefined");
            }
        }
    }
    write_output(&dir.join("screening.tsv"), screening.as_bytes())?;
    write_output(&dir.join("loo_folds.tsv"), folds.as_bytes())?;
    write_output(&dir.join("loo_summary.txt"), text.as_bytes())?;
    write_output(&dir.join("loo_summary.json"), json_line(&summary).as_bytes())?;
    for (name, m) in [("tuned", &summary.tuned), ("generalized", &summary.generalized), ("majority", &summary.majority)]
    {
        match m {
            Some(m) => println!("{name}.score = {:.6}", m.score),
            None => println!("{name}.score = undefined"),
        }
    }
    Ok(())
}
