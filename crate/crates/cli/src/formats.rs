//! Text artifacts written by the commands. Every writer is deterministic: fixed
//! column order, sorted rows, no timestamps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use lungnet::audio::Label;
use lungnet::train::{MetricsReport, SplitPlan};

use crate::error::{CliError, CliResult};

pub fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    lungnet::container::write_atomic(path, bytes)?;
    Ok(())
}

pub fn read_text(path: &Path, what: &'static str, producer: &'static str) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::Missing { what, path: path.to_path_buf(), producer });
    }
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// `key = value` lines, one metric per line; `prefix` namespaces the keys.
pub fn metrics_text(prefix: &str, m: &MetricsReport, out: &mut String) {
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{prefix}{k} = {v}");
    };
    kv("n", m.n.to_string());
    kv("se", format!("{:.6}", m.se));
    kv("sp", format!("{:.6}", m.sp));
    kv("score", format!("{:.6}", m.score));
    kv("macro_precision", format!("{:.6}", m.macro_precision));
    kv("macro_recall", format!("{:.6}", m.macro_recall));
    kv("macro_f1", format!("{:.6}", m.macro_f1));
    for l in Label::ALL {
        kv(&format!("precision.{l}"), format!("{:.6}", m.precision[l.index()]));
        kv(&format!("recall.{l}"), format!("{:.6}", m.recall[l.index()]));
        kv(&format!("f1.{l}"), format!("{:.6}", m.f1[l.index()]));
    }
    for t in Label::ALL {
        for p in Label::ALL {
            kv(&format!("confusion.{t}.{p}"), m.confusion[t.index()][p.index()].to_string());
        }
    }
}

/// Single-line JSON, newline terminated.
pub fn json_line<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_metrics(dir: &Path, m: &MetricsReport) -> CliResult<()> {
    let mut text = String::new();
    metrics_text("", m, &mut text);
    write_output(&dir.join("metrics.txt"), text.as_bytes())?;
    write_output(&dir.join("metrics.json"), json_line(m).as_bytes())
}

pub const PREDICTIONS_HEADER: &str =
    "patient_id\trecording_id\tcycle\tlabel\tpredicted\tp_normal\tp_crackle\tp_wheeze\tp_both";

pub struct PredictionRow<'a> {
    pub patient_id: &'a str,
    pub recording_id: &'a str,
    pub cycle: usize,
    pub label: Label,
    pub proba: [f64; Label::COUNT],
    pub predicted: Label,
}

pub fn predictions_text(rows: &[PredictionRow]) -> String {
    let mut s = format!("{PREDICTIONS_HEADER}\n");
    for r in rows {
        let p = r.proba;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.patient_id, r.recording_id, r.cycle, r.label, r.predicted, p[0], p[1], p[2], p[3]
        );
    }
    s
}

/// Reads `(label, predicted)` pairs from a TSV with a header naming both columns.
pub fn parse_predictions(text: &str, path: &Path) -> CliResult<(Vec<Label>, Vec<Label>)> {
    let bad = |line: usize, msg: String| {
        CliError::Core(lungnet::Error::Format { path: path.to_path_buf(), reason: format!("line {line}: {msg}") })
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(1, format!("no `{name}` column")));
    let (li, pi) = (col("label")?, col("predicted")?);
    let (mut labels, mut preds) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let get = |j: usize| -> CliResult<Label> {
            let v = f.get(j).ok_or_else(|| bad(i + 2, format!("expected at least {} fields", j + 1)))?;
            v.parse().map_err(|_| bad(i + 2, format!("unknown label `{v}`")))
        };
        labels.push(get(li)?);
        preds.push(get(pi)?);
    }
    Ok((labels, preds))
}

pub fn split_text(plan: &SplitPlan) -> String {
    let mut s = String::from("patient_id\tset\n");
    for p in &plan.train_patients {
        let _ = writeln!(s, "{p}\ttrain");
    }
    for p in &plan.test_patients {
        let _ = writeln!(s, "{p}\ttest");
    }
    s
}

pub fn parse_split(text: &str, path: &Path, seed: u64) -> CliResult<SplitPlan> {
    let (mut train, mut test) = (BTreeSet::new(), BTreeSet::new());
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        match line.split_once('\t') {
            Some((p, "train")) => train.insert(p.to_string()),
            Some((p, "test")) => test.insert(p.to_string()),
            _ => {
                return Err(CliError::Core(lungnet::Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: expected `patient_id<TAB>train|test`", i + 1),
                }))
            }
        };
    }
    Ok(SplitPlan { train_patients: train, test_patients: test, seed })
}
