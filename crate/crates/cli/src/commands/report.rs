use std::fmt::Write as _;

use lungnet::audio::{variability_report, Quartiles};

use super::{load_cycles, manifest_rows};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::write_output;

fn box_row(out: &mut String, feature: &str, scope: &str, n: usize, q: Option<Quartiles>) {
    match q {
        Some(q) => {
            let _ = writeln!(
                out,
                "{feature}\t{scope}\t{n}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                q.min, q.q1, q.median, q.q3, q.max
            );
        }
        None => {
            let _ = writeln!(out, "{feature}\t{scope}\t0\t-\t-\t-\t-\t-");
        }
    }
}

pub fn report(cfg: &RunConfig) -> CliResult<()> {
    let rows = manifest_rows(cfg)?;
    if rows.is_empty() {
        return Err(CliError::Usage("manifest has no cycles to report on".into()));
    }
    let cycles = load_cycles(cfg, &rows)?;
    let v = variability_report(&cycles)?;
    let dir = cfg.output_dir.join("report");

    let mut boxes = String::from("feature\tscope\tn\tmin\tq1\tmedian\tq3\tmax\n");
    let mut points = String::from("feature\tscope\tvalue\n");
    for f in &v.features {
        box_row(&mut boxes, f.feature, "intra", f.intra.len(), f.intra_summary);
        box_row(&mut boxes, f.feature, "inter", f.inter.len(), f.inter_summary);
        for (scope, vals) in [("intra", &f.intra), ("inter", &f.inter)] {
            for x in vals.iter() {
                let _ = writeln!(points, "{}\t{scope}\t{x:.6}", f.feature);
            }
        }
    }
    write_output(&dir.join("variability_box.tsv"), boxes.as_bytes())?;
    write_output(&dir.join("variability_points.tsv"), points.as_bytes())?;

    let sweep = cfg.output_dir.join("quantize").join("sweep.tsv");
    if sweep.exists() {
        let text = std::fs::read_to_string(&sweep).map_err(|source| CliError::Io { path: sweep.clone(), source })?;
        let mut curve = String::from("bits\taccuracy\tscore\tratio\n");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() >= 10 {
                let _ = writeln!(curve, "{}\t{}\t{}\t{}", f[0], f[1], f[4], f[9]);
            }
        }
        write_output(&dir.join("sweep_curve.tsv"), curve.as_bytes())?;
    } else {
        log::warn!("no bit sweep at {}; run `lungnet quantize` for the sweep curve", sweep.display());
    }
    println!("patients = {}\ncycles = {}", v.n_patients, v.n_cycles);
    Ok(())
}
