use std::fmt::Write as _;

use lungnet::quantize::{bit_sweep, qmodel_to_bytes, quantize_model};
use lungnet::train::{evaluate_metrics, predict};

use super::{load_model_file, test_set};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::formats::write_output;

pub const SWEEP_HEADER: &str =
    "bits\taccuracy\tse\tsp\tscore\tparams\tpayload_bytes\tquantized_bytes\tfull_precision_bytes\tratio";

pub fn quantize(cfg: &RunConfig) -> CliResult<()> {
    let model = load_model_file(&cfg.model_path(), "train")?;
    let (_, examples) = test_set(cfg)?;
    let q = &cfg.quantize;
    let dir = cfg.output_dir.join("quantize");

    let labels: Vec<_> = examples.iter().map(|e| e.label).collect();
    let full = predict(&model.network, &examples)?;
    let full_acc = full.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
    let full_metrics = evaluate_metrics(&full, &labels)?;

    let sweep = bit_sweep(&model.network, &examples, &q.bits, q.mode, q.eps_zero)?;
    let mut table = format!("{SWEEP_HEADER}\n");
    for p in &sweep {
        let m = &p.memory;
        let _ = writeln!(
            table,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{:.6}",
            p.n_bits,
            p.accuracy,
            p.metrics.se,
            p.metrics.sp,
            p.metrics.score,
            m.params,
            m.payload_bytes,
            m.quantized_bytes,
            m.full_precision_bytes,
            m.ratio
        );
        let (qm, _) = quantize_model(&model.network, p.n_bits, q.mode, q.eps_zero)?;
        write_output(&dir.join(format!("model_{}.qmodel", p.n_bits)), &qmodel_to_bytes(&qm)?)?;
    }
    write_output(&dir.join("sweep.tsv"), table.as_bytes())?;

    let mut bits_sorted: Vec<_> = sweep.iter().collect();
    bits_sorted.sort_by_key(|p| p.n_bits);
    let n_opt = bits_sorted.iter().find(|p| p.accuracy >= full_acc).map(|p| p.n_bits);
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", q.mode);
    let _ = writeln!(s, "full_precision.accuracy = {full_acc:.6}");
    let _ = writeln!(s, "full_precision.score = {:.6}", full_metrics.score);
    let _ = writeln!(s, "n_opt = {}", n_opt.map_or("none".to_string(), |n| n.to_string()));
    write_output(&dir.join("summary.txt"), s.as_bytes())?;
    print!("{s}");
    Ok(())
}
