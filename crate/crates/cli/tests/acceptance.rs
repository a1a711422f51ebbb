//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The optional ICBHI check runs when `LUNGNET_ICBHI_DIR` names the dataset
//! directory, or when `data/ICBHI_final_database` exists under the workspace root.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lungnet::audio::{Label, MelConfig, MelExtractor};
use lungnet::container::stage_bytes;
use lungnet::model::{build_hybrid, count_params, estimate_flops, ModelSpec, ParamFilter};
use lungnet::nn::gradcheck::{check_layer, layer_cases};
use lungnet::nn::{AdamConfig, Network, Stage};
use lungnet::quantize::{
    dequantize_layer, log_quantize_layer, memory_estimate, network_memory, quantize_model, QuantMode,
};
use lungnet::train::{
    evaluate_metrics, examples_from_cycles, predict, split_patients, train_examples, Example, TrainConfig,
};
use lungnet::tuning::{
    fine_tune, group_patients, loo_validate, majority_class_baseline, pooled_metrics, Predictor, TuneConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

#[derive(Default)]
struct Shared {
    /// Reference network after the toy overfit run, reused for the quantization argmax check.
    toy_net: Option<Network>,
}

// ---------------------------------------------------------------- 1

fn gradient_suite(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let cases = layer_cases(2024);
    let mut worst = (0.0f64, String::new());
    for (i, (spec, shape)) in cases.iter().enumerate() {
        let r = match check_layer(spec, shape, 100 + i as u64) {
            Ok(r) => r,
            Err(e) => return Fail(format!("{spec}: {e}")),
        };
        if r.max_err() > worst.0 {
            worst = (r.max_err(), r.label.clone());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        cases.len() >= 20 && worst.0 < 1e-5 && elapsed < Duration::from_secs(60),
        format!("{} shapes, max rel err {:.2e} ({}), {:.1}s", cases.len(), worst.0, worst.1, elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn reference_examples(cycles: &[lungnet::audio::BreathingCycle]) -> Vec<Example> {
    let ext = MelExtractor::new(MelConfig::default()).unwrap();
    examples_from_cycles(cycles, &ext, 128).unwrap()
}

/// Trailing moving average over complete windows.
fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

fn toy_overfit(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let examples = reference_examples(&lungnet::synth::tone_classes(20, 1));
    let mut net = build_hybrid(&ModelSpec::reference(), 1).unwrap().network;
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() },
        seed: 1,
        target_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let report = match train_examples(&mut net, &examples, &cfg) {
        Ok(r) => r,
        Err(e) => return Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let preds = predict(&net, &examples).unwrap();
    let correct = preds.iter().zip(&examples).filter(|(p, e)| **p == e.label).count();
    let smoothed = smooth(&report.loss_curve, 5);
    let monotone = smoothed.windows(2).all(|w| w[1] <= w[0]);
    shared.toy_net = Some(net);
    verdict(
        correct == examples.len() && report.epochs_run <= 200 && monotone && elapsed < Duration::from_secs(300),
        format!(
            "{correct}/{} correct after {} epochs, smoothed loss {} ({:.3} -> {:.3}), {:.1}s",
            examples.len(),
            report.epochs_run,
            if monotone { "monotone" } else { "NOT monotone" },
            report.loss_curve.first().copied().unwrap_or(f64::NAN),
            report.loss_curve.last().copied().unwrap_or(f64::NAN),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

struct OracleMetrics {
    se: f64,
    sp: f64,
    precision: [f64; 4],
    recall: [f64; 4],
    f1: [f64; 4],
}

/// Direct counting over the pairs, no confusion matrix.
fn metrics_oracle(preds: &[usize], labels: &[usize]) -> Option<OracleMetrics> {
    let pairs: Vec<(usize, usize)> = preds.iter().copied().zip(labels.iter().copied()).collect();
    let count = |f: &dyn Fn(usize, usize) -> bool| pairs.iter().filter(|(p, l)| f(*p, *l)).count() as f64;
    let abnormal = count(&|_, l| l != 0);
    let normal = count(&|_, l| l == 0);
    if abnormal == 0.0 || normal == 0.0 {
        return None;
    }
    let se = count(&|p, l| l != 0 && p == l) / abnormal;
    let sp = count(&|p, l| l == 0 && p == 0) / normal;
    let mut precision = [0.0; 4];
    let mut recall = [0.0; 4];
    let mut f1 = [0.0; 4];
    for k in 0..4 {
        let tp = count(&|p, l| p == k && l == k);
        let predicted = count(&|p, _| p == k);
        let actual = count(&|_, l| l == k);
        precision[k] = if predicted > 0.0 { tp / predicted } else { 0.0 };
        recall[k] = if actual > 0.0 { tp / actual } else { 0.0 };
        f1[k] = if precision[k] + recall[k] > 0.0 {
            2.0 * precision[k] * recall[k] / (precision[k] + recall[k])
        } else {
            0.0
        };
    }
    Some(OracleMetrics { se, sp, precision, recall, f1 })
}

fn metrics_oracle_check(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut undefined = 0;
    for set in 0..1000 {
        let n = rng.random_range(1..=120);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let l: Vec<Label> = labels.iter().map(|&i| Label::ALL[i]).collect();
        let p: Vec<Label> = preds.iter().map(|&i| Label::ALL[i]).collect();
        match (evaluate_metrics(&p, &l), metrics_oracle(&preds, &labels)) {
            (Ok(m), Some(o)) => {
                let mut diffs = vec![m.se - o.se, m.sp - o.sp, m.score - (o.se + o.sp) / 2.0];
                for k in 0..4 {
                    diffs.extend([m.precision[k] - o.precision[k], m.recall[k] - o.recall[k], m.f1[k] - o.f1[k]]);
                }
                diffs.push(m.macro_f1 - o.f1.iter().sum::<f64>() / 4.0);
                diffs.push(m.macro_precision - o.precision.iter().sum::<f64>() / 4.0);
                diffs.push(m.macro_recall - o.recall.iter().sum::<f64>() / 4.0);
                worst = diffs.iter().fold(worst, |a, d| a.max(d.abs()));
                if m.n != n {
                    return Fail(format!("set {set}: n {} != {n}", m.n));
                }
            }
            (Err(lungnet::Error::UndefinedMetric(_)), None) => undefined += 1,
            (m, o) => {
                return Fail(format!(
                    "set {set}: evaluate_metrics {:?} vs oracle defined={}",
                    m.map(|m| m.score),
                    o.is_some()
                ))
            }
        }
    }
    // hand case: normal 10 (8 right), crackle 5 (2), wheeze 3 (1), both 2 (1)
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for (class, total, right) in [(0usize, 10, 8), (1, 5, 2), (2, 3, 1), (3, 2, 1)] {
        for i in 0..total {
            labels.push(Label::ALL[class]);
            preds.push(if i < right { Label::ALL[class] } else { Label::ALL[(class + 1) % 4] });
        }
    }
    let hand = evaluate_metrics(&preds, &labels).unwrap();
    let hand_ok = (hand.se - 0.4).abs() <= 1e-12 && (hand.sp - 0.8).abs() <= 1e-12 && (hand.score - 0.6).abs() <= 1e-12;
    verdict(
        worst <= 1e-12 && hand_ok,
        format!(
            "1000 sets ({undefined} undefined, matched), max diff {worst:.1e}; hand case se {:.4} sp {:.4} score {:.4}",
            hand.se, hand.sp, hand.score
        ),
    )
}

// ---------------------------------------------------------------- 4

fn quantization(shared: &mut Shared) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    // (a)
    let w = [0.1, -1.0, 0.01, 0.0];
    let q = log_quantize_layer(&w, 2, 1e-8).unwrap();
    let back = dequantize_layer(&q);
    let exact = back == w;
    ok &= exact;
    notes.push(format!("(a) {}", if exact { "exact" } else { "NOT exact" }));

    // (b)
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ratio = 0.0f64;
    let mut violations = 0;
    for _ in 0..10_000 {
        let n_bits = rng.random_range(2..=12u32);
        let len = rng.random_range(1..=64);
        let ws: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    let mag = 10f64.powf(rng.random_range(-6.0..1.0));
                    if rng.random_bool(0.5) {
                        -mag
                    } else {
                        mag
                    }
                }
            })
            .collect();
        let q = log_quantize_layer(&ws, n_bits, 1e-8).unwrap();
        let half = (q.log_max - q.log_min) / ((1u64 << n_bits) - 2) as f64 / 2.0;
        for (a, b) in ws.iter().zip(dequantize_layer(&q)) {
            if *a == 0.0 {
                violations += usize::from(b != 0.0);
                continue;
            }
            let err = (a.abs().log10() - b.abs().log10()).abs();
            if a.signum() != b.signum() || err > half + 1e-12 {
                violations += 1;
            }
            if half > 0.0 {
                worst_ratio = worst_ratio.max(err / half);
            }
        }
    }
    ok &= violations == 0;
    notes.push(format!("(b) 10^4 layers, {violations} violations, worst err {worst_ratio:.4} half-steps"));

    // (c)
    let mut worst_dev = 0.0f64;
    for p in [100_000usize, 250_000, 1_000_000, 10_000_000] {
        let m = memory_estimate(&[("w".to_string(), vec![vec![p]])], 7);
        let dev = (m.ratio - 4.0).abs() / 4.0;
        let overhead = m.overhead_bytes as f64 / m.quantized_bytes as f64;
        worst_dev = worst_dev.max(dev).max(overhead);
    }
    ok &= worst_dev < 1e-3;
    let reference = build_hybrid(&ModelSpec::reference(), 0).unwrap().network;
    let rm = network_memory(&reference, 7);
    notes.push(format!(
        "(c) ratio within {:.4}% of 4x for P >= 1e5 (reference model: P {} ratio {:.4})",
        worst_dev * 100.0,
        rm.params,
        rm.ratio
    ));

    // (d)
    let Some(net) = shared.toy_net.as_ref() else {
        return Fail("toy network unavailable for (d)".into());
    };
    let batch = reference_examples(&lungnet::synth::tone_classes(64, 99));
    let full = predict(net, &batch).unwrap();
    let mut mismatches = 0;
    for n_bits in [24u32, 28, 31] {
        for mode in [QuantMode::Local, QuantMode::Global] {
            let (_, deq) = quantize_model(net, n_bits, mode, 1e-8).unwrap();
            mismatches += predict(&deq, &batch).unwrap().iter().zip(&full).filter(|(a, b)| a != b).count();
        }
    }
    ok &= mismatches == 0 && batch.len() == 256;
    notes
        .push(format!("(d) {} samples, N in {{24,28,31}} x local/global, {mismatches} argmax mismatches", batch.len()));
    verdict(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 5

const POPULATION_SPEC: &str = "conv=8:3x3:2x2,16:3x3:2x2 hidden=16 fc=16 input=40x32";

fn patient_tuning(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let spec: ModelSpec = POPULATION_SPEC.parse().unwrap();
    let ext = MelExtractor::new(MelConfig::default()).unwrap();
    let mut gaps = Vec::new();
    let mut frozen_changed = 0;
    let mut fine_tunes = 0;
    for seed in 0..10u64 {
        let train_cycles = lungnet::synth::shifted_population(8, 3, 6, 0.45, "", 1000 + seed);
        let test_cycles = lungnet::synth::shifted_population(8, 3, 6, 0.45, "t", 2000 + seed);
        let train = examples_from_cycles(&train_cycles, &ext, 32).unwrap();
        let test = examples_from_cycles(&test_cycles, &ext, 32).unwrap();
        let mut model = build_hybrid(&spec, seed).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            seed,
            ..TrainConfig::default()
        };
        if let Err(e) = train_examples(&mut model.network, &train, &cfg) {
            return Fail(format!("seed {seed}: {e}"));
        }
        let tcfg = TuneConfig { epochs: 40, batch_size: 16, lr: 3e-3, seed, ..TuneConfig::default() };
        let patients = group_patients(&test);
        let reports: Vec<_> = patients.iter().filter_map(|p| loo_validate(&model.network, p, &tcfg).unwrap()).collect();
        let tuned = pooled_metrics(&reports, Predictor::Tuned).unwrap().score;
        let generalized = pooled_metrics(&reports, Predictor::Generalized).unwrap().score;
        gaps.push(tuned - generalized);

        let frozen = [Stage::Features, Stage::Temporal];
        let before = stage_bytes(&model.network, &frozen);
        for p in &patients {
            let (tuned_net, _) = fine_tune(&model.network, &p.examples, &tcfg).unwrap();
            fine_tunes += 1;
            frozen_changed += usize::from(stage_bytes(&tuned_net, &frozen) != before);
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;

    let reference = build_hybrid(&ModelSpec::reference(), 0).unwrap().network;
    let toy = reference_examples(&lungnet::synth::tone_classes(2, 5));
    let (tuned_ref, _) = fine_tune(&reference, &toy, &TuneConfig { epochs: 1, ..TuneConfig::default() }).unwrap();
    let fraction =
        count_params(&tuned_ref, ParamFilter::Trainable) as f64 / count_params(&tuned_ref, ParamFilter::All) as f64;

    verdict(
        mean_gap >= 0.02 && frozen_changed == 0 && (0.01..=0.02).contains(&fraction),
        format!(
            "mean LOO score gap {:+.2} pp over 10 seeds (min {:+.2}, max {:+.2}); stage 1-2 bytes changed in {frozen_changed}/{fine_tunes} fine-tunes; tuned fraction {:.2}%; {:.1}s",
            mean_gap * 100.0,
            gaps.iter().cloned().fold(f64::INFINITY, f64::min) * 100.0,
            gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * 100.0,
            fraction * 100.0,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn majority_baseline(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ties, mut checked) = (0, 0);
    for i in 0..1000 {
        let counts: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..5));
        let got = majority_class_baseline(&counts);
        let max = *counts.iter().max().unwrap();
        if max == 0 {
            if got.is_ok() {
                return Fail(format!("vector {i}: all-zero counts accepted"));
            }
            continue;
        }
        ties += usize::from(counts.iter().filter(|&&c| c == max).count() > 1);
        let winner = counts.iter().position(|&c| c == max).unwrap();
        let expect: [f64; 4] = std::array::from_fn(|k| if k == winner { 1.0 } else { 0.0 });
        if got.as_ref().ok() != Some(&expect) {
            return Fail(format!("vector {i} {counts:?}: got {got:?}, expected {expect:?}"));
        }
        checked += 1;
    }
    verdict(ties > 0, format!("{checked} vectors matched the argmax oracle, {ties} with ties"))
}

// ---------------------------------------------------------------- 7

fn closed_form_counts(_: &mut Shared) -> Verdict {
    let spec = ModelSpec::reference();
    let net = build_hybrid(&spec, 0).unwrap().network;
    // valid 3x3 convolutions, ceil-mode 2x2 pooling
    let conv = |d: u64| d - 2;
    let pool = |d: u64| d.div_ceil(2);
    let (mut h, mut w, mut c) = (40u64, 128u64, 1u64);
    let mut params = 2; // input batchnorm scale and shift
    let mut flops = 4 * h * w;
    for f in [16u64, 32, 64] {
        let (oh, ow) = (conv(h), conv(w));
        params += f * c * 9 + f;
        flops += 2 * 9 * c * f * oh * ow + f * oh * ow;
        let (ph, pw) = (pool(oh), pool(ow));
        flops += f * ph * pw;
        (h, w, c) = (ph, pw, f);
    }
    let (steps, features, hidden) = (w, c * h, 64u64);
    let lstm_dir = 4 * hidden * (features + hidden + 1);
    params += 2 * lstm_dir;
    flops += 2 * 2 * 4 * (features * hidden + hidden * hidden) * steps;
    let (fc, classes) = (20u64, 4u64);
    params += 2 * hidden * fc + fc + fc * classes + classes;
    flops += 2 * 2 * hidden * fc + fc + 2 * fc * classes + classes;

    let got_params = count_params(&net, ParamFilter::All) as u64;
    let got_flops = estimate_flops(&net, &[1, 40, 128]).unwrap();
    let head = count_params(&net, ParamFilter::Stage(Stage::Classifier)) as u64;
    let head_expect = 2 * hidden * fc + fc + fc * classes + classes;
    verdict(
        got_params == params && got_flops == flops && head == head_expect,
        format!("params {got_params} (closed form {params}), classifier {head} ({head_expect}), FLOPs {got_flops} ({flops})"),
    )
}

// ---------------------------------------------------------------- 8

fn workspace_root() -> PathBuf {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    crate_dir.ancestors().nth(2).unwrap_or(crate_dir).to_path_buf()
}

fn lungnet_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lungnet")).args(args).output().expect("lungnet binary runs")
}

fn write_config(path: &Path, dataset: &Path, extra: &str) {
    let text = format!("dataset_root = {:?}\noutput_dir = \"out\"\n{extra}", dataset.display().to_string());
    std::fs::write(path, text).unwrap();
}

fn icbhi(_: &mut Shared) -> Verdict {
    let dir = std::env::var_os("LUNGNET_ICBHI_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/ICBHI_final_database"));
    if !dir.is_dir() {
        return Skip(format!("no ICBHI data at {}", dir.display()));
    }
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    write_config(&config, &dir, "");
    let out = lungnet_bin(&["prepare", "--config", config.to_str().unwrap()]);
    if !out.status.success() {
        return Fail(format!("prepare failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let summary = std::fs::read_to_string(tmp.path().join("out/prepare_summary.txt")).unwrap();
    let kv: BTreeMap<&str, &str> = summary.lines().filter_map(|l| l.split_once(" = ")).collect();
    let expect = [
        ("recordings", "920"),
        ("cycles", "6898"),
        ("cycles.crackle", "1864"),
        ("cycles.wheeze", "886"),
        ("cycles.both", "506"),
    ];
    let counts_ok = expect.iter().all(|(k, v)| kv.get(k) == Some(v));
    let ds = lungnet::dataset::prepare_dataset(&dir).unwrap();
    let plan = split_patients(&ds.cycles, 0.8, 0).unwrap();
    let split = (plan.train_patients.len(), plan.test_patients.len());
    verdict(
        counts_ok && split == (101, 25),
        format!("{}; split {}/{}", summary.trim().replace('\n', ", "), split.0, split.1),
    )
}

// ---------------------------------------------------------------- 9

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_everything(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let data = root.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let cycles = lungnet::synth::shifted_population(6, 2, 6, 0.3, "", 77);
    lungnet::synth::write_dataset(&data, &cycles).unwrap();
    let config = root.join("run.toml");
    write_config(
        &config,
        Path::new("data"),
        "[split]\nfrac = 0.5\nseed = 5\n[model]\nspec = \"conv=4:3x3:2x2,8:3x3:2x2 hidden=6 fc=8 input=16x32\"\nseed = 5\n\
         [train]\nepochs = 3\nbatch_size = 8\naugment_multiplier = 2\nbalance_classes = true\nseed = 5\n[tune]\nepochs = 4\nseed = 5\n[quantize]\nbits = [3, 8]\n",
    );
    let cfg = config.to_str().unwrap();
    let oracle = root.join("oracle.tsv");
    std::fs::write(&oracle, "label\tpredicted\nnormal\tnormal\nwheeze\tcrackle\n").unwrap();
    let qmodel = root.join("out/quantize/model_8.qmodel");
    let runs: Vec<Vec<&str>> = vec![
        vec!["prepare"],
        vec!["train"],
        vec!["eval"],
        vec!["tune"],
        vec!["quantize"],
        vec!["eval", "--model", qmodel.to_str().unwrap()],
        vec!["eval", "--predictions", oracle.to_str().unwrap()],
        vec!["report"],
    ];
    for args in runs {
        let mut full = args.clone();
        full.extend(["--config", cfg]);
        let out = lungnet_bin(&full);
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(snapshot(&root.join("out")))
}

fn determinism(_: &mut Shared) -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = match (run_everything(a.path()), run_everything(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Fail(e),
    };
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .chain(second.keys().filter(|k| !first.contains_key(*k)).map(|k| k.display().to_string()))
        .collect();
    verdict(
        differing.is_empty() && first.len() > 20,
        format!(
            "{} artifacts from 8 commands compared across two runs, {} differ {:?}",
            first.len(),
            differing.len(),
            differing
        ),
    )
}

type Criterion = fn(&mut Shared) -> Verdict;

fn main() {
    let criteria: [(u32, &str, Criterion); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "toy overfit", toy_overfit),
        (3, "metrics oracle", metrics_oracle_check),
        (4, "quantization", quantization),
        (5, "patient tuning", patient_tuning),
        (6, "majority baseline", majority_baseline),
        (7, "parameter and FLOP counts", closed_form_counts),
        (8, "ICBHI integration", icbhi),
        (9, "determinism", determinism),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (n, name, run) in criteria {
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut shared))).unwrap_or_else(|p| {
            Fail(format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ))
        });
        let (tag, detail) = match result {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} ({name}): {tag} - {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
