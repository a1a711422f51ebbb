//! Patient-wise splitting, the training loop, and evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::{fix_width, BreathingCycle, Label, MelExtractor};
use crate::augment::{augment_dataset, derive_seed, AugmentConfig, BalancePolicy};
use crate::error::{Error, Result};
use crate::model::{build_hybrid, ModelSpec};
use crate::nn::{cross_entropy_with_labels, Adam, AdamConfig, Mode, Network, Tensor};

/// A fixed-width log-Mel image with its label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Row-major `[n_mels, frames]`.
    pub features: Vec<f64>,
    pub n_mels: usize,
    pub frames: usize,
    pub label: Label,
    pub patient_id: String,
    pub recording_id: String,
}

impl Example {
    pub fn shape(&self) -> [usize; 3] {
        [1, self.n_mels, self.frames]
    }
}

pub fn example_from_cycle(cycle: &BreathingCycle, extractor: &MelExtractor, width: usize) -> Result<Example> {
    let spec = fix_width(&extractor.extract(&cycle.samples)?, width)?;
    Ok(Example {
        n_mels: spec.n_mels,
        frames: spec.frames,
        features: spec.values,
        label: cycle.label,
        patient_id: cycle.patient_id.clone(),
        recording_id: cycle.recording_id.clone(),
    })
}

pub fn examples_from_cycles(cycles: &[BreathingCycle], extractor: &MelExtractor, width: usize) -> Result<Vec<Example>> {
    crate::par::map_slice(cycles, |c| example_from_cycle(c, extractor, width)).into_iter().collect()
}

pub fn label_counts<'a>(labels: impl IntoIterator<Item = &'a Label>) -> [usize; Label::COUNT] {
    let mut c = [0; Label::COUNT];
    for l in labels {
        c[l.index()] += 1;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn partition<'a, T: HasPatient>(&self, items: &'a [T]) -> (Vec<&'a T>, Vec<&'a T>) {
        items.iter().partition(|i| self.train_patients.contains(i.patient_id()))
    }
}

pub trait HasPatient {
    fn patient_id(&self) -> &str;
    fn label(&self) -> Label;
}

impl HasPatient for BreathingCycle {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }
    fn label(&self) -> Label {
        self.label
    }
}

impl HasPatient for Example {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }
    fn label(&self) -> Label {
        self.label
    }
}

/// Patients grouped by health status: `(healthy, unhealthy)`, each sorted.
/// A patient counts as unhealthy when any of their cycles is abnormal.
pub fn patients_by_status<T: HasPatient>(items: &[T]) -> (Vec<String>, Vec<String>) {
    let mut status: BTreeMap<&str, bool> = BTreeMap::new();
    for i in items {
        *status.entry(i.patient_id()).or_default() |= i.label().is_abnormal();
    }
    let (sick, well): (Vec<_>, Vec<_>) = status.into_iter().partition(|(_, s)| *s);
    (well.into_iter().map(|(p, _)| p.to_string()).collect(), sick.into_iter().map(|(p, _)| p.to_string()).collect())
}

/// Splits patients `train_frac : 1 - train_frac`, stratified by health status.
pub fn split_patients<T: HasPatient>(items: &[T], train_frac: f64, seed: u64) -> Result<SplitPlan> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Argument(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let (mut well, mut sick) = patients_by_status(items);
    let n = well.len() + sick.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 patients to split, found {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    well.shuffle(&mut rng);
    sick.shuffle(&mut rng);
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    // largest-remainder allocation of the training quota across the two groups
    let groups = [&well, &sick];
    let exact: Vec<f64> = groups.iter().map(|g| n_train as f64 * g.len() as f64 / n as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n_train - take.iter().sum::<usize>();
    for &g in order.iter().cycle().take(4) {
        if left > 0 && take[g] < groups[g].len() {
            take[g] += 1;
            left -= 1;
        }
    }
    let mut train_patients = BTreeSet::new();
    let mut test_patients = BTreeSet::new();
    for (g, group) in groups.iter().enumerate() {
        train_patients.extend(group[..take[g]].iter().cloned());
        test_patients.extend(group[take[g]..].iter().cloned());
    }
    Ok(SplitPlan { train_patients, test_patients, seed })
}

/// Inverse-frequency weights `total / (4 * count)`.
pub fn class_weights(counts: &[usize; Label::COUNT]) -> Result<[f64; Label::COUNT]> {
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Configuration(format!(
            "class `{}` has no training cycles; enable augmentation or oversampling to cover it",
            Label::ALL[c]
        )));
    }
    let total: usize = counts.iter().sum();
    Ok(std::array::from_fn(|i| total as f64 / (Label::COUNT * counts[i]) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment_multiplier: usize,
    pub balance_classes: bool,
    /// Computed from the training labels when absent.
    pub class_weights: Option<[f64; Label::COUNT]>,
    /// Stop once training accuracy (inference mode) reaches this value.
    pub target_accuracy: Option<f64>,
    /// Any batch containing one of these patients aborts training.
    pub forbidden_patients: BTreeSet<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            augment_multiplier: 1,
            balance_classes: false,
            class_weights: None,
            target_accuracy: None,
            forbidden_patients: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean weighted loss per completed epoch.
    pub loss_curve: Vec<f64>,
    /// Inference-mode training accuracy per epoch, when early stopping is enabled.
    pub accuracy_curve: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Training samples viewed as flat vectors of one per-sample shape.
pub(crate) struct Batchable<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub patients: Vec<&'a str>,
}

impl Batchable<'_> {
    fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let per: usize = self.shape.iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(self.inputs[i]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.shape);
        Tensor::new(shape, data)
    }
}

pub(crate) fn accuracy_on(net: &Network, range: Range<usize>, data: &Batchable<'_>, batch: usize) -> Result<f64> {
    let n = data.inputs.len();
    let chunks: Vec<Range<usize>> = (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect();
    let hits = crate::par::map_slice(&chunks, |r| -> Result<usize> {
        let idx: Vec<usize> = r.clone().collect();
        let out = net.infer_range(range.clone(), &data.batch(&idx)?)?;
        Ok(out.argmax_rows().iter().zip(&idx).filter(|(p, &i)| **p == data.labels[i]).count())
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / n as f64)
}

/// Mini-batch Adam over layers `range` of `net`, which must end at the logits.
pub(crate) fn fit(
    net: &mut Network,
    range: Range<usize>,
    data: &Batchable<'_>,
    cfg: &TrainConfig,
    weights: &[f64; Label::COUNT],
) -> Result<TrainReport> {
    let n = data.inputs.len();
    if n == 0 {
        return Err(Error::Input("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut adam = Adam::new(cfg.adam);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if let Some(&i) = idx.iter().find(|&&i| cfg.forbidden_patients.contains(data.patients[i])) {
                return Err(Error::Leakage { batch: b, patient: data.patients[i].to_string() });
            }
            let x = data.batch(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            net.zero_grad();
            let logits = net.forward_range(range.clone(), &x, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = cross_entropy_with_labels(&logits, &labels, weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, batch {b} (lr {}, batch size {})",
                    cfg.adam.lr, cfg.batch_size
                )));
            }
            net.backward_range(range.clone(), &grad)?;
            adam.step(net).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at epoch {epoch}, batch {b} (lr {})", cfg.adam.lr)),
                other => other,
            })?;
            loss_sum += loss * idx.len() as f64;
        }
        report.loss_curve.push(loss_sum / n as f64);
        report.epochs_run = epoch + 1;
        log::debug!("epoch {} loss {:.6}", epoch + 1, loss_sum / n as f64);
        if let Some(target) = cfg.target_accuracy {
            let acc = accuracy_on(net, range.clone(), data, cfg.batch_size)?;
            report.accuracy_curve.push(acc);
            if acc >= target {
                report.stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    net.zero_grad();
    Ok(report)
}

/// Trains the full network on precomputed examples.
pub fn train_examples(net: &mut Network, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    let first = examples.first().ok_or_else(|| Error::Input("training set is empty".into()))?;
    let shape = first.shape();
    if let Some(e) = examples.iter().find(|e| e.shape() != shape) {
        return Err(Error::Dimension(format!(
            "example from `{}` has shape {:?}, expected {shape:?}",
            e.recording_id,
            e.shape()
        )));
    }
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => class_weights(&label_counts(examples.iter().map(|e| &e.label)))?,
    };
    let data = Batchable {
        inputs: examples.iter().map(|e| e.features.as_slice()).collect(),
        shape: shape.to_vec(),
        labels: examples.iter().map(|e| e.label.index()).collect(),
        patients: examples.iter().map(|e| e.patient_id.as_str()).collect(),
    };
    let end = net.logits_end();
    fit(net, 0..end, &data, cfg, &weights)
}

/// Augments raw cycles, extracts features and trains.
pub fn train(
    net: &mut Network,
    cycles: &[BreathingCycle],
    extractor: &MelExtractor,
    width: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let policy = cfg.balance_classes.then(|| BalancePolicy::to_largest(cycles));
    let augmented =
        augment_dataset(cycles, cfg.augment_multiplier.max(1), policy.as_ref(), &AugmentConfig::default(), cfg.seed)?;
    let examples = examples_from_cycles(&augmented, extractor, width)?;
    train_examples(net, &examples, cfg)
}

/// Class probabilities for each example, in input order.
pub fn predict_proba(net: &Network, examples: &[Example]) -> Result<Vec<[f64; Label::COUNT]>> {
    const CHUNK: usize = 32;
    let chunks: Vec<&[Example]> = examples.chunks(CHUNK).collect();
    let parts = crate::par::map_slice(&chunks, |chunk| -> Result<Vec<[f64; Label::COUNT]>> {
        let x = Tensor::stack(
            &chunk.iter().map(|e| Tensor::new(e.shape().to_vec(), e.features.clone())).collect::<Result<Vec<_>>>()?,
        )?;
        let y = net.infer(&x)?;
        if y.shape()[1] != Label::COUNT {
            return Err(Error::Dimension(format!("network emits {} classes", y.shape()[1])));
        }
        Ok(y.data().chunks(Label::COUNT).map(|r| std::array::from_fn(|k| r[k])).collect())
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn argmax_label(p: &[f64; Label::COUNT]) -> Label {
    let mut best = 0;
    for k in 1..Label::COUNT {
        if p[k] > p[best] {
            best = k;
        }
    }
    Label::ALL[best]
}

pub fn predict(net: &Network, examples: &[Example]) -> Result<Vec<Label>> {
    Ok(predict_proba(net, examples)?.iter().map(argmax_label).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub se: f64,
    pub sp: f64,
    pub score: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub precision: [f64; Label::COUNT],
    pub recall: [f64; Label::COUNT],
    pub f1: [f64; Label::COUNT],
    /// `confusion[true][predicted]`
    pub confusion: [[usize; Label::COUNT]; Label::COUNT],
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[usize; Label::COUNT]; Label::COUNT]) -> Result<Self> {
        let row = |i: usize| confusion[i].iter().sum::<usize>();
        let col = |j: usize| (0..Label::COUNT).map(|i| confusion[i][j]).sum::<usize>();
        let n_normal = row(0);
        let n_abnormal: usize = (1..Label::COUNT).map(row).sum();
        if n_normal == 0 {
            return Err(Error::UndefinedMetric("specificity needs at least one normal cycle".into()));
        }
        if n_abnormal == 0 {
            return Err(Error::UndefinedMetric("sensitivity needs at least one abnormal cycle".into()));
        }
        let se = (1..Label::COUNT).map(|k| confusion[k][k]).sum::<usize>() as f64 / n_abnormal as f64;
        let sp = confusion[0][0] as f64 / n_normal as f64;
        let precision: [f64; Label::COUNT] = std::array::from_fn(|k| ratio(confusion[k][k], col(k)));
        let recall: [f64; Label::COUNT] = std::array::from_fn(|k| ratio(confusion[k][k], row(k)));
        let f1: [f64; Label::COUNT] = std::array::from_fn(|k| {
            let s = precision[k] + recall[k];
            if s == 0.0 {
                0.0
            } else {
                2.0 * precision[k] * recall[k] / s
            }
        });
        let mean = |v: &[f64; Label::COUNT]| v.iter().sum::<f64>() / Label::COUNT as f64;
        Ok(Self {
            se,
            sp,
            score: (se + sp) / 2.0,
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            precision,
            recall,
            f1,
            confusion,
            n: n_normal + n_abnormal,
        })
    }
}

pub fn confusion_matrix(predictions: &[Label], labels: &[Label]) -> Result<[[usize; Label::COUNT]; Label::COUNT]> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut c = [[0; Label::COUNT]; Label::COUNT];
    for (p, l) in predictions.iter().zip(labels) {
        c[l.index()][p.index()] += 1;
    }
    Ok(c)
}

pub fn evaluate_metrics(predictions: &[Label], labels: &[Label]) -> Result<MetricsReport> {
    MetricsReport::from_confusion(confusion_matrix(predictions, labels)?)
}

/// Deals patients into `k` folds, stratified by health status.
pub fn fold_partition<T: HasPatient>(items: &[T], k: usize, seed: u64) -> Result<Vec<BTreeSet<String>>> {
    let (mut well, mut sick) = patients_by_status(items);
    let n = well.len() + sick.len();
    if k < 2 || k > n {
        return Err(Error::Argument(format!("cannot make {k} folds from {n} patients")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sick.shuffle(&mut rng);
    well.shuffle(&mut rng);
    let mut folds = vec![BTreeSet::new(); k];
    for (i, p) in sick.into_iter().chain(well).enumerate() {
        folds[i % k].insert(p);
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub fold_patients: Vec<BTreeSet<String>>,
    /// `None` where a fold's test set leaves a metric undefined.
    pub folds: Vec<Option<MetricsReport>>,
    pub mean_score: Option<f64>,
}

/// Patient-level k-fold cross-validation; each fold trains a fresh model.
pub fn kfold_cv(spec: &ModelSpec, examples: &[Example], k: usize, cfg: &TrainConfig) -> Result<CvReport> {
    let fold_patients = fold_partition(examples, k, cfg.seed)?;
    let results = crate::par::map_range(k, |f| -> Result<Option<MetricsReport>> {
        let test_set = &fold_patients[f];
        let (test, train): (Vec<Example>, Vec<Example>) =
            examples.iter().cloned().partition(|e| test_set.contains(&e.patient_id));
        let mut model = build_hybrid(spec, derive_seed(cfg.seed, 100 + f as u64))?;
        let fold_cfg = TrainConfig { forbidden_patients: test_set.clone(), ..cfg.clone() };
        train_examples(&mut model.network, &train, &fold_cfg)?;
        let preds = predict(&model.network, &test)?;
        let labels: Vec<Label> = test.iter().map(|e| e.label).collect();
        match evaluate_metrics(&preds, &labels) {
            Ok(m) => Ok(Some(m)),
            Err(Error::UndefinedMetric(why)) => {
                log::warn!("fold {}: {why}", f + 1);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    });
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = folds.iter().flatten().map(|m| m.score).collect();
    let mean_score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    Ok(CvReport { fold_patients, folds, mean_score })
}
