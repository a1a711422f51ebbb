//! Screening patients and specialising the classifier stage to one patient.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Label;
use crate::augment::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Layer, Network, Stage, Tensor};
use crate::train::{
    argmax_label, evaluate_metrics, fit, label_counts, predict, Batchable, Example, MetricsReport, TrainConfig,
    TrainReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub recordings: Vec<String>,
    pub examples: Vec<Example>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let patient_id = patient_id.into();
        if let Some(e) = examples.iter().find(|e| e.patient_id != patient_id) {
            return Err(Error::Input(format!("cycle of patient `{}` filed under `{patient_id}`", e.patient_id)));
        }
        let recordings: BTreeSet<String> = examples.iter().map(|e| e.recording_id.clone()).collect();
        Ok(Self { patient_id, recordings: recordings.into_iter().collect(), examples })
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Groups examples by patient, ordered by patient id.
pub fn group_patients(examples: &[Example]) -> Vec<PatientRecord> {
    let mut map: std::collections::BTreeMap<&str, Vec<Example>> = Default::default();
    for e in examples {
        map.entry(&e.patient_id).or_default().push(e.clone());
    }
    map.into_iter().map(|(p, ex)| PatientRecord::new(p, ex).expect("grouped by id")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Healthy,
    Unhealthy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub patient_id: String,
    pub abnormal_fraction: f64,
    pub verdict: Verdict,
    pub threshold: f64,
}

pub fn screen_predictions(patient_id: &str, predictions: &[Label], threshold: f64) -> Result<ScreeningResult> {
    if predictions.is_empty() {
        return Err(Error::Input(format!("patient `{patient_id}` has no cycles to screen")));
    }
    let abnormal_fraction = predictions.iter().filter(|l| l.is_abnormal()).count() as f64 / predictions.len() as f64;
    let verdict = if abnormal_fraction >= threshold { Verdict::Unhealthy } else { Verdict::Healthy };
    Ok(ScreeningResult { patient_id: patient_id.to_string(), abnormal_fraction, verdict, threshold })
}

pub fn screen_patient(net: &Network, patient: &PatientRecord, threshold: f64) -> Result<ScreeningResult> {
    if patient.examples.is_empty() {
        return Err(Error::Input(format!("patient `{}` has no cycles to screen", patient.patient_id)));
    }
    screen_predictions(&patient.patient_id, &predict(net, &patient.examples)?, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Keep the pre-trained classifier weights instead of re-initialising them.
    pub warm_start: bool,
    pub screening_threshold: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, lr: 1e-4, seed: 0, warm_start: true, screening_threshold: 0.25 }
    }
}

/// Class weights from one patient's labels; classes the patient lacks get weight 1.
pub fn patient_class_weights(labels: &[Label]) -> [f64; Label::COUNT] {
    let counts = label_counts(labels);
    let total = labels.len() as f64;
    std::array::from_fn(|k| if counts[k] == 0 { 1.0 } else { total / (Label::COUNT * counts[k]) as f64 })
}

fn classifier_range(net: &Network) -> Range<usize> {
    net.stage_range(Stage::Classifier).start..net.logits_end()
}

/// Runs stages 1-2 in inference mode, one row per example.
pub fn frozen_features(net: &Network, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
    let head = net.stage_range(Stage::Classifier).start;
    let chunks: Vec<&[Example]> = examples.chunks(32).collect();
    let parts = crate::par::map_slice(&chunks, |chunk| -> Result<Vec<Vec<f64>>> {
        let x = Tensor::stack(
            &chunk.iter().map(|e| Tensor::new(e.shape().to_vec(), e.features.clone())).collect::<Result<Vec<_>>>()?,
        )?;
        let y = net.infer_range(0..head, &x)?;
        let (_, per) = y.batch_dims();
        Ok(y.data().chunks(per).map(<[f64]>::to_vec).collect())
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn tune_on_features(
    base: &Network,
    feats: &[&[f64]],
    labels: &[Label],
    cfg: &TuneConfig,
) -> Result<(Network, TrainReport)> {
    if feats.is_empty() {
        return Err(Error::Input("fine-tuning needs at least one patient cycle".into()));
    }
    let mut net = base.clone();
    net.set_trainable(Stage::Features, false);
    net.set_trainable(Stage::Temporal, false);
    net.set_trainable(Stage::Classifier, true);
    let range = classifier_range(&net);
    if !cfg.warm_start {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 7));
        for l in &mut net.layers_mut()[range.clone()] {
            *l = Layer::init(l.name.clone(), &l.spec(), l.stage, &mut rng)?;
        }
    }
    if label_counts(labels).iter().filter(|&&c| c > 0).count() == 1 {
        log::warn!("all tuning cycles are `{}`; the tuned head can only learn one class", labels[0]);
    }
    let data = Batchable {
        inputs: feats.to_vec(),
        shape: vec![feats[0].len()],
        labels: labels.iter().map(|l| l.index()).collect(),
        patients: vec![""; feats.len()],
    };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let report = fit(&mut net, range, &data, &train_cfg, &patient_class_weights(labels))?;
    Ok((net, report))
}

/// Retrains only the classifier stage on one patient's cycles.
pub fn fine_tune(net: &Network, examples: &[Example], cfg: &TuneConfig) -> Result<(Network, TrainReport)> {
    let feats = frozen_features(net, examples)?;
    let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    tune_on_features(net, &refs, &labels, cfg)
}

/// One-hot vector on the most frequent class; ties go to the earlier class.
pub fn majority_class_baseline(counts: &[usize; Label::COUNT]) -> Result<[f64; Label::COUNT]> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Input("majority class of an empty count vector".into()));
    }
    let mut best = 0;
    for k in 1..Label::COUNT {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Ok(std::array::from_fn(|k| if k == best { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooFold {
    pub test_recording: String,
    pub tuning_size: usize,
    pub labels: Vec<Label>,
    pub tuned: Vec<Label>,
    pub generalized: Vec<Label>,
    pub majority: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooReport {
    pub patient_id: String,
    pub folds: Vec<LooFold>,
    /// Pooled over folds; `None` where the patient's labels leave a metric undefined.
    pub tuned: Option<MetricsReport>,
    pub generalized: Option<MetricsReport>,
    pub majority: Option<MetricsReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    Tuned,
    Generalized,
    Majority,
}

impl LooFold {
    pub fn predictions(&self, which: Predictor) -> &[Label] {
        match which {
            Predictor::Tuned => &self.tuned,
            Predictor::Generalized => &self.generalized,
            Predictor::Majority => &self.majority,
        }
    }
}

fn defined(m: Result<MetricsReport>) -> Result<Option<MetricsReport>> {
    match m {
        Ok(m) => Ok(Some(m)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics over all folds of all given reports.
pub fn pooled_metrics(reports: &[LooReport], which: Predictor) -> Result<MetricsReport> {
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for f in reports.iter().flat_map(|r| &r.folds) {
        preds.extend_from_slice(f.predictions(which));
        labels.extend_from_slice(&f.labels);
    }
    evaluate_metrics(&preds, &labels)
}

/// Leave-one-recording-out validation of patient tuning. Returns `None` for single-recording patients.
pub fn loo_validate(net: &Network, patient: &PatientRecord, cfg: &TuneConfig) -> Result<Option<LooReport>> {
    if patient.recordings.len() < 2 {
        log::info!("patient {} has {} recording(s); skipped", patient.patient_id, patient.recordings.len());
        return Ok(None);
    }
    let feats = frozen_features(net, &patient.examples)?;
    let head = classifier_range(net);
    let folds = crate::par::map_slice(&patient.recordings, |test_rec| -> Result<LooFold> {
        let (test, tune): (Vec<usize>, Vec<usize>) =
            (0..patient.examples.len()).partition(|&i| &patient.examples[i].recording_id == test_rec);
        let tune_feats: Vec<&[f64]> = tune.iter().map(|&i| feats[i].as_slice()).collect();
        let tune_labels: Vec<Label> = tune.iter().map(|&i| patient.examples[i].label).collect();
        let fold_cfg = TuneConfig { seed: derive_seed(cfg.seed, fnv1a(test_rec)), ..cfg.clone() };
        let (tuned_net, _) = tune_on_features(net, &tune_feats, &tune_labels, &fold_cfg)?;
        let per = feats[0].len();
        let mut x = Vec::with_capacity(test.len() * per);
        test.iter().for_each(|&i| x.extend_from_slice(&feats[i]));
        let x = Tensor::new(vec![test.len(), per], x)?;
        let classify = |n: &Network| -> Result<Vec<Label>> {
            let y = n.infer_range(head.clone(), &x)?;
            Ok(y.argmax_rows().into_iter().map(|k| Label::ALL[k]).collect())
        };
        let majority = argmax_label(&majority_class_baseline(&label_counts(&tune_labels))?);
        Ok(LooFold {
            test_recording: test_rec.clone(),
            tuning_size: tune.len(),
            labels: test.iter().map(|&i| patient.examples[i].label).collect(),
            tuned: classify(&tuned_net)?,
            generalized: classify(net)?,
            majority: vec![majority; test.len()],
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let single =
        [LooReport { patient_id: patient.patient_id.clone(), folds, tuned: None, generalized: None, majority: None }];
    let tuned = defined(pooled_metrics(&single, Predictor::Tuned))?;
    let generalized = defined(pooled_metrics(&single, Predictor::Generalized))?;
    let majority = defined(pooled_metrics(&single, Predictor::Majority))?;
    let [report] = single;
    Ok(Some(LooReport { tuned, generalized, majority, ..report }))
}

/// Stable 64-bit hash of a recording id (FNV-1a), used to derive per-fold seeds.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hybrid, ModelSpec};

    fn tiny() -> Network {
        let spec: ModelSpec = "conv=3:3x3:2x2 hidden=4 fc=5 input=8x8".parse().unwrap();
        build_hybrid(&spec, 1).unwrap().network
    }

    fn example(rec: &str, label: Label, seed: usize) -> Example {
        Example {
            features: (0..64).map(|i| ((i * 7 + seed * 13) % 17) as f64 / 17.0 - 0.5 + label.index() as f64).collect(),
            n_mels: 8,
            frames: 8,
            label,
            patient_id: "p".into(),
            recording_id: rec.into(),
        }
    }

    fn patient() -> PatientRecord {
        let mut ex = Vec::new();
        for (r, rec) in ["p_a", "p_b", "p_c"].iter().enumerate() {
            for i in 0..4 {
                ex.push(example(rec, Label::ALL[(i + r) % 2], i + 4 * r));
            }
        }
        PatientRecord::new("p", ex).unwrap()
    }

    #[test]
    fn screening_fractions() {
        let all_normal = vec![Label::Normal; 5];
        let r = screen_predictions("x", &all_normal, 0.25).unwrap();
        assert_eq!((r.abnormal_fraction, r.verdict), (0.0, Verdict::Healthy));
        let mut six = vec![Label::Crackle; 6];
        six.extend([Label::Normal; 4]);
        assert_eq!(screen_predictions("x", &six, 0.25).unwrap().verdict, Verdict::Unhealthy);
        assert_eq!(screen_predictions("x", &all_normal, 0.0).unwrap().verdict, Verdict::Unhealthy);
        assert!(screen_predictions("x", &[], 0.25).is_err());
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_class_baseline(&[3, 5, 0, 0]).unwrap(), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(majority_class_baseline(&[7, 0, 0, 0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(majority_class_baseline(&[4, 4, 0, 0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(majority_class_baseline(&[40, 40, 0, 0]).unwrap(), majority_class_baseline(&[4, 4, 0, 0]).unwrap());
        assert!(majority_class_baseline(&[0; 4]).is_err());
    }

    #[test]
    fn fine_tune_freezes_lower_stages() {
        let net = tiny();
        let p = patient();
        let (tuned, report) =
            fine_tune(&net, &p.examples, &TuneConfig { epochs: 5, lr: 1e-2, ..TuneConfig::default() }).unwrap();
        assert_eq!(report.epochs_run, 5);
        let lower = net.stage_range(Stage::Classifier).start;
        assert_eq!(
            &net.layers()[..lower],
            &tuned.layers()[..lower]
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.trainable = true;
                    l
                })
                .collect::<Vec<_>>()[..]
        );
        assert_ne!(net.layers()[lower..], tuned.layers()[lower..]);

        let (same, _) = fine_tune(&net, &p.examples, &TuneConfig { epochs: 0, ..TuneConfig::default() }).unwrap();
        for (a, b) in net.layers().iter().zip(same.layers()) {
            assert_eq!(a.kind(), b.kind());
        }
    }

    #[test]
    fn loo_partitions_recordings() {
        let net = tiny();
        let p = patient();
        let r = loo_validate(&net, &p, &TuneConfig { epochs: 2, ..TuneConfig::default() }).unwrap().unwrap();
        assert_eq!(r.folds.len(), 3);
        let tested: BTreeSet<_> = r.folds.iter().map(|f| f.test_recording.clone()).collect();
        assert_eq!(tested.len(), 3);
        for f in &r.folds {
            assert_eq!(f.tuning_size + f.labels.len(), p.examples.len());
        }
        let one = PatientRecord::new("p", p.examples[..4].to_vec()).unwrap();
        assert!(loo_validate(&net, &one, &TuneConfig::default()).unwrap().is_none());
    }

    #[test]
    fn local_weights() {
        let w = patient_class_weights(&[Label::Normal, Label::Normal, Label::Normal, Label::Wheeze]);
        assert_eq!(w, [4.0 / 12.0, 1.0, 1.0, 1.0]);
    }
}
