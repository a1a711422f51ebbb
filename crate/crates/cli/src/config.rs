//! Run configuration: a TOML file of flat keys grouped into dotted sections.
//!
//! Relative paths are resolved against the directory holding the config file,
//! so a run does not depend on the caller's working directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lungnet::audio::MelConfig;
use lungnet::model::ModelSpec;
use lungnet::nn::AdamConfig;
use lungnet::quantize::{QuantMode, MAX_BITS};
use lungnet::train::TrainConfig;
use lungnet::tuning::TuneConfig;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};

use crate::error::CliError;

fn model_spec<'de, D: Deserializer<'de>>(d: D) -> Result<ModelSpec, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(|e: lungnet::Error| D::Error::custom(e.to_string()))
}

fn quant_mode<'de, D: Deserializer<'de>>(d: D) -> Result<QuantMode, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(|e: lungnet::Error| D::Error::custom(e.to_string()))
}

fn bit_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
    let bits = Vec::<u32>::deserialize(d)?;
    check_bits(&bits).map_err(D::Error::custom)?;
    Ok(bits)
}

fn check_bits(bits: &[u32]) -> Result<(), String> {
    if bits.is_empty() {
        return Err("bit list is empty".into());
    }
    match bits.iter().find(|&&n| !(1..=MAX_BITS).contains(&n)) {
        Some(n) => Err(format!("bit width {n} outside 1..={MAX_BITS}")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub frac: f64,
    pub seed: u64,
    pub train_patients: Option<Vec<String>>,
    pub test_patients: Option<Vec<String>>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { frac: 0.8, seed: 0, train_patients: None, test_patients: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(deserialize_with = "model_spec")]
    pub spec: ModelSpec,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { spec: ModelSpec::reference(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub window_ms: f64,
    pub overlap: f64,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor_db: f64,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        let m = MelConfig::default();
        Self {
            window_ms: m.window_ms,
            overlap: m.overlap,
            n_fft: m.n_fft,
            fmin: m.fmin,
            fmax: m.fmax,
            floor_db: m.floor_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment_multiplier: usize,
    pub balance_classes: bool,
    /// Inverse-frequency class weights from the training labels; uniform when false.
    pub class_weights: bool,
    pub target_accuracy: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            seed: t.seed,
            augment_multiplier: t.augment_multiplier,
            balance_classes: t.balance_classes,
            class_weights: true,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub warm_start: bool,
    pub screening_threshold: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            warm_start: t.warm_start,
            screening_threshold: t.screening_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeSection {
    #[serde(deserialize_with = "bit_list")]
    pub bits: Vec<u32>,
    #[serde(deserialize_with = "quant_mode")]
    pub mode: QuantMode,
    pub eps_zero: f64,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        Self { bits: vec![2, 3, 4, 5, 6, 7, 8, 10, 12, 16, 24], mode: QuantMode::Local, eps_zero: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub quantize: QuantizeSection,
    /// Restricts every command to these patients when set.
    #[serde(default)]
    pub patients: Option<Vec<String>>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            CliError::Config { path: path.to_path_buf(), line, column, message: e.message().to_string() }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset_root = base.join(&cfg.dataset_root);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate().map_err(|message| CliError::InvalidConfig { path: path.to_path_buf(), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.split.frac > 0.0 && self.split.frac < 1.0) {
            return Err(format!("split.frac must lie in (0, 1), got {}", self.split.frac));
        }
        if self.split.train_patients.is_some() != self.split.test_patients.is_some() {
            return Err("split.train_patients and split.test_patients must be given together".into());
        }
        if let (Some(a), Some(b)) = (&self.split.train_patients, &self.split.test_patients) {
            let a: BTreeSet<_> = a.iter().collect();
            if let Some(p) = b.iter().find(|p| a.contains(p)) {
                return Err(format!("patient {p} is in both split.train_patients and split.test_patients"));
            }
        }
        if self.train.batch_size == 0 || self.tune.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.train.lr > 0.0) || !(self.tune.lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.tune.seed = seed;
    }

    pub fn set_bits(&mut self, bits: Vec<u32>) -> Result<(), CliError> {
        check_bits(&bits).map_err(CliError::Usage)?;
        self.quantize.bits = bits;
        Ok(())
    }

    pub fn mel(&self) -> MelConfig {
        let f = &self.features;
        MelConfig {
            window_ms: f.window_ms,
            overlap: f.overlap,
            n_fft: f.n_fft,
            n_mels: self.model.spec.input_shape.0,
            fmin: f.fmin,
            fmax: f.fmax,
            floor_db: f.floor_db,
            ..MelConfig::default()
        }
    }

    pub fn width(&self) -> usize {
        self.model.spec.input_shape.1
    }

    pub fn train_config(&self, forbidden: BTreeSet<String>) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig { lr: t.lr, ..AdamConfig::default() },
            seed: t.seed,
            augment_multiplier: t.augment_multiplier,
            balance_classes: t.balance_classes,
            class_weights: if t.class_weights { None } else { Some([1.0; 4]) },
            target_accuracy: t.target_accuracy,
            forbidden_patients: forbidden,
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        let t = &self.tune;
        TuneConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            warm_start: t.warm_start,
            screening_threshold: t.screening_threshold,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.tsv")
    }

    pub fn split_path(&self) -> PathBuf {
        self.output_dir.join("split.tsv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join("model.rmdl")
    }
}
