//! The hybrid CNN / BiLSTM / dense network: construction, parameter and FLOP accounting.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerSpec, Network, Padding, Stage};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub pool: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub conv_blocks: Vec<ConvBlock>,
    pub bilstm_hidden: usize,
    pub fc_units: usize,
    pub dropout_rate: f64,
    pub n_classes: usize,
    /// `(n_mels, frames)`
    pub input_shape: (usize, usize),
}

impl ModelSpec {
    /// Three 3x3 conv blocks (16/32/64 filters, 2x2 pooling), a 64-unit BiLSTM and a 20-unit head.
    pub fn reference() -> Self {
        let block = |filters| ConvBlock { filters, kernel: (3, 3), pool: (2, 2) };
        Self {
            conv_blocks: vec![block(16), block(32), block(64)],
            bilstm_hidden: 64,
            fc_units: 20,
            dropout_rate: 0.5,
            n_classes: N_CLASSES,
            input_shape: (40, 128),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Configuration(m));
        if self.n_classes != N_CLASSES {
            return cfg(format!("n_classes must be {N_CLASSES}, got {}", self.n_classes));
        }
        if self.bilstm_hidden == 0 || self.fc_units == 0 || self.input_shape.0 == 0 || self.input_shape.1 == 0 {
            return cfg("hidden size, head width and input shape must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return cfg(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel.0 == 0 || b.kernel.1 == 0 || b.pool.0 == 0 || b.pool.1 == 0 {
                return cfg(format!("conv block {} has a zero size", i + 1));
            }
        }
        Ok(())
    }

    /// Per-sample input tensor shape `[1, n_mels, frames]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        [1, self.input_shape.0, self.input_shape.1]
    }

    /// Layer list with names and stages, shapes checked.
    pub fn layer_specs(&self) -> Result<Vec<(String, LayerSpec, Stage)>> {
        self.validate()?;
        let mut out = vec![("input_norm".to_string(), LayerSpec::BatchNorm { channels: 1 }, Stage::Features)];
        let mut channels = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            let n = i + 1;
            out.push((
                format!("conv{n}"),
                LayerSpec::Conv2d {
                    in_channels: channels,
                    filters: b.filters,
                    kh: b.kernel.0,
                    kw: b.kernel.1,
                    padding: Padding::Valid,
                },
                Stage::Features,
            ));
            out.push((format!("relu{n}"), LayerSpec::Activation(Activation::Relu), Stage::Features));
            out.push((format!("pool{n}"), LayerSpec::MaxPool2d { ph: b.pool.0, pw: b.pool.1 }, Stage::Features));
            channels = b.filters;
        }
        // shape walk up to the reshape fixes the recurrent input width
        let mut shape = self.sample_shape().to_vec();
        for (name, spec, _) in &out {
            shape = spec.output_shape(&shape).map_err(|_| {
                Error::Configuration(format!("input {:?} is exhausted at layer `{name}`", self.input_shape))
            })?;
        }
        let [c, f, _t] = <[usize; 3]>::try_from(shape.as_slice()).expect("conv stack keeps rank 3");
        out.push(("to_sequence".into(), LayerSpec::ToSequence, Stage::Temporal));
        out.push((
            "bilstm".into(),
            LayerSpec::BiLstm { input_dim: c * f, hidden: self.bilstm_hidden, return_sequences: false },
            Stage::Temporal,
        ));
        let h2 = 2 * self.bilstm_hidden;
        out.push(("fc1".into(), LayerSpec::Dense { inputs: h2, units: self.fc_units }, Stage::Classifier));
        out.push(("fc1_relu".into(), LayerSpec::Activation(Activation::Relu), Stage::Classifier));
        out.push(("dropout".into(), LayerSpec::Dropout { rate: self.dropout_rate }, Stage::Classifier));
        out.push(("fc2".into(), LayerSpec::Dense { inputs: self.fc_units, units: self.n_classes }, Stage::Classifier));
        out.push(("softmax".into(), LayerSpec::Softmax, Stage::Classifier));
        Ok(out)
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self
            .conv_blocks
            .iter()
            .map(|b| format!("{}:{}x{}:{}x{}", b.filters, b.kernel.0, b.kernel.1, b.pool.0, b.pool.1))
            .collect();
        write!(
            f,
            "conv={} hidden={} fc={} dropout={:?} classes={} input={}x{}",
            blocks.join(","),
            self.bilstm_hidden,
            self.fc_units,
            self.dropout_rate,
            self.n_classes,
            self.input_shape.0,
            self.input_shape.1
        )
    }
}

fn pair(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Argument(format!("expected AxB, got `{s}`"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Parses the `Display` form; omitted keys keep their reference values.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = ModelSpec::reference();
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Argument(format!("malformed model key `{tok}`")))?;
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Argument(format!("`{k}` needs an integer")));
            match k {
                "conv" if v.is_empty() => spec.conv_blocks.clear(),
                "conv" => {
                    spec.conv_blocks = v
                        .split(',')
                        .map(|b| {
                            let p: Vec<&str> = b.split(':').collect();
                            if p.len() != 3 {
                                return Err(Error::Argument(format!("conv block `{b}` is not F:KHxKW:PHxPW")));
                            }
                            Ok(ConvBlock { filters: int(p[0])?, kernel: pair(p[1])?, pool: pair(p[2])? })
                        })
                        .collect::<Result<_>>()?
                }
                "hidden" => spec.bilstm_hidden = int(v)?,
                "fc" => spec.fc_units = int(v)?,
                "dropout" => {
                    spec.dropout_rate = v.parse().map_err(|_| Error::Argument("`dropout` needs a number".into()))?
                }
                "classes" => spec.n_classes = int(v)?,
                "input" => spec.input_shape = pair(v)?,
                other => return Err(Error::Argument(format!("unknown model key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A network together with the description it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub network: Network,
}

pub fn build_hybrid(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_specs()?
        .into_iter()
        .map(|(name, ls, stage)| Layer::init(name, &ls, stage, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Model { spec: spec.clone(), network: Network::new(layers)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFilter {
    All,
    Trainable,
    Stage(Stage),
}

pub fn count_params(net: &Network, filter: ParamFilter) -> usize {
    net.layers()
        .iter()
        .filter(|l| match filter {
            ParamFilter::All => true,
            ParamFilter::Trainable => l.trainable,
            ParamFilter::Stage(s) => l.stage == s,
        })
        .map(Layer::param_count)
        .sum()
}

/// Per-layer operation counts for one sample.
pub fn flop_breakdown(net: &Network, input_shape: &[usize]) -> Result<Vec<(String, u64)>> {
    let mut shape = input_shape.to_vec();
    let mut out = Vec::with_capacity(net.len());
    for layer in net.layers() {
        let spec = layer.spec();
        let next = spec.output_shape(&shape)?;
        let elems = |s: &[usize]| s.iter().product::<usize>() as u64;
        let ops = match spec {
            LayerSpec::Conv2d { in_channels, filters, kh, kw, .. } => {
                2 * (kh * kw * in_channels * filters) as u64 * (next[1] * next[2]) as u64
            }
            LayerSpec::Dense { inputs, units } => 2 * (inputs * units) as u64,
            LayerSpec::BiLstm { input_dim, hidden, .. } => {
                let t = shape[0] as u64;
                2 * (2 * 4 * (input_dim * hidden + hidden * hidden)) as u64 * t
            }
            LayerSpec::BatchNorm { .. } => 4 * elems(&shape),
            LayerSpec::MaxPool2d { .. } | LayerSpec::Activation(_) | LayerSpec::Softmax => elems(&next),
            LayerSpec::Dropout { .. } | LayerSpec::ToSequence => 0,
        };
        out.push((layer.name.clone(), ops));
        shape = next;
    }
    Ok(out)
}

pub fn estimate_flops(net: &Network, input_shape: &[usize]) -> Result<u64> {
    Ok(flop_breakdown(net, input_shape)?.iter().map(|(_, f)| f).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};

    fn single(name: &str, spec: LayerSpec) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Network::new(vec![Layer::init(name, &spec, Stage::Features, &mut rng).unwrap()]).unwrap()
    }

    #[test]
    fn reference_output_is_distribution() {
        let model = build_hybrid(&ModelSpec::reference(), 1).unwrap();
        let x =
            Tensor::new(vec![1, 1, 40, 128], (0..40 * 128).map(|i| ((i % 37) as f64 - 18.0) / 9.0).collect()).unwrap();
        let y = model.network.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_counts_match_closed_form() {
        let net = build_hybrid(&ModelSpec::reference(), 0).unwrap().network;
        let conv = |c: usize, f: usize| f * c * 9 + f;
        let stage1 = 2 + conv(1, 16) + conv(16, 32) + conv(32, 64);
        let lstm = 2 * 4 * (256 * 64 + 64 * 64 + 64);
        let stage3 = (128 * 20 + 20) + (20 * 4 + 4);
        assert_eq!(count_params(&net, ParamFilter::Stage(Stage::Features)), stage1);
        assert_eq!(count_params(&net, ParamFilter::Stage(Stage::Temporal)), lstm);
        assert_eq!(count_params(&net, ParamFilter::Stage(Stage::Classifier)), stage3);
        assert_eq!(count_params(&net, ParamFilter::All), stage1 + lstm + stage3);
        let frac = stage3 as f64 / (stage1 + lstm + stage3) as f64;
        assert!((0.01..=0.02).contains(&frac), "{frac}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_hybrid(&ModelSpec::reference(), 9).unwrap();
        let b = build_hybrid(&ModelSpec::reference(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_hybrid(&ModelSpec::reference(), 10).unwrap());
    }

    #[test]
    fn single_layer_counts() {
        assert_eq!(count_params(&Network::default(), ParamFilter::All), 0);
        let conv = LayerSpec::Conv2d { in_channels: 1, filters: 8, kh: 3, kw: 3, padding: Padding::Valid };
        assert_eq!(count_params(&single("c", conv), ParamFilter::All), 80);
        let lstm = LayerSpec::BiLstm { input_dim: 64, hidden: 32, return_sequences: false };
        assert_eq!(count_params(&single("l", lstm), ParamFilter::All), 24832);
    }

    #[test]
    fn flop_examples() {
        assert_eq!(estimate_flops(&Network::default(), &[1, 40, 128]).unwrap(), 0);
        let dense = single("d", LayerSpec::Dense { inputs: 64, units: 4 });
        assert_eq!(estimate_flops(&dense, &[64]).unwrap(), 512);
        let conv =
            single("c", LayerSpec::Conv2d { in_channels: 1, filters: 16, kh: 3, kw: 3, padding: Padding::Valid });
        assert_eq!(estimate_flops(&conv, &[1, 40, 128]).unwrap(), 1_378_944);
    }

    #[test]
    fn reference_flop_total() {
        let net = build_hybrid(&ModelSpec::reference(), 0).unwrap().network;
        let expected: u64 = 4 * 40 * 128
            + 2 * 9 * 16 * 38 * 126
            + 16 * 38 * 126
            + 16 * 19 * 63
            + 2 * 9 * 16 * 32 * 17 * 61
            + 32 * 17 * 61
            + 32 * 9 * 31
            + 2 * 9 * 32 * 64 * 7 * 29
            + 64 * 7 * 29
            + 64 * 4 * 15
            + 2 * 2 * 4 * (256 * 64 + 64 * 64) * 15
            + 2 * 128 * 20
            + 20
            + 2 * 20 * 4
            + 4;
        assert_eq!(estimate_flops(&net, &[1, 40, 128]).unwrap(), expected);
    }

    #[test]
    fn exhausted_input_is_configuration_error() {
        let spec = ModelSpec { input_shape: (6, 128), ..ModelSpec::reference() };
        assert!(matches!(build_hybrid(&spec, 0), Err(Error::Configuration(_))));
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = ModelSpec::reference();
        assert_eq!(spec.to_string().parse::<ModelSpec>().unwrap(), spec);
        let small: ModelSpec = "conv=4:3x3:2x2 hidden=8 fc=6 input=16x32".parse().unwrap();
        assert_eq!(small.conv_blocks.len(), 1);
        assert!("classes=3".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn batch_equals_per_sample() {
        let spec: ModelSpec = "conv=4:3x3:2x2 hidden=5 fc=6 input=12x16".parse().unwrap();
        let mut model = build_hybrid(&spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(vec![3, 1, 12, 16], (0..3 * 12 * 16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        model.network.forward(&x, Mode::Train, &mut rng).unwrap();
        let batch = model.network.infer(&x).unwrap();
        for b in 0..3 {
            let one = model.network.infer(&x.item(b)).unwrap();
            for k in 0..4 {
                assert!((one.data()[k] - batch.data()[b * 4 + k]).abs() <= 1e-9);
            }
        }
    }
}
