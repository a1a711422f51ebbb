//! Post-training logarithmic weight quantization and the `RQNT` container.
//!
//! A weight becomes a sign bit plus an N-bit magnitude code. Code 0 is exact
//! zero; codes 1..=2^N-1 sit on a uniform grid over `[log_min, log_max]` of
//! `log10 |w|`, so every weight costs N+1 bits.
//!
//! `RQNT` layout (integers little-endian): `RQNT` | version u8 | mode u8 |
//! architecture fingerprint (32 bytes) | layer count u32 | per layer: name
//! (u16 len) | tensor count u8 | shapes (rank u8, dims u32) | N u8 |
//! log_min f64 | log_max f64 | payload of ceil(count*(N+1)/8) bytes.
//! Fields are packed least-significant bit first with the sign as the top bit
//! of each (N+1)-bit field.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::audio::Label;
use crate::container::{architecture_fingerprint, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::train::{evaluate_metrics, predict, Example, MetricsReport};

pub const QMODEL_MAGIC: &[u8; 4] = b"RQNT";
pub const QMODEL_VERSION: u8 = 1;
pub const DEFAULT_EPS_ZERO: f64 = 1e-8;
pub const MAX_BITS: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantMode {
    /// One range per layer.
    Local,
    /// One range over the whole network.
    Global,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Local => "local",
            QuantMode::Global => "global",
        }
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(QuantMode::Local),
            "global" => Ok(QuantMode::Global),
            _ => Err(Error::Argument(format!("quantization mode must be local or global, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Code {
    pub negative: bool,
    pub magnitude: u32,
}

impl Code {
    pub const ZERO: Code = Code { negative: false, magnitude: 0 };
}

/// The grid shared by a set of codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogCodec {
    pub n_bits: u32,
    pub log_min: f64,
    pub log_max: f64,
    pub eps_zero: f64,
}

fn check_bits(n_bits: u32) -> Result<()> {
    if !(1..=MAX_BITS).contains(&n_bits) {
        return Err(Error::Argument(format!("bit width must be in 1..={MAX_BITS}, got {n_bits}")));
    }
    Ok(())
}

impl LogCodec {
    /// Fits `[log_min, log_max]` to the weights that survive zero-rounding.
    pub fn fit<'a>(weights: impl IntoIterator<Item = &'a f64>, n_bits: u32, eps_zero: f64) -> Result<Self> {
        check_bits(n_bits)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &w in weights {
            if !w.is_finite() {
                return Err(Error::Numeric(format!("cannot quantize non-finite weight {w}")));
            }
            if w.abs() >= eps_zero {
                let l = w.abs().log10();
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        if lo > hi {
            (lo, hi) = (0.0, 0.0);
        }
        Ok(Self { n_bits, log_min: lo, log_max: hi, eps_zero })
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.n_bits) - 2
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.n_bits) - 1
    }

    /// Width of one grid step in log10 units (0 for a degenerate range or N = 1).
    pub fn step(&self) -> f64 {
        if self.levels() == 0 {
            0.0
        } else {
            (self.log_max - self.log_min) / self.levels() as f64
        }
    }

    pub fn encode(&self, w: f64) -> Code {
        if w.abs() < self.eps_zero {
            return Code::ZERO;
        }
        let range = self.log_max - self.log_min;
        let x = if range > 0.0 { (w.abs().log10() - self.log_min) / range } else { 0.0 };
        let m = 1.0 + (self.levels() as f64 * x).round_ties_even();
        Code { negative: w < 0.0, magnitude: m.clamp(1.0, self.max_code() as f64) as u32 }
    }

    pub fn decode(&self, c: Code) -> f64 {
        if c.magnitude == 0 {
            return 0.0;
        }
        let e = if self.levels() == 0 {
            self.log_min
        } else {
            (c.magnitude - 1) as f64 / self.levels() as f64 * (self.log_max - self.log_min) + self.log_min
        };
        let v = 10f64.powf(e);
        if c.negative {
            -v
        } else {
            v
        }
    }
}

/// Quantized parameters of one network layer (all its tensors pooled).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub shapes: Vec<Vec<usize>>,
    pub codes: Vec<Code>,
    pub n_bits: u32,
    pub log_min: f64,
    pub log_max: f64,
}

impl QuantizedLayer {
    pub fn codec(&self) -> LogCodec {
        LogCodec { n_bits: self.n_bits, log_min: self.log_min, log_max: self.log_max, eps_zero: DEFAULT_EPS_ZERO }
    }

    pub fn payload_bytes(&self) -> usize {
        payload_bytes(self.codes.len(), self.n_bits)
    }
}

pub fn payload_bytes(count: usize, n_bits: u32) -> usize {
    (count * (n_bits as usize + 1)).div_ceil(8)
}

fn warn_if_collapsed(codec: &LogCodec, name: &str) {
    if codec.levels() == 0 && codec.log_max > codec.log_min {
        log::warn!("layer {name}: {} bit(s) cannot separate distinct magnitudes; all map to one level", codec.n_bits);
    }
}

fn encode_with(codec: &LogCodec, name: &str, shapes: Vec<Vec<usize>>, weights: &[f64]) -> QuantizedLayer {
    QuantizedLayer {
        name: name.to_string(),
        shapes,
        codes: weights.iter().map(|&w| codec.encode(w)).collect(),
        n_bits: codec.n_bits,
        log_min: codec.log_min,
        log_max: codec.log_max,
    }
}

/// Quantizes one flat weight vector with its own range.
pub fn log_quantize_layer(weights: &[f64], n_bits: u32, eps_zero: f64) -> Result<QuantizedLayer> {
    let codec = LogCodec::fit(weights, n_bits, eps_zero)?;
    warn_if_collapsed(&codec, "<anonymous>");
    Ok(encode_with(&codec, "", vec![vec![weights.len()]], weights))
}

pub fn dequantize_layer(q: &QuantizedLayer) -> Vec<f64> {
    let codec = q.codec();
    q.codes.iter().map(|&c| codec.decode(c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub mode: QuantMode,
    pub fingerprint: [u8; 32],
    pub layers: Vec<QuantizedLayer>,
}

fn layer_weights(net: &Network) -> Vec<(String, Vec<Vec<usize>>, Vec<f64>)> {
    net.layers()
        .iter()
        .filter(|l| l.param_count() > 0)
        .map(|l| {
            let params = l.params();
            let shapes = params.iter().map(|(_, t)| t.shape().to_vec()).collect();
            let flat = params.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
            (l.name.clone(), shapes, flat)
        })
        .collect()
}

/// Quantizes every parameterised layer; returns the codes and the dequantized network.
pub fn quantize_model(net: &Network, n_bits: u32, mode: QuantMode, eps_zero: f64) -> Result<(QuantizedModel, Network)> {
    check_bits(n_bits)?;
    let groups = layer_weights(net);
    let global = match mode {
        QuantMode::Global => Some(LogCodec::fit(groups.iter().flat_map(|g| g.2.iter()), n_bits, eps_zero)?),
        QuantMode::Local => None,
    };
    let layers = crate::par::map_slice(&groups, |(name, shapes, w)| -> Result<QuantizedLayer> {
        let codec = match global {
            Some(c) => c,
            None => LogCodec::fit(w, n_bits, eps_zero)?,
        };
        warn_if_collapsed(&codec, name);
        Ok(encode_with(&LogCodec { eps_zero, ..codec }, name, shapes.clone(), w))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let qm = QuantizedModel { mode, fingerprint: architecture_fingerprint(net), layers };
    let deq = apply_quantized(net, &qm)?;
    Ok((qm, deq))
}

/// Copy of `net` with every quantized layer's parameters replaced by decoded values.
pub fn apply_quantized(net: &Network, qm: &QuantizedModel) -> Result<Network> {
    if qm.fingerprint != architecture_fingerprint(net) {
        return Err(Error::Container("quantized model was made from a different architecture".into()));
    }
    let mut out = net.clone();
    let mut q_iter = qm.layers.iter();
    for layer in out.layers_mut().iter_mut().filter(|l| l.param_count() > 0) {
        let q =
            q_iter.next().ok_or_else(|| Error::Container(format!("no quantized data for layer `{}`", layer.name)))?;
        if q.name != layer.name {
            return Err(Error::Container(format!("quantized layer `{}` where `{}` expected", q.name, layer.name)));
        }
        let values = dequantize_layer(q);
        let mut offset = 0;
        let mut params = layer.params_mut();
        if params.len() != q.shapes.len() {
            return Err(Error::Container(format!("layer `{}`: tensor count mismatch", q.name)));
        }
        for ((_, t), shape) in params.iter_mut().zip(&q.shapes) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Container(format!("layer `{}`: shape {shape:?} vs {:?}", q.name, t.shape())));
            }
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        if offset != values.len() {
            return Err(Error::Container(format!("layer `{}`: {} codes for {offset} weights", q.name, values.len())));
        }
    }
    if q_iter.next().is_some() {
        return Err(Error::Container("quantized model has more layers than the network".into()));
    }
    Ok(out)
}

/// Packs codes as (N+1)-bit fields, least-significant bit first, sign on top.
pub fn pack_codes(codes: &[Code], n_bits: u32) -> Vec<u8> {
    let width = n_bits as usize + 1;
    let mut out = vec![0u8; payload_bytes(codes.len(), n_bits)];
    for (i, c) in codes.iter().enumerate() {
        let field = ((c.negative as u64) << n_bits) | c.magnitude as u64;
        let base = i * width;
        for b in 0..width {
            if field >> b & 1 == 1 {
                out[(base + b) / 8] |= 1 << ((base + b) % 8);
            }
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], count: usize, n_bits: u32) -> Result<Vec<Code>> {
    if bytes.len() != payload_bytes(count, n_bits) {
        return Err(Error::Container(format!("payload of {} bytes for {count} codes", bytes.len())));
    }
    let width = n_bits as usize + 1;
    Ok((0..count)
        .map(|i| {
            let base = i * width;
            let field =
                (0..width).fold(0u64, |acc, b| acc | ((bytes[(base + b) / 8] >> ((base + b) % 8) & 1) as u64) << b);
            Code { negative: field >> n_bits & 1 == 1, magnitude: (field & ((1u64 << n_bits) - 1)) as u32 }
        })
        .collect())
}

pub fn write_qmodel<W: Write>(qm: &QuantizedModel, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(QMODEL_MAGIC)?;
    w.u8(QMODEL_VERSION)?;
    w.u8(match qm.mode {
        QuantMode::Local => 0,
        QuantMode::Global => 1,
    })?;
    w.bytes(&qm.fingerprint)?;
    w.u32(qm.layers.len() as u32)?;
    for l in &qm.layers {
        w.str16(&l.name)?;
        w.u8(l.shapes.len() as u8)?;
        for s in &l.shapes {
            w.shape(s)?;
        }
        w.u8(l.n_bits as u8)?;
        w.f64(l.log_min)?;
        w.f64(l.log_max)?;
        w.bytes(&pack_codes(&l.codes, l.n_bits))?;
    }
    Ok(())
}

pub fn read_qmodel<R: Read>(input: R) -> Result<QuantizedModel> {
    let mut r = Reader(input);
    if &r.array::<4>()? != QMODEL_MAGIC {
        return Err(Error::Container("not a quantized model file (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != QMODEL_VERSION {
        return Err(Error::Container(format!("unsupported quantized model version {version}")));
    }
    let mode = match r.u8()? {
        0 => QuantMode::Local,
        1 => QuantMode::Global,
        m => return Err(Error::Container(format!("unknown quantization mode byte {m}"))),
    };
    let fingerprint = r.array::<32>()?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str16()?;
        let n_shapes = r.u8()? as usize;
        let shapes = (0..n_shapes).map(|_| r.shape()).collect::<Result<Vec<_>>>()?;
        let n_bits = r.u8()? as u32;
        check_bits(n_bits).map_err(|e| Error::Container(e.to_string()))?;
        let log_min = r.f64()?;
        let log_max = r.f64()?;
        if !(log_min <= log_max) {
            return Err(Error::Container(format!("layer `{name}`: log_min {log_min} above log_max {log_max}")));
        }
        let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let codes = unpack_codes(&r.bytes(payload_bytes(count, n_bits))?, count, n_bits)?;
        layers.push(QuantizedLayer { name, shapes, codes, n_bits, log_min, log_max });
    }
    Ok(QuantizedModel { mode, fingerprint, layers })
}

pub fn qmodel_to_bytes(qm: &QuantizedModel) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    write_qmodel(qm, &mut v)?;
    Ok(v)
}

const FILE_HEADER_BYTES: usize = 4 + 1 + 1 + 32 + 4;

/// Header bytes a layer costs in the container besides its payload.
pub fn layer_overhead_bytes(name: &str, shapes: &[Vec<usize>]) -> usize {
    2 + name.len() + 1 + shapes.iter().map(|s| 1 + 4 * s.len()).sum::<usize>() + 1 + 16
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub params: usize,
    pub n_bits: u32,
    pub payload_bytes: usize,
    pub overhead_bytes: usize,
    pub quantized_bytes: usize,
    /// 32-bit floats.
    pub full_precision_bytes: usize,
    pub ratio: f64,
}

/// Size of an `RQNT` file for layers of the given names and shapes at N bits.
pub fn memory_estimate(layers: &[(String, Vec<Vec<usize>>)], n_bits: u32) -> MemoryReport {
    let counts: Vec<usize> = layers.iter().map(|(_, s)| s.iter().map(|d| d.iter().product::<usize>()).sum()).collect();
    let params: usize = counts.iter().sum();
    let payload: usize = counts.iter().map(|&c| payload_bytes(c, n_bits)).sum();
    let overhead = FILE_HEADER_BYTES + layers.iter().map(|(n, s)| layer_overhead_bytes(n, s)).sum::<usize>();
    let quantized = payload + overhead;
    MemoryReport {
        params,
        n_bits,
        payload_bytes: payload,
        overhead_bytes: overhead,
        quantized_bytes: quantized,
        full_precision_bytes: 4 * params,
        ratio: 4.0 * params as f64 / quantized as f64,
    }
}

pub fn memory_report(qm: &QuantizedModel) -> MemoryReport {
    let n_bits = qm.layers.first().map_or(0, |l| l.n_bits);
    let layers: Vec<(String, Vec<Vec<usize>>)> = qm.layers.iter().map(|l| (l.name.clone(), l.shapes.clone())).collect();
    memory_estimate(&layers, n_bits)
}

pub fn network_memory(net: &Network, n_bits: u32) -> MemoryReport {
    let layers: Vec<(String, Vec<Vec<usize>>)> = layer_weights(net).into_iter().map(|(n, s, _)| (n, s)).collect();
    memory_estimate(&layers, n_bits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub n_bits: u32,
    pub metrics: MetricsReport,
    pub accuracy: f64,
    pub memory: MemoryReport,
}

/// Quantize, dequantize and evaluate at each bit width.
pub fn bit_sweep(
    net: &Network,
    eval: &[Example],
    bits: &[u32],
    mode: QuantMode,
    eps_zero: f64,
) -> Result<Vec<SweepPoint>> {
    if eval.is_empty() {
        return Err(Error::Input("bit sweep needs a non-empty evaluation set".into()));
    }
    let labels: Vec<Label> = eval.iter().map(|e| e.label).collect();
    crate::par::map_slice(bits, |&n| -> Result<SweepPoint> {
        let (qm, deq) = quantize_model(net, n, mode, eps_zero)?;
        let preds = predict(&deq, eval)?;
        let accuracy = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
        Ok(SweepPoint { n_bits: n, metrics: evaluate_metrics(&preds, &labels)?, accuracy, memory: memory_report(&qm) })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hybrid, ModelSpec};

    fn c(negative: bool, magnitude: u32) -> Code {
        Code { negative, magnitude }
    }

    #[test]
    fn grid_aligned_example() {
        let q = log_quantize_layer(&[0.1, -1.0, 0.01, 0.0], 2, 1e-8).unwrap();
        assert_eq!((q.log_min, q.log_max), (-2.0, 0.0));
        assert_eq!(q.codes, vec![c(false, 2), c(true, 3), c(false, 1), Code::ZERO]);
        assert_eq!(dequantize_layer(&q), vec![0.1, -1.0, 0.01, 0.0]);
    }

    #[test]
    fn degenerate_layers() {
        let q = log_quantize_layer(&[0.0; 5], 4, 1e-8).unwrap();
        assert!(q.codes.iter().all(|&k| k == Code::ZERO));
        assert!(dequantize_layer(&q).iter().all(|&v| v == 0.0));

        let q = log_quantize_layer(&[0.001; 3], 4, 1e-8).unwrap();
        assert!(q.codes.iter().all(|k| k.magnitude == 1));
        assert_eq!(dequantize_layer(&q), vec![0.001; 3]);

        let q = log_quantize_layer(&[0.3, 0.3], 6, 1e-8).unwrap();
        for v in dequantize_layer(&q) {
            assert!((v - 0.3).abs() <= 2.0 * f64::EPSILON * 0.3);
        }
    }

    #[test]
    fn one_bit_decodes_log_min() {
        let q = log_quantize_layer(&[0.01, -1.0], 1, 1e-8).unwrap();
        assert_eq!(q.codes, vec![c(false, 1), c(true, 1)]);
        assert_eq!(dequantize_layer(&q), vec![0.01, -0.01]);
    }

    #[test]
    fn decode_monotone() {
        let codec = LogCodec { n_bits: 5, log_min: -3.0, log_max: 0.5, eps_zero: 1e-8 };
        for m in 1..codec.max_code() {
            assert!(codec.decode(c(false, m)) < codec.decode(c(false, m + 1)));
            assert!(codec.decode(c(true, m)) > codec.decode(c(true, m + 1)));
        }
    }

    #[test]
    fn packing_round_trip_and_layout() {
        let codes = vec![c(false, 2), c(true, 3), c(false, 1), Code::ZERO];
        let bytes = pack_codes(&codes, 2);
        assert_eq!(bytes.len(), 2);
        // fields 010, 111, 001, 000 occupy bits 0-2, 3-5, 6-8, 9-11
        assert_eq!(bytes, vec![0b0111_1010, 0b0000_0000]);
        assert_eq!(unpack_codes(&bytes, 4, 2).unwrap(), codes);
        let many: Vec<Code> = (0..37).map(|i| c(i % 3 == 0, (i * 5) % 32)).collect();
        assert_eq!(unpack_codes(&pack_codes(&many, 5), 37, 5).unwrap(), many);
    }

    #[test]
    fn memory_examples() {
        let layer = |p: usize| vec![("w".to_string(), vec![vec![p]])];
        let m = memory_estimate(&layer(1_000_000), 7);
        assert_eq!(m.payload_bytes, 1_000_000);
        assert!((m.ratio - 4.0).abs() / 4.0 < 1e-3);
        assert!((m.overhead_bytes as f64) < 1e-3 * m.quantized_bytes as f64);
        let empty = memory_estimate(&[], 7);
        assert_eq!(empty.quantized_bytes, empty.overhead_bytes);
        assert_eq!(
            memory_estimate(&layer(2_000), 7).payload_bytes,
            2 * memory_estimate(&layer(1_000), 7).payload_bytes
        );
    }

    #[test]
    fn container_round_trip() {
        let net =
            build_hybrid(&"conv=3:3x3:2x2 hidden=4 fc=5 input=8x8".parse::<ModelSpec>().unwrap(), 2).unwrap().network;
        for mode in [QuantMode::Local, QuantMode::Global] {
            let (qm, deq) = quantize_model(&net, 6, mode, DEFAULT_EPS_ZERO).unwrap();
            let bytes = qmodel_to_bytes(&qm).unwrap();
            assert_eq!(bytes.len(), memory_report(&qm).quantized_bytes);
            let back = read_qmodel(bytes.as_slice()).unwrap();
            assert_eq!(back, qm);
            assert_eq!(apply_quantized(&net, &back).unwrap(), deq);
        }
    }

    #[test]
    fn wrong_architecture_rejected() {
        let a = build_hybrid(&"conv=3:3x3:2x2 hidden=4 fc=5 input=8x8".parse().unwrap(), 2).unwrap().network;
        let b = build_hybrid(&"conv=3:3x3:2x2 hidden=4 fc=6 input=8x8".parse().unwrap(), 2).unwrap().network;
        let (qm, _) = quantize_model(&a, 4, QuantMode::Local, DEFAULT_EPS_ZERO).unwrap();
        assert!(matches!(apply_quantized(&b, &qm), Err(Error::Container(_))));
    }
}
