use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{BreathingCycle, TARGET_RATE};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub overlap: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_RATE,
            window_ms: 60.0,
            overlap: 0.5,
            n_fft: 256,
            n_mels: 40,
            fmin: 0.0,
            fmax: 2000.0,
            floor_db: -80.0,
        }
    }
}

impl MelConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        ((self.window_len() as f64) * (1.0 - self.overlap)).round() as usize
    }

    pub fn frame_count(&self, n: usize) -> usize {
        let w = self.window_len();
        (n.max(w) - w) / self.hop_len() + 1
    }

    fn validate(&self) -> Result<()> {
        let w = self.window_len();
        if w == 0 || self.hop_len() == 0 || w > self.n_fft || self.n_mels == 0 {
            return Err(Error::Configuration(format!(
                "mel window {w}, hop {}, n_fft {}, n_mels {} are inconsistent",
                self.hop_len(),
                self.n_fft,
                self.n_mels
            )));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Configuration(format!("mel band {}..{} Hz is invalid", self.fmin, self.fmax)));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, centres equally spaced on the mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `[n_mels, n_fft/2 + 1]`
    weights: Vec<f64>,
    bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> =
            (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0; cfg.n_mels * bins];
        for m in 0..cfg.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let up = (f - l) / (c - l);
                let down = (r - f) / (r - c);
                weights[m * bins + k] = up.min(down).max(0.0);
            }
        }
        Ok(Self { weights, bins, centers_hz: edges[1..=cfg.n_mels].to_vec() })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn n_mels(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }
}

/// Log-mel image, row-major `[n_mels, frames]`, values in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub frames: usize,
    pub frame_hop_s: f64,
}

impl MelSpectrogram {
    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.get(m, frame)).collect()
    }

    /// `[1, n_mels, frames]`, ready to be stacked into a `[B, 1, n_mels, frames]` batch.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.n_mels, self.frames], self.values.clone()).expect("consistent spectrogram")
    }
}

/// Reusable extractor holding the filterbank, window and FFT plan.
#[derive(Clone)]
pub struct MelExtractor {
    cfg: MelConfig,
    bank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let bank = MelFilterbank::new(&cfg)?;
        let w = cfg.window_len();
        // periodic Hann
        let window = (0..w).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self { cfg, bank, window, fft })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// Signals shorter than one window are extended by cyclic repetition first.
    pub fn extract(&self, samples: &[f64]) -> Result<MelSpectrogram> {
        if samples.is_empty() {
            return Err(Error::Input("cannot compute a spectrogram of an empty signal".into()));
        }
        let w = self.cfg.window_len();
        let hop = self.cfg.hop_len();
        let padded: Vec<f64>;
        let x = if samples.len() < w {
            padded = samples.iter().cycle().take(w).copied().collect();
            &padded[..]
        } else {
            samples
        };
        let frames = self.cfg.frame_count(x.len());
        let n_mels = self.bank.n_mels();
        let bins = self.cfg.n_fft / 2 + 1;
        let mut values = vec![0.0; n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&s, &win)) in x[t * hop..t * hop + w].iter().zip(&self.window).enumerate() {
                buf[i].re = s * win;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
            for m in 0..n_mels {
                let e: f64 = self.bank.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
                values[m * frames + t] = (10.0 * (e + 1e-10).log10()).max(self.cfg.floor_db);
            }
        }
        Ok(MelSpectrogram { values, n_mels, frames, frame_hop_s: hop as f64 / self.cfg.sample_rate as f64 })
    }
}

pub fn mel_spectrogram(cycle: &BreathingCycle, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg.clone())?.extract(&cycle.samples)
}

/// Forces the time axis to `width` frames: cyclic repetition when short, centre crop when long.
pub fn fix_width(spec: &MelSpectrogram, width: usize) -> Result<MelSpectrogram> {
    if spec.frames == 0 || spec.n_mels == 0 || width == 0 {
        return Err(Error::Input("fix_width needs a non-empty spectrogram and target".into()));
    }
    if spec.frames == width {
        return Ok(spec.clone());
    }
    let start = spec.frames.saturating_sub(width) / 2;
    let mut values = Vec::with_capacity(spec.n_mels * width);
    for m in 0..spec.n_mels {
        let row = &spec.values[m * spec.frames..(m + 1) * spec.frames];
        if spec.frames < width {
            values.extend(row.iter().cycle().take(width));
        } else {
            values.extend_from_slice(&row[start..start + width]);
        }
    }
    Ok(MelSpectrogram { values, n_mels: spec.n_mels, frames: width, frame_hop_s: spec.frame_hop_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec_with(frames: usize) -> MelSpectrogram {
        MelSpectrogram { values: (0..2 * frames).map(|i| i as f64).collect(), n_mels: 2, frames, frame_hop_s: 0.03 }
    }

    #[test]
    fn frame_geometry() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.window_len(), 240);
        assert_eq!(cfg.hop_len(), 120);
        assert_eq!(cfg.frame_count(4000), 32);
    }

    #[test]
    fn silence_is_floor() {
        let ex = MelExtractor::new(MelConfig::default()).unwrap();
        let s = ex.extract(&vec![0.0; 4000]).unwrap();
        assert_eq!(s.frames, 32);
        assert!(s.values.iter().all(|&v| v == -80.0));
    }

    #[test]
    fn tone_peaks_in_nearest_band() {
        let ex = MelExtractor::new(MelConfig::default()).unwrap();
        let x: Vec<f64> = (0..4000).map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / 4000.0).sin()).collect();
        let s = ex.extract(&x).unwrap();
        let centers = ex.filterbank().centers_hz();
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        for t in 0..s.frames {
            let col = s.column(t);
            let arg = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, nearest, "frame {t}");
        }
    }

    #[test]
    fn filterbank_covers_band() {
        let cfg = MelConfig::default();
        let bank = MelFilterbank::new(&cfg).unwrap();
        for m in 0..bank.n_mels() {
            assert!(bank.row(m).iter().sum::<f64>() > 0.0, "band {m} is empty");
        }
        let bins = cfg.n_fft / 2 + 1;
        for k in 1..bins - 1 {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            if f > cfg.fmin && f < cfg.fmax {
                assert!((0..bank.n_mels()).any(|m| bank.row(m)[k] > 0.0), "no response at {f} Hz");
            }
        }
    }

    #[test]
    fn short_cycle_is_extended() {
        let ex = MelExtractor::new(MelConfig::default()).unwrap();
        let s = ex.extract(&[0.1; 100]).unwrap();
        assert_eq!(s.frames, 1);
    }

    #[test]
    fn fix_width_cases() {
        let same = spec_with(128);
        assert_eq!(fix_width(&same, 128).unwrap(), same);

        let short = spec_with(64);
        let f = fix_width(&short, 128).unwrap();
        for m in 0..2 {
            for t in 0..64 {
                assert_eq!(f.get(m, t + 64), f.get(m, t));
                assert_eq!(f.get(m, t), short.get(m, t));
            }
        }

        let long = spec_with(200);
        let f = fix_width(&long, 128).unwrap();
        for m in 0..2 {
            for t in 0..128 {
                assert_eq!(f.get(m, t), long.get(m, t + 36));
            }
        }
        assert_eq!(fix_width(&f, 128).unwrap(), f);
    }
}
