use rustfft::{num_complex::Complex, FftPlanner};

use super::{BreathingCycle, TARGET_RATE};
use crate::error::{Error, Result};

/// Summary descriptors of one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    pub duration_s: f64,
    pub rms_energy: f64,
    pub zcr: f64,
    pub spectral_bandwidth_hz: f64,
    pub rolloff_hz: f64,
}

impl CycleStats {
    pub const FEATURES: [&'static str; 5] = ["duration", "rms", "zcr", "bandwidth", "rolloff"];

    pub fn values(&self) -> [f64; 5] {
        [self.duration_s, self.rms_energy, self.zcr, self.spectral_bandwidth_hz, self.rolloff_hz]
    }
}

const ROLLOFF_FRACTION: f64 = 0.85;

pub fn cycle_stats(cycle: &BreathingCycle) -> Result<CycleStats> {
    signal_stats(&cycle.samples, TARGET_RATE)
}

pub(crate) fn signal_stats(x: &[f64], rate: u32) -> Result<CycleStats> {
    if x.is_empty() {
        return Err(Error::Input("statistics of an empty cycle".into()));
    }
    let n = x.len();
    let rms_energy = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let crossings = x.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
    let zcr = if n > 1 { crossings as f64 / (n - 1) as f64 } else { 0.0 };

    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let power: Vec<f64> = buf[..half].iter().map(|c| c.norm_sqr()).collect();
    let freq = |k: usize| k as f64 * rate as f64 / n as f64;
    let total: f64 = power.iter().sum();
    let (spectral_bandwidth_hz, rolloff_hz) = if total > 0.0 {
        let centroid = power.iter().enumerate().map(|(k, p)| freq(k) * p).sum::<f64>() / total;
        let spread = power.iter().enumerate().map(|(k, p)| p * (freq(k) - centroid).powi(2)).sum::<f64>() / total;
        let mut acc = 0.0;
        let mut roll = freq(half - 1);
        for (k, p) in power.iter().enumerate() {
            acc += p;
            if acc >= ROLLOFF_FRACTION * total {
                roll = freq(k);
                break;
            }
        }
        (spread.sqrt(), roll)
    } else {
        (0.0, 0.0)
    };
    Ok(CycleStats { duration_s: n as f64 / rate as f64, rms_energy, zcr, spectral_bandwidth_hz, rolloff_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_sign_has_no_crossings() {
        let s = signal_stats(&[0.3, 0.1, 0.9, 0.2], 4000).unwrap();
        assert_eq!(s.zcr, 0.0);
    }

    #[test]
    fn alternating_unit_signal() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = signal_stats(&x, 4000).unwrap();
        assert_eq!(s.rms_energy, 1.0);
        assert_eq!(s.zcr, 1.0);
    }

    #[test]
    fn pure_tone_spectrum() {
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 500.0 * i as f64 / 4000.0).sin()).collect();
        let s = signal_stats(&x, 4000).unwrap();
        assert!((s.rolloff_hz - 500.0).abs() <= 1.0, "rolloff {}", s.rolloff_hz);
        assert!(s.spectral_bandwidth_hz < 1.0, "bandwidth {}", s.spectral_bandwidth_hz);
        assert!(s.rolloff_hz <= 2000.0);
        assert_eq!(s.duration_s, 1.0);
    }

    #[test]
    fn empty_is_input_error() {
        assert!(signal_stats(&[], 4000).is_err());
    }
}
