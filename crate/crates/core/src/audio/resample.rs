use std::f64::consts::PI;

use super::AudioRecording;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 16.0;
/// Low-pass cutoff as a fraction of the output sample rate.
const CUTOFF_FRACTION: f64 = 0.45;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(t: f64, half_width: f64) -> f64 {
    if t.abs() > half_width {
        return 0.0;
    }
    let r = PI * t / half_width;
    0.42 + 0.5 * r.cos() + 0.08 * (2.0 * r).cos()
}

/// Rational polyphase resampler: output sample `j` sits at input position `j * down / up`.
struct Polyphase {
    up: usize,
    down: usize,
    taps: usize,
    /// `[up, taps]`; row `p` holds the filter for fractional offset `p / up`.
    table: Vec<f64>,
}

impl Polyphase {
    /// `fc` is the cutoff in cycles per input sample.
    fn new(up: usize, down: usize, fc: f64) -> Self {
        let half_width = ZERO_CROSSINGS / (2.0 * fc);
        let reach = half_width.ceil() as usize;
        let taps = 2 * reach;
        let mut table = vec![0.0; up * taps];
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let row = &mut table[p * taps..(p + 1) * taps];
            for (i, w) in row.iter_mut().enumerate() {
                // tap i reads input index base - reach + 1 + i
                let t = frac + reach as f64 - 1.0 - i as f64;
                *w = 2.0 * fc * sinc(2.0 * fc * t) * blackman(t, half_width);
            }
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
        Self { up, down, taps, table }
    }

    fn run(&self, x: &[f64], out_len: usize) -> Vec<f64> {
        let reach = self.taps / 2;
        let n = x.len() as isize;
        (0..out_len)
            .map(|j| {
                let pos = j * self.down;
                let base = (pos / self.up) as isize;
                let phase = pos % self.up;
                let row = &self.table[phase * self.taps..(phase + 1) * self.taps];
                let first = base - reach as isize + 1;
                let mut acc = 0.0;
                for (i, &w) in row.iter().enumerate() {
                    let k = first + i as isize;
                    if k >= 0 && k < n {
                        acc += w * x[k as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Band-limited rate conversion from `from_hz` down to `to_hz`.
///
/// Output length is `round(n * to / from)`; equal rates return the input unchanged.
pub fn resample_samples(x: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(Error::Argument("sample rates must be positive".into()));
    }
    if to_hz > from_hz {
        return Err(Error::Unsupported(format!("upsampling from {from_hz} Hz to {to_hz} Hz")));
    }
    if to_hz == from_hz {
        return Ok(x.to_vec());
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = (to_hz as u64 / g) as usize;
    let down = (from_hz as u64 / g) as usize;
    let out_len = (x.len() as f64 * to_hz as f64 / from_hz as f64).round() as usize;
    let fc = CUTOFF_FRACTION * to_hz as f64 / from_hz as f64;
    Ok(Polyphase::new(up, down, fc).run(x, out_len))
}

/// Stretches or compresses `x` to exactly `out_len` samples (content played faster or slower).
pub fn resample_to_len(x: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if x.is_empty() || out_len == 0 {
        return Err(Error::Input("resampling needs non-empty input and output".into()));
    }
    if out_len == x.len() {
        return Ok(x.to_vec());
    }
    let g = gcd(x.len() as u64, out_len as u64);
    let up = out_len / g as usize;
    let down = x.len() / g as usize;
    // Cutoff relative to whichever of the two rates is lower.
    let fc = CUTOFF_FRACTION * (up as f64 / down as f64).min(1.0);
    Ok(Polyphase::new(up, down, fc).run(x, out_len))
}

pub fn resample(rec: &AudioRecording, target_hz: u32) -> Result<AudioRecording> {
    let samples = resample_samples(&rec.samples, rec.sample_rate, target_hz)?;
    Ok(AudioRecording { samples, sample_rate: target_hz, ..rec.clone() })
}
