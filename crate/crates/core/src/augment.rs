//! Time-domain augmentation of breathing cycles.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{resample_to_len, BreathingCycle, Label, TARGET_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// White Gaussian noise at the given signal-to-noise ratio.
    Noise { snr_db: f64 },
    /// Playback-rate change; duration and pitch both scale.
    Speed { factor: f64 },
    /// Circular shift in seconds; positive moves content later.
    Shift { seconds: f64 },
    /// Pitch change with the length kept.
    Pitch { semitones: f64 },
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Noise { snr_db } => write!(f, "noise({snr_db} dB)"),
            Transform::Speed { factor } => write!(f, "speed(x{factor})"),
            Transform::Shift { seconds } => write!(f, "shift({seconds} s)"),
            Transform::Pitch { semitones } => write!(f, "pitch({semitones} st)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub transform: Transform,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(transform: Transform, seed: u64) -> Self {
        Self { transform, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.transform {
            Transform::Noise { snr_db } if !snr_db.is_finite() => {
                Err(Error::Argument(format!("snr must be finite, got {snr_db}")))
            }
            Transform::Speed { factor } if !(factor > 0.5 && factor < 2.0) => {
                Err(Error::Argument(format!("speed factor {factor} outside (0.5, 2.0)")))
            }
            Transform::Shift { seconds } if !seconds.is_finite() => {
                Err(Error::Argument(format!("shift must be finite, got {seconds}")))
            }
            Transform::Pitch { semitones } if !(semitones.abs() <= 12.0) => {
                Err(Error::Argument(format!("pitch shift {semitones} exceeds 12 semitones")))
            }
            _ => Ok(()),
        }
    }
}

fn clip(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Gaussian noise whose mean power is exactly `P_signal / 10^(snr/10)`.
pub fn noise_for(signal: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..signal.len()).map(|_| rng.sample(StandardNormal)).collect();
    let p_signal = signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64;
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target = p_signal / 10f64.powf(snr_db / 10.0);
    let gain = if p_noise > 0.0 { (target / p_noise).sqrt() } else { 0.0 };
    noise.iter_mut().for_each(|v| *v *= gain);
    noise
}

pub fn circular_shift(x: &[f64], k: i64) -> Vec<f64> {
    let n = x.len() as i64;
    let k = k.rem_euclid(n) as usize;
    let mut out = x.to_vec();
    out.rotate_right(k);
    out
}

const OLA_FRAME: usize = 256;

/// Changes duration to `out_len` samples while keeping pitch (waveform-similarity overlap-add).
pub fn time_stretch(x: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if x.is_empty() || out_len == 0 {
        return Err(Error::Input("time stretch of an empty signal".into()));
    }
    let w = OLA_FRAME.min(x.len() & !1);
    if w < 4 {
        return resample_to_len(x, out_len);
    }
    let hop = w / 2;
    let tol = hop as i64;
    let ratio = x.len() as f64 / out_len as f64;
    let last = (x.len() - w) as i64;
    let window: Vec<f64> = (0..w).map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / w as f64).sin().powi(2)).collect();
    let frames = out_len.div_ceil(hop) + 1;
    let mut out = vec![0.0; frames * hop + w];
    let mut norm = vec![0.0; out.len()];
    let mut prev = 0i64;
    for k in 0..frames {
        let pos = if k == 0 {
            0
        } else {
            let natural = (prev + hop as i64).min(last);
            let nominal = ((k * hop) as f64 * ratio).round() as i64;
            let (lo, hi) = ((nominal - tol).clamp(0, last), (nominal + tol).clamp(0, last));
            let reference = &x[natural as usize..natural as usize + w];
            let mut best = (f64::NEG_INFINITY, lo);
            for p in lo..=hi {
                let c: f64 = x[p as usize..p as usize + w].iter().zip(reference).map(|(a, b)| a * b).sum();
                if c > best.0 {
                    best = (c, p);
                }
            }
            best.1
        };
        let at = k * hop;
        for i in 0..w {
            out[at + i] += window[i] * x[pos as usize + i];
            norm[at + i] += window[i];
        }
        prev = pos;
    }
    out.truncate(out_len);
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-12 {
            *o /= n;
        }
    }
    Ok(out)
}

/// Applies one transform. Labels and identifiers are carried over unchanged.
pub fn apply_augmentation(cycle: &BreathingCycle, spec: &AugmentSpec) -> Result<BreathingCycle> {
    spec.validate()?;
    let x = &cycle.samples;
    if x.is_empty() {
        return Err(Error::Input(format!("empty cycle from recording `{}`", cycle.recording_id)));
    }
    let n = x.len();
    let samples: Vec<f64> = match spec.transform {
        Transform::Noise { snr_db } => {
            let noise = noise_for(x, snr_db, spec.seed);
            x.iter().zip(&noise).map(|(a, b)| a + b).collect()
        }
        Transform::Speed { factor } => {
            let len = ((n as f64 / factor).round() as usize).max(1);
            resample_to_len(x, len)?
        }
        Transform::Shift { seconds } => circular_shift(x, (seconds * TARGET_RATE as f64).round() as i64),
        Transform::Pitch { semitones } => {
            let ratio = 2f64.powf(semitones / 12.0);
            let len = ((n as f64 / ratio).round() as usize).max(1);
            // resampling to n/ratio samples scales every frequency by ratio, then restore the length
            time_stretch(&resample_to_len(x, len)?, n)?
        }
    };
    Ok(BreathingCycle { samples: samples.into_iter().map(clip).collect(), ..cycle.clone() })
}

/// Ranges transforms are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub snr_db: Vec<f64>,
    pub speed_factors: Vec<f64>,
    pub max_shift_s: f64,
    pub max_semitones: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { snr_db: vec![10.0, 20.0], speed_factors: vec![0.9, 1.1], max_shift_s: 0.25, max_semitones: 2.0 }
    }
}

impl AugmentConfig {
    pub fn draw(&self, rng: &mut impl Rng) -> Transform {
        let pick = |rng: &mut dyn rand::RngCore, v: &[f64], fallback: f64| {
            if v.is_empty() {
                fallback
            } else {
                v[rng.random_range(0..v.len())]
            }
        };
        match rng.random_range(0..4u8) {
            0 => Transform::Noise { snr_db: pick(rng, &self.snr_db, 20.0) },
            1 => Transform::Speed { factor: pick(rng, &self.speed_factors, 1.0) },
            2 => Transform::Shift { seconds: rng.random_range(-1.0..=1.0) * self.max_shift_s },
            _ => Transform::Pitch { semitones: rng.random_range(-1.0..=1.0) * self.max_semitones },
        }
    }
}

/// Per-class targets. Augmented copies are first spent on the class furthest below its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalancePolicy {
    pub targets: [usize; Label::COUNT],
}

impl BalancePolicy {
    /// Every class aims at the size of the largest one.
    pub fn to_largest(cycles: &[BreathingCycle]) -> Self {
        let counts = class_counts(cycles);
        let max = counts.iter().copied().max().unwrap_or(0);
        Self { targets: [max; Label::COUNT] }
    }
}

pub fn class_counts(cycles: &[BreathingCycle]) -> [usize; Label::COUNT] {
    let mut c = [0; Label::COUNT];
    for cy in cycles {
        c[cy.label.index()] += 1;
    }
    c
}

/// Independent stream seed for item `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn plan_sources(cycles: &[BreathingCycle], extra: usize, policy: Option<&BalancePolicy>) -> Vec<usize> {
    let n = cycles.len();
    let Some(policy) = policy else {
        return (0..extra).map(|j| j % n).collect();
    };
    let mut members: [Vec<usize>; Label::COUNT] = Default::default();
    for (i, c) in cycles.iter().enumerate() {
        members[c.label.index()].push(i);
    }
    let mut have = class_counts(cycles);
    let mut next = [0usize; Label::COUNT];
    let mut plan = Vec::with_capacity(extra);
    let mut fallback = 0usize;
    for _ in 0..extra {
        let class = (0..Label::COUNT)
            .filter(|&c| !members[c].is_empty() && have[c] < policy.targets[c])
            .max_by_key(|&c| (policy.targets[c] - have[c], std::cmp::Reverse(c)));
        let src = match class {
            Some(c) => {
                have[c] += 1;
                next[c] += 1;
                members[c][(next[c] - 1) % members[c].len()]
            }
            None => {
                fallback += 1;
                (fallback - 1) % n
            }
        };
        plan.push(src);
    }
    plan
}

/// Returns the originals followed by `(multiplier - 1) * n` augmented cycles.
pub fn augment_dataset(
    cycles: &[BreathingCycle],
    multiplier: usize,
    policy: Option<&BalancePolicy>,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Vec<BreathingCycle>> {
    if multiplier == 0 {
        return Err(Error::Argument("augmentation multiplier must be at least 1".into()));
    }
    if cycles.is_empty() || multiplier == 1 {
        return Ok(cycles.to_vec());
    }
    let plan = plan_sources(cycles, (multiplier - 1) * cycles.len(), policy);
    let augmented = crate::par::map_range(plan.len(), |j| {
        let item_seed = derive_seed(seed, j as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
        let spec = AugmentSpec::new(config.draw(&mut rng), derive_seed(item_seed, 0));
        apply_augmentation(&cycles[plan[j]], &spec)
    });
    let mut out = cycles.to_vec();
    for a in augmented {
        out.push(a?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cycle(samples: Vec<f64>, label: Label) -> BreathingCycle {
        BreathingCycle {
            end_s: samples.len() as f64 / 4000.0,
            samples,
            label,
            start_s: 0.0,
            patient_id: "7".into(),
            recording_id: "7_1_Tc_sc_X".into(),
        }
    }

    fn tone(freq: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 4000.0).sin()).collect()
    }

    fn peak_hz(x: &[f64]) -> f64 {
        let n = x.len();
        let mut buf: Vec<_> = x.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * 4000.0 / n as f64
    }

    #[test]
    fn zero_shift_is_identity() {
        let c = cycle(tone(300.0, 1000, 0.5), Label::Normal);
        let out = apply_augmentation(&c, &AugmentSpec::new(Transform::Shift { seconds: 0.0 }, 1)).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn shift_round_trip() {
        let c = cycle((0..1000).map(|i| (i as f64 / 1000.0) - 0.5).collect(), Label::Crackle);
        let a = apply_augmentation(&c, &AugmentSpec::new(Transform::Shift { seconds: 0.0375 }, 1)).unwrap();
        assert_eq!(a.samples[150], c.samples[0]);
        let b = apply_augmentation(&a, &AugmentSpec::new(Transform::Shift { seconds: -0.0375 }, 1)).unwrap();
        assert_eq!(b.samples, c.samples);
    }

    #[test]
    fn noise_power_matches_snr() {
        let x = tone(250.0, 10_000, 2f64.sqrt());
        let noise = noise_for(&x, 20.0, 3);
        let rms = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
        assert!((rms - 0.1).abs() <= 0.002, "rms {rms}");
    }

    #[test]
    fn speed_scales_length_and_frequency() {
        let c = cycle(tone(200.0, 4000, 0.5), Label::Wheeze);
        let out = apply_augmentation(&c, &AugmentSpec::new(Transform::Speed { factor: 1.25 }, 1)).unwrap();
        assert_eq!(out.samples.len(), 3200);
        assert!((peak_hz(&out.samples) - 250.0).abs() <= 4000.0 / 3200.0);
    }

    #[test]
    fn octave_pitch_keeps_length() {
        let c = cycle(tone(200.0, 4000, 0.5), Label::Both);
        let out = apply_augmentation(&c, &AugmentSpec::new(Transform::Pitch { semitones: 12.0 }, 1)).unwrap();
        assert_eq!(out.samples.len(), 4000);
        assert!((peak_hz(&out.samples) - 400.0).abs() <= 1.0, "peak {}", peak_hz(&out.samples));
    }

    #[test]
    fn stretch_keeps_frequency() {
        let x = tone(330.0, 3000, 0.5);
        let y = time_stretch(&x, 4000).unwrap();
        assert_eq!(y.len(), 4000);
        assert!((peak_hz(&y) - 330.0).abs() <= 1.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let c = cycle(vec![0.1; 10], Label::Normal);
        for t in [
            Transform::Speed { factor: 2.0 },
            Transform::Pitch { semitones: 13.0 },
            Transform::Noise { snr_db: f64::NAN },
        ] {
            assert!(apply_augmentation(&c, &AugmentSpec::new(t, 0)).is_err());
        }
        let empty = cycle(vec![], Label::Normal);
        assert!(matches!(
            apply_augmentation(&empty, &AugmentSpec::new(Transform::Shift { seconds: 0.0 }, 0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let cycles: Vec<_> = (0..10).map(|i| cycle(tone(100.0 + 30.0 * i as f64, 800, 0.4), Label::Normal)).collect();
        let cfg = AugmentConfig::default();
        assert_eq!(augment_dataset(&cycles, 1, None, &cfg, 5).unwrap(), cycles);
        let a = augment_dataset(&cycles, 3, None, &cfg, 5).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(&a[..10], &cycles[..]);
        let b = augment_dataset(&cycles, 3, None, &cfg, 5).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x
            .samples
            .iter()
            .map(|v| v.to_bits())
            .eq(y.samples.iter().map(|v| v.to_bits()))));
    }

    #[test]
    fn policy_fills_minority_first() {
        let mut cycles: Vec<_> = (0..8).map(|_| cycle(tone(200.0, 600, 0.3), Label::Normal)).collect();
        cycles.push(cycle(tone(300.0, 600, 0.3), Label::Wheeze));
        cycles.push(cycle(tone(400.0, 600, 0.3), Label::Crackle));
        let policy = BalancePolicy::to_largest(&cycles);
        let out = augment_dataset(&cycles, 2, Some(&policy), &AugmentConfig::default(), 1).unwrap();
        let counts = class_counts(&out);
        assert_eq!(counts[Label::Normal.index()], 8);
        assert_eq!(counts[Label::Wheeze.index()], 6);
        assert_eq!(counts[Label::Crackle.index()], 6);
    }
}
