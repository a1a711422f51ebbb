//! Synthetic breathing-cycle sets with known structure, for tests and benchmarks.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, BreathingCycle, Label, TARGET_RATE};
use crate::error::Result;

pub const TOY_TONES: [f64; 4] = [150.0, 400.0, 800.0, 1400.0];
pub const POPULATION_TONES: [f64; 4] = [250.0, 500.0, 1000.0, 1900.0];

fn tone<R: Rng>(freq: f64, n: usize, amp: f64, noise: f64, rng: &mut R) -> Vec<f64> {
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|t| {
            amp * (2.0 * PI * freq * t as f64 / TARGET_RATE as f64 + phase).sin() + rng.random_range(-noise..=noise)
        })
        .collect()
}

fn cycle(samples: Vec<f64>, label: Label, patient: String, recording: String) -> BreathingCycle {
    BreathingCycle {
        end_s: samples.len() as f64 / TARGET_RATE as f64,
        samples,
        label,
        start_s: 0.0,
        patient_id: patient,
        recording_id: recording,
    }
}

/// `per_class` cycles per class; class k is a 0.75-1.5 s tone at `TOY_TONES[k]`.
pub fn tone_classes(per_class: usize, seed: u64) -> Vec<BreathingCycle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(4 * per_class);
    for (k, &f) in TOY_TONES.iter().enumerate() {
        for i in 0..per_class {
            let n = rng.random_range(3000..6000);
            let amp = rng.random_range(0.2..0.6);
            let samples = tone(f, n, amp, 0.01, &mut rng);
            out.push(cycle(samples, Label::ALL[k], format!("{}", 100 + i % 5), format!("toy_{k}_{i}")));
        }
    }
    out
}

/// Patients whose class tones are all scaled by a patient-specific factor of up to
/// `max_shift_octaves` octaves. Class tones sit an octave apart, so classes collide
/// across patients but stay separable within one. Even-numbered cycles in every
/// recording are normal; the rest are a random abnormal class.
pub fn shifted_population(
    patients: usize,
    recordings: usize,
    per_recording: usize,
    max_shift_octaves: f64,
    id_prefix: &str,
    seed: u64,
) -> Vec<BreathingCycle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(patients * recordings * per_recording);
    for p in 0..patients {
        let shift = 2f64.powf(rng.random_range(-max_shift_octaves..=max_shift_octaves));
        let patient = format!("{id_prefix}{}", 200 + p);
        for r in 0..recordings {
            for c in 0..per_recording {
                let label = if c % 2 == 0 { Label::Normal } else { Label::ALL[1 + rng.random_range(0..3)] };
                let f = (POPULATION_TONES[label.index()] * shift).min(1950.0);
                let n = rng.random_range(3600..4400);
                let amp = rng.random_range(0.2..0.5);
                let samples = tone(f, n, amp, 0.02, &mut rng);
                out.push(cycle(samples, label, patient.clone(), format!("{patient}_{r}_Tc_sc_Synth")));
            }
        }
    }
    out
}

/// Writes cycles as `recording_id.wav` + `recording_id.txt` pairs at 4 kHz, one
/// file per recording with cycles back to back. Offsets sit half a sample past
/// each boundary so slicing recovers the exact sample ranges.
pub fn write_dataset(dir: &Path, cycles: &[BreathingCycle]) -> Result<()> {
    let mut order: Vec<&str> = Vec::new();
    for c in cycles {
        if !order.contains(&c.recording_id.as_str()) {
            order.push(&c.recording_id);
        }
    }
    let rate = TARGET_RATE as f64;
    for rec in order {
        let (mut samples, mut ann) = (Vec::new(), String::new());
        for c in cycles.iter().filter(|c| c.recording_id == rec) {
            let lo = samples.len();
            samples.extend_from_slice(&c.samples);
            let flags = (
                matches!(c.label, Label::Crackle | Label::Both) as u8,
                matches!(c.label, Label::Wheeze | Label::Both) as u8,
            );
            let _ = writeln!(
                ann,
                "{:.6}\t{:.6}\t{}\t{}",
                (lo as f64 + 0.5) / rate,
                (samples.len() as f64 + 0.5) / rate,
                flags.0,
                flags.1
            );
        }
        samples.push(0.0);
        write_wav(&dir.join(format!("{rec}.wav")), &samples, TARGET_RATE)?;
        std::fs::write(dir.join(format!("{rec}.txt")), ann)?;
    }
    Ok(())
}
