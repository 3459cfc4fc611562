//! Synthetic two-lead ECG records with N/L/R/A/V beats.
//!
//! Each beat is a sum of Gaussian bumps (P, Q, R, S, T) whose shapes follow
//! the textbook morphology of the class: bundle-branch blocks widen and notch
//! the QRS, atrial premature beats arrive early with an altered P wave,
//! ventricular premature beats are wide, P-less and followed by a
//! compensatory pause. Records carry baseline wander and white noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Annotation, Recording};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub records: usize,
    pub duration_seconds: f64,
    pub sampling_rate: f64,
    pub gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            records: 6,
            duration_seconds: 300.0,
            sampling_rate: 360.0,
            gain: 200.0,
            seed: 0,
        }
    }
}

/// Conduction pattern of a whole record; decides which beat types occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rhythm {
    Sinus,
    LeftBundleBlock,
    RightBundleBlock,
}

impl Rhythm {
    fn beat_mix(self) -> &'static [(&'static str, f64)] {
        match self {
            Rhythm::Sinus => &[("N", 0.6), ("A", 0.2), ("V", 0.2)],
            Rhythm::LeftBundleBlock => &[("L", 0.8), ("V", 0.2)],
            Rhythm::RightBundleBlock => &[("R", 0.75), ("A", 0.15), ("V", 0.1)],
        }
    }
}

// (amplitude mV, offset from R peak s, width s)
type Wave = (f64, f64, f64);

const P_WAVE: Wave = (0.15, -0.20, 0.025);

fn morphology(symbol: &str) -> Vec<Wave> {
    match symbol {
        "N" => vec![P_WAVE, (-0.12, -0.03, 0.008), (1.0, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.30, 0.28, 0.050)],
        "L" => vec![P_WAVE, (0.75, -0.01, 0.028), (0.65, 0.05, 0.025), (-0.10, 0.10, 0.015), (-0.35, 0.32, 0.060)],
        "R" => vec![P_WAVE, (0.65, -0.01, 0.012), (-0.40, 0.03, 0.014), (0.55, 0.07, 0.018), (0.15, 0.32, 0.050)],
        "A" => vec![(-0.12, -0.14, 0.020), (0.06, -0.10, 0.015), (-0.12, -0.03, 0.008), (1.0, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.28, 0.26, 0.045)],
        "V" => vec![(1.30, 0.0, 0.040), (-0.70, 0.09, 0.040), (-0.50, 0.36, 0.080)],
        _ => Vec::new(),
    }
}

fn pick<'a>(mix: &[(&'a str, f64)], rng: &mut impl Rng) -> &'a str {
    let mut u: f64 = rng.random();
    for &(s, p) in mix {
        if u < p {
            return s;
        }
        u -= p;
    }
    mix[mix.len() - 1].0
}

/// One record plus its beat annotations (R-peak positions).
pub fn synth_record(
    name: &str,
    rhythm: Rhythm,
    config: &SynthConfig,
    seed: u64,
) -> Result<(Recording, Vec<Annotation>)> {
    if !(config.sampling_rate > 0.0 && config.duration_seconds > 2.0 && config.gain > 0.0) {
        return Err(config_err!("synthetic records need a positive rate, gain and > 2 s duration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = config.sampling_rate;
    let n = (config.duration_seconds * fs).round() as usize;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let rr_base = 60.0 / rng.random_range(60.0..90.0);
    let scale = rng.random_range(0.8..1.2);
    let wander_amp = rng.random_range(0.05..0.15);
    let wander_freq = rng.random_range(0.15..0.4);
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise_sd = rng.random_range(0.015..0.035);

    let mut lead = vec![0.0; n];
    let mut anns = Vec::new();
    let mut t = 0.6;
    let mut pause = 1.0;
    while t < config.duration_seconds - 0.6 {
        let symbol = pick(rhythm.beat_mix(), &mut rng);
        let jitter = 1.0 + 0.03 * unit.sample(&mut rng);
        let coupling = match symbol {
            "A" => 0.65,
            "V" => 0.6,
            _ => 1.0,
        };
        t += rr_base * jitter * coupling * pause - rr_base;
        pause = if symbol == "V" { 1.4 } else { 1.0 };
        let peak = (t * fs).round() as usize;
        if peak < n {
            for (amp, offset, width) in morphology(symbol) {
                let a = scale * amp * (1.0 + 0.05 * unit.sample(&mut rng));
                let w = width * (1.0 + 0.05 * unit.sample(&mut rng));
                let centre = t + offset;
                let lo = (((centre - 5.0 * w) * fs).floor().max(0.0)) as usize;
                let hi = (((centre + 5.0 * w) * fs).ceil() as usize).min(n);
                for (i, slot) in lead.iter_mut().enumerate().take(hi).skip(lo) {
                    let dt = i as f64 / fs - centre;
                    *slot += a * (-0.5 * (dt / w).powi(2)).exp();
                }
            }
            anns.push(Annotation {
                sample_index: peak,
                symbol: symbol.to_string(),
            });
        }
        t += rr_base;
    }

    let to_adc = |mv: f64| (mv * config.gain).round().clamp(-2048.0, 2047.0) as i16;
    let mut ch0 = Vec::with_capacity(n);
    let mut ch1 = Vec::with_capacity(n);
    for (i, &v) in lead.iter().enumerate() {
        let s = i as f64 / fs;
        let wander = wander_amp * (std::f64::consts::TAU * wander_freq * s + wander_phase).sin();
        ch0.push(to_adc(v + wander + noise_sd * unit.sample(&mut rng)));
        ch1.push(to_adc(0.4 * v - wander + noise_sd * unit.sample(&mut rng)));
    }
    let rec = Recording::new(name, vec![ch0, ch1], fs, config.gain)?;
    Ok((rec, anns))
}

/// A corpus cycling through sinus, left- and right-block records.
pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<(Recording, Vec<Annotation>)>> {
    const RHYTHMS: [Rhythm; 3] = [Rhythm::Sinus, Rhythm::LeftBundleBlock, Rhythm::RightBundleBlock];
    (0..config.records)
        .map(|i| {
            let seed = crate::trial::derive_seed(config.seed, i as u64);
            synth_record(&format!("s{:03}", 100 + i), RHYTHMS[i % 3], config, seed)
        })
        .collect()
}
