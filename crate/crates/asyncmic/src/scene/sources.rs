//! Procedural source material plus user WAV ingestion.
//!
//! `source_id` strings resolve as:
//!   - `"speech"` — speech-shaped noise with syllabic amplitude modulation
//!   - `"harmonic"` / `"harmonic:<f0>"` — AM harmonic tone
//!   - `"impulses"` — sparse impulse train (useful for alignment checks)
//!   - anything else — path to a WAV file at the scene sample rate

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{rms, wav};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum SourceKind {
    SpeechShaped,
    Harmonic { f0: Option<f64> },
    Impulses,
    Wav(std::path::PathBuf),
}

pub fn resolve_source_id(id: &str) -> SourceKind {
    if id == "speech" {
        SourceKind::SpeechShaped
    } else if id == "harmonic" {
        SourceKind::Harmonic { f0: None }
    } else if let Some(rest) = id.strip_prefix("harmonic:") {
        SourceKind::Harmonic {
            f0: rest.parse().ok(),
        }
    } else if id == "impulses" {
        SourceKind::Impulses
    } else {
        SourceKind::Wav(std::path::PathBuf::from(id))
    }
}

/// Generate `len` samples of source material, RMS-normalized to 0.1.
pub fn generate(kind: &SourceKind, len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut x = match kind {
        SourceKind::SpeechShaped => speech_shaped(len, fs, rng),
        SourceKind::Harmonic { f0 } => {
            let f0 = f0.unwrap_or_else(|| rng.gen_range(140.0..260.0));
            harmonic(len, fs, f0, rng)
        }
        SourceKind::Impulses => impulses(len, fs, rng),
        SourceKind::Wav(path) => {
            let (samples, file_fs) = wav::read(path)?;
            if (file_fs as f64 - fs).abs() > 0.5 {
                return Err(Error::Config(format!(
                    "wav {} has sample rate {file_fs}, scene expects {fs}",
                    path.display()
                )));
            }
            if rms(&samples) < 1e-9 {
                return Err(Error::DegenerateInput(format!(
                    "silent source wav {}",
                    path.display()
                )));
            }
            // tile or truncate to the scene length
            (0..len).map(|i| samples[i % samples.len()]).collect()
        }
    };
    let r = rms(&x);
    if r < 1e-12 {
        return Err(Error::DegenerateInput("generated source is silent".into()));
    }
    let g = 0.1 / r;
    for v in x.iter_mut() {
        *v *= g;
    }
    Ok(x)
}

fn speech_shaped(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // white noise through two one-pole lowpasses approximates the long-term
    // speech spectrum tilt; a slow AM envelope mimics syllable rhythm
    let alpha = (-2.0 * std::f64::consts::PI * 1200.0 / fs).exp();
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    let am_rate = rng.gen_range(2.5..4.5);
    let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..len)
        .map(|t| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            y1 = alpha * y1 + (1.0 - alpha) * w;
            y2 = alpha * y2 + (1.0 - alpha) * y1;
            let env = 0.55
                + 0.45 * (std::f64::consts::TAU * am_rate * t as f64 / fs + am_phase).sin();
            y2 * env
        })
        .collect()
}

fn harmonic(len: usize, fs: f64, f0: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phases: Vec<f64> = (0..8)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let am_rate = rng.gen_range(1.5..3.5);
    (0..len)
        .map(|t| {
            let tt = t as f64 / fs;
            let mut v = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < fs / 2.0 * 0.9 {
                    v += (std::f64::consts::TAU * f * tt + ph).sin() / (h + 1) as f64;
                }
            }
            v * (0.6 + 0.4 * (std::f64::consts::TAU * am_rate * tt).sin())
        })
        .collect()
}

fn impulses(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; len];
    let spacing = (0.05 * fs) as usize;
    let mut t = rng.gen_range(0..spacing.max(1));
    while t < len {
        x[t] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        t += spacing + rng.gen_range(0..spacing.max(1));
    }
    x
}
