//! Multi-device scene simulation: reverberant multi-speaker mixtures with
//! per-device latency and clock drift, diffuse background noise, and the
//! three training-target strategies.
//!
//! A scene is a pure function of its [`SceneSpec`] (including the seed):
//! the same spec always produces a bit-identical [`SceneOutput`].

pub mod noise;
pub mod room;
pub mod sources;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, frac, rms, wav, StftConfig};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

pub use noise::make_diffuse_noise;
pub use room::{direct_path, generate_rir, image_sources, RoomSpec, SPEED_OF_SOUND};

const SALT_SOURCE: u64 = 0x01;
const SALT_ACTIVITY: u64 = 0x02;
const SALT_NOISE: u64 = 0x03;
const SALT_TARGET_MIC: u64 = 0x04;
const SALT_SENSOR: u64 = 0x05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub position: [f64; 3],
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicSpec {
    pub position: [f64; 3],
    /// Device latency in seconds; negative values advance the stream.
    pub tau_s: f64,
    /// Clock rate ratio relative to nominal; 1.0 means no drift.
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStrategy {
    /// Direct sound mixture at a seeded-random fixed microphone.
    RandomMic,
    /// Direct sound mixture at the microphone with smallest latency.
    MinLatency,
    /// Per-speaker direct path at the microphone closest to that speaker.
    ClosestMic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub speakers: Vec<SpeakerSpec>,
    pub mics: Vec<MicSpec>,
    pub snr_db: f64,
    /// Target mixture RMS level in dBFS; `None` disables level scaling.
    #[serde(default)]
    pub level_db: Option<f64>,
    /// Desired fraction of active speech time with 2+ simultaneous talkers.
    pub overlap_ratio: f64,
    pub target_strategy: TargetStrategy,
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Number of point sources for the diffuse noise field; 0 disables noise.
    #[serde(default = "default_noise_sources")]
    pub noise_sources: usize,
    /// Per-device sensor self-noise SNR in dB, applied *after* the device
    /// clock transform so it is independent across microphones; `None`
    /// disables it.
    #[serde(default)]
    pub sensor_snr_db: Option<f64>,
}

fn default_duration() -> f64 {
    3.0
}

fn default_noise_sources() -> usize {
    8
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.speakers.is_empty() || self.speakers.len() > 8 {
            return Err(Error::Config(format!(
                "need 1..=8 speakers, got {}",
                self.speakers.len()
            )));
        }
        if self.mics.is_empty() || self.mics.len() > 16 {
            return Err(Error::Config(format!(
                "need 1..=16 microphones, got {}",
                self.mics.len()
            )));
        }
        for s in &self.speakers {
            if !self.room.contains(&s.position) {
                return Err(Error::InvalidGeometry(format!(
                    "speaker at {:?} outside room",
                    s.position
                )));
            }
        }
        for m in &self.mics {
            if !self.room.contains(&m.position) {
                return Err(Error::InvalidGeometry(format!(
                    "microphone at {:?} outside room",
                    m.position
                )));
            }
            if m.gamma <= 0.0 {
                return Err(Error::Config(format!(
                    "clock ratio must be positive, got {}",
                    m.gamma
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "overlap ratio must lie in [0, 1], got {}",
                self.overlap_ratio
            )));
        }
        if self.duration_s <= 0.1 {
            return Err(Error::Config("scene duration too short".into()));
        }
        Ok(())
    }
}

/// Per-scene ground truth recorded next to the waveforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub sample_rate_hz: f64,
    pub tau_s: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Closest microphone index per speaker (Euclidean, ties to lowest index).
    pub closest_mic: Vec<usize>,
    /// Microphone drawn for the random-mic target strategy.
    pub random_mic: usize,
    /// Index selected by the scene's own target strategy, where single-valued.
    pub target_mic: Option<usize>,
    /// Per-mic latency expressed in STFT frames (tau / hop).
    pub frame_offsets: Vec<f64>,
    pub hop_len_s: f64,
    pub overlap_measured: f64,
    pub target_strategy: TargetStrategy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneOutput {
    /// Asynchronous observations, one waveform per microphone.
    pub observations: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub clean_per_speaker: Vec<Vec<f64>>,
    /// Full impulse responses, indexed `[mic][speaker]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    /// Direct-path truncated impulse responses, indexed `[mic][speaker]`.
    pub direct_rirs: Vec<Vec<Vec<f64>>>,
    pub metadata: SceneMetadata,
}

/// Knobs used by diagnostics and tests to isolate parts of the pipeline.
#[derive(Clone, Debug)]
pub struct MixOptions {
    pub include_noise: bool,
    pub apply_async: bool,
    pub apply_level: bool,
    /// Zero out the contribution of unmasked speakers without changing any
    /// random draws.
    pub speaker_mask: Option<Vec<bool>>,
}

impl Default for MixOptions {
    fn default() -> Self {
        MixOptions {
            include_noise: true,
            apply_async: true,
            apply_level: true,
            speaker_mask: None,
        }
    }
}

/// Clock-drift / latency observation transform: `out[t] = x(gamma t - tau)`.
pub fn apply_async(x: &[f64], gamma: f64, tau_s: f64, fs: f64) -> Result<Vec<f64>> {
    if gamma <= 0.0 {
        return Err(Error::Config(format!(
            "clock ratio must be positive, got {gamma}"
        )));
    }
    Ok(frac::warp(x, gamma, tau_s, fs))
}

pub fn mix_scene(spec: &SceneSpec) -> Result<SceneOutput> {
    mix_scene_with(spec, &MixOptions::default())
}

pub fn mix_scene_with(spec: &SceneSpec, opts: &MixOptions) -> Result<SceneOutput> {
    spec.validate()?;
    let fs = spec.room.sample_rate_hz;
    let len = (spec.duration_s * fs).round() as usize;
    let n_spk = spec.speakers.len();
    let n_mic = spec.mics.len();
    let mask = |k: usize| opts.speaker_mask.as_ref().map_or(true, |m| m[k]);

    // source material and activity windows; all draws happen regardless of
    // the mask so masked runs stay seed-compatible
    let mut raw_sources = Vec::with_capacity(n_spk);
    for (k, spk) in spec.speakers.iter().enumerate() {
        let kind = sources::resolve_source_id(&spk.source_id);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SALT_SOURCE + k as u64 * 64));
        raw_sources.push(sources::generate(&kind, len, fs, &mut rng)?);
    }
    let mut act_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SALT_ACTIVITY));
    let (segments, overlap_measured) =
        place_activity(&mut act_rng, n_spk, len, fs, spec.overlap_ratio);
    let mut clean: Vec<Vec<f64>> = raw_sources;
    for (k, c) in clean.iter_mut().enumerate() {
        apply_segment(c, segments[k], fs);
    }

    // impulse responses
    let mut rirs = vec![Vec::with_capacity(n_spk); n_mic];
    let mut direct_rirs = vec![Vec::with_capacity(n_spk); n_mic];
    for (m, mic) in spec.mics.iter().enumerate() {
        for spk in &spec.speakers {
            let h = generate_rir(&spec.room, &spk.position, &mic.position)?;
            direct_rirs[m].push(direct_path(&h)?);
            rirs[m].push(h);
        }
    }

    // synchronous reverberant speech at each mic
    let mut speech: Vec<Vec<f64>> = vec![vec![0.0; len]; n_mic];
    for m in 0..n_mic {
        for k in 0..n_spk {
            if !mask(k) {
                continue;
            }
            let conv = fft_convolve(&clean[k], &rirs[m][k]);
            for (a, v) in speech[m].iter_mut().zip(conv.iter()) {
                *a += v;
            }
        }
    }

    // activity indicator over samples (any speaker active)
    let active: Vec<bool> = {
        let mut a = vec![false; len];
        for &(s, e) in &segments {
            for t in s..e.min(len) {
                a[t] = true;
            }
        }
        a
    };

    // diffuse noise at the requested SNR, measured over active-speech samples
    let mut mix = speech.clone();
    if opts.include_noise && spec.noise_sources > 0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SALT_NOISE));
        let mic_pos: Vec<[f64; 3]> = spec.mics.iter().map(|m| m.position).collect();
        let noise = make_diffuse_noise(&spec.room, &mic_pos, spec.noise_sources, len, &mut noise_rng)?;
        let speech_pow = mean_power_masked(&speech, &active);
        let noise_pow = mean_power_masked(&noise, &active);
        if speech_pow <= 0.0 {
            return Err(Error::DegenerateInput(
                "scene has no active speech energy".into(),
            ));
        }
        if noise_pow > 0.0 {
            let g = (speech_pow / noise_pow / 10f64.powf(spec.snr_db / 10.0)).sqrt();
            for m in 0..n_mic {
                for (a, v) in mix[m].iter_mut().zip(noise[m].iter()) {
                    *a += g * v;
                }
            }
        }
    }

    // overall level scaling, applied consistently to mixture / clean / target
    let mut g_level = 1.0;
    if opts.apply_level {
        if let Some(level_db) = spec.level_db {
            let p = mean_power_masked(&mix, &active);
            if p > 0.0 {
                g_level = 10f64.powf(level_db / 20.0) / p.sqrt();
            }
        }
    }
    for m in 0..n_mic {
        for v in mix[m].iter_mut() {
            *v *= g_level;
        }
    }
    for c in clean.iter_mut() {
        for v in c.iter_mut() {
            *v *= g_level;
        }
    }

    // per-device asynchronous observation
    let mut observations: Vec<Vec<f64>> = mix
        .iter()
        .zip(&spec.mics)
        .map(|(x, mic)| {
            if opts.apply_async {
                apply_async(x, mic.gamma, mic.tau_s, fs)
            } else {
                Ok(x.clone())
            }
        })
        .collect::<Result<_>>()?;

    // independent per-device sensor self-noise, added after the clock
    // transform so it is uncorrelated across microphones
    if let (Some(snr_db), true) = (spec.sensor_snr_db, opts.include_noise) {
        for (m, obs) in observations.iter_mut().enumerate() {
            let pow = obs.iter().map(|v| v * v).sum::<f64>() / obs.len().max(1) as f64;
            if pow <= 0.0 {
                continue;
            }
            let sigma = (pow * 10f64.powf(-snr_db / 10.0)).sqrt();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SALT_SENSOR + m as u64));
            for v in obs.iter_mut() {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                *v += sigma * n;
            }
        }
    }

    // ground-truth bookkeeping
    let closest_mic: Vec<usize> = spec
        .speakers
        .iter()
        .map(|spk| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (m, mic) in spec.mics.iter().enumerate() {
                let d: f64 = spk
                    .position
                    .iter()
                    .zip(&mic.position)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d - 1e-12 {
                    best_d = d;
                    best = m;
                }
            }
            best
        })
        .collect();
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SALT_TARGET_MIC));
    let random_mic = tgt_rng.gen_range(0..n_mic);
    let stft = StftConfig::for_sample_rate(fs);
    let hop_s = stft.hop_len_s();

    let metadata = SceneMetadata {
        sample_rate_hz: fs,
        tau_s: spec.mics.iter().map(|m| m.tau_s).collect(),
        gamma: spec.mics.iter().map(|m| m.gamma).collect(),
        closest_mic,
        random_mic,
        target_mic: None,
        frame_offsets: spec.mics.iter().map(|m| m.tau_s / hop_s).collect(),
        hop_len_s: hop_s,
        overlap_measured,
        target_strategy: spec.target_strategy,
    };

    let mut out = SceneOutput {
        observations,
        target: Vec::new(),
        clean_per_speaker: clean,
        rirs,
        direct_rirs,
        metadata,
    };
    let (target, target_mic) =
        synth_target_with(&out, spec.target_strategy, opts.apply_async, opts.speaker_mask.as_deref())?;
    out.target = target;
    out.metadata.target_mic = target_mic;
    Ok(out)
}

/// Build the training target for `scene` under the given strategy.
pub fn synth_target(scene: &SceneOutput, strategy: TargetStrategy) -> Result<Vec<f64>> {
    synth_target_with(scene, strategy, true, None).map(|(y, _)| y)
}

fn synth_target_with(
    scene: &SceneOutput,
    strategy: TargetStrategy,
    apply_async_transform: bool,
    speaker_mask: Option<&[bool]>,
) -> Result<(Vec<f64>, Option<usize>)> {
    let md = &scene.metadata;
    let fs = md.sample_rate_hz;
    let n_spk = scene.clean_per_speaker.len();
    let len = scene.observations[0].len();
    let mask = |k: usize| speaker_mask.map_or(true, |m| m[k]);

    let mic_for_speaker: Vec<usize> = match strategy {
        TargetStrategy::RandomMic => vec![md.random_mic; n_spk],
        TargetStrategy::MinLatency => {
            let mut best = 0;
            for (m, &tau) in md.tau_s.iter().enumerate() {
                if tau < md.tau_s[best] - 1e-15 {
                    best = m;
                }
            }
            vec![best; n_spk]
        }
        TargetStrategy::ClosestMic => md.closest_mic.clone(),
    };

    let mut y = vec![0.0; len];
    for k in 0..n_spk {
        if !mask(k) {
            continue;
        }
        let m = mic_for_speaker[k];
        let dry = fft_convolve(&scene.clean_per_speaker[k], &scene.direct_rirs[m][k]);
        let component = if apply_async_transform {
            apply_async(&dry[..len.min(dry.len())], md.gamma[m], md.tau_s[m], fs)?
        } else {
            dry[..len.min(dry.len())].to_vec()
        };
        for (a, v) in y.iter_mut().zip(component.iter()) {
            *a += v;
        }
    }
    let target_mic = match strategy {
        TargetStrategy::ClosestMic => None,
        _ => Some(mic_for_speaker[0]),
    };
    Ok((y, target_mic))
}

fn mean_power_masked(channels: &[Vec<f64>], active: &[bool]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ch in channels {
        for (v, &a) in ch.iter().zip(active) {
            if a {
                acc += v * v;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// One contiguous active segment per speaker, positioned by rejection
/// sampling so that measured overlap lands within +-0.1 of the request.
fn place_activity(
    rng: &mut ChaCha8Rng,
    n_spk: usize,
    len: usize,
    _fs: f64,
    overlap_ratio: f64,
) -> (Vec<(usize, usize)>, f64) {
    if n_spk == 1 {
        return (vec![(0, len)], 0.0);
    }
    let mut best: Option<(Vec<(usize, usize)>, f64)> = None;
    for _ in 0..300 {
        let segs: Vec<(usize, usize)> = (0..n_spk)
            .map(|_| {
                let dur = (rng.gen_range(0.45..0.70) * len as f64) as usize;
                let start = rng.gen_range(0..(len - dur).max(1));
                (start, start + dur)
            })
            .collect();
        let measured = measure_overlap(&segs, len);
        let err = (measured - overlap_ratio).abs();
        let better = best.as_ref().map_or(true, |(b, _)| {
            err < (measure_overlap(b, len) - overlap_ratio).abs()
        });
        if better {
            best = Some((segs, measured));
        }
        if err <= 0.1 {
            break;
        }
    }
    best.unwrap()
}

fn measure_overlap(segs: &[(usize, usize)], len: usize) -> f64 {
    let mut count = vec![0u8; len];
    for &(s, e) in segs {
        for t in s..e.min(len) {
            count[t] = count[t].saturating_add(1);
        }
    }
    let any = count.iter().filter(|&&c| c >= 1).count();
    let multi = count.iter().filter(|&&c| c >= 2).count();
    if any == 0 {
        0.0
    } else {
        multi as f64 / any as f64
    }
}

fn apply_segment(x: &mut [f64], (start, end): (usize, usize), fs: f64) {
    let ramp = (0.010 * fs) as usize;
    let end = end.min(x.len());
    for (t, v) in x.iter_mut().enumerate() {
        let g = if t < start || t >= end {
            0.0
        } else {
            let into = t - start;
            let left = end - 1 - t;
            let mut g = 1.0_f64;
            if into < ramp {
                g = g.min(0.5 * (1.0 - (std::f64::consts::PI * into as f64 / ramp as f64).cos()));
            }
            if left < ramp {
                g = g.min(0.5 * (1.0 - (std::f64::consts::PI * left as f64 / ramp as f64).cos()));
            }
            g
        };
        *v *= g;
    }
}

/// Write a scene to `dir` as per-mic WAVs plus `metadata.json`.
pub fn write_scene(dir: &Path, scene: &SceneOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let fs = scene.metadata.sample_rate_hz as u32;
    for (m, obs) in scene.observations.iter().enumerate() {
        wav::write_f32(&dir.join(format!("mic_{m:02}.wav")), obs, fs)?;
    }
    wav::write_f32(&dir.join("target.wav"), &scene.target, fs)?;
    for (k, c) in scene.clean_per_speaker.iter().enumerate() {
        wav::write_f32(&dir.join(format!("clean_spk_{k:02}.wav")), c, fs)?;
    }
    let json = serde_json::to_string_pretty(&scene.metadata)?;
    std::fs::write(dir.join("metadata.json"), json)?;
    Ok(())
}

pub fn scene_rms(x: &[f64]) -> f64 {
    rms(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            room: RoomSpec {
                dims: [5.0, 4.0, 3.0],
                reflection_coeff: 0.5,
                max_image_order: 1,
                sample_rate_hz: 16_000.0,
            },
            speakers: vec![
                SpeakerSpec {
                    position: [1.5, 1.0, 1.5],
                    source_id: "speech".into(),
                },
                SpeakerSpec {
                    position: [3.5, 3.0, 1.5],
                    source_id: "harmonic".into(),
                },
            ],
            mics: vec![
                MicSpec {
                    position: [1.2, 2.0, 1.2],
                    tau_s: 0.005,
                    gamma: 1.0,
                },
                MicSpec {
                    position: [3.8, 2.0, 1.2],
                    tau_s: -0.003,
                    gamma: 1.0001,
                },
            ],
            snr_db: 20.0,
            level_db: Some(-30.0),
            overlap_ratio: 0.5,
            target_strategy: TargetStrategy::ClosestMic,
            seed,
            duration_s: 1.0,
            noise_sources: 2,
            sensor_snr_db: None,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small_spec(77);
        let a = mix_scene(&spec).unwrap();
        let b = mix_scene(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn min_latency_picks_argmin() {
        let mut spec = small_spec(3);
        spec.mics.push(MicSpec {
            position: [2.5, 2.5, 1.2],
            tau_s: 0.020,
            gamma: 1.0,
        });
        spec.mics[0].tau_s = 0.030;
        spec.mics[1].tau_s = 0.005;
        spec.target_strategy = TargetStrategy::MinLatency;
        let out = mix_scene(&spec).unwrap();
        assert_eq!(out.metadata.target_mic, Some(1));
    }

    #[test]
    fn single_speaker_single_mic_strategies_agree() {
        let mut spec = small_spec(5);
        spec.speakers.truncate(1);
        spec.mics.truncate(1);
        let out = mix_scene(&spec).unwrap();
        let a = synth_target(&out, TargetStrategy::RandomMic).unwrap();
        let b = synth_target(&out, TargetStrategy::MinLatency).unwrap();
        let c = synth_target(&out, TargetStrategy::ClosestMic).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn overlap_ratio_is_approached() {
        let mut spec = small_spec(11);
        spec.duration_s = 2.0;
        for target in [0.2, 0.5, 0.8] {
            spec.overlap_ratio = target;
            let out = mix_scene(&spec).unwrap();
            assert!(
                (out.metadata.overlap_measured - target).abs() <= 0.1,
                "target {target} measured {}",
                out.metadata.overlap_measured
            );
        }
    }

    #[test]
    fn high_snr_leaves_negligible_noise() {
        let mut spec = small_spec(9);
        spec.snr_db = 60.0;
        spec.level_db = None;
        let noisy = mix_scene_with(
            &spec,
            &MixOptions {
                apply_async: false,
                ..MixOptions::default()
            },
        )
        .unwrap();
        let dry = mix_scene_with(
            &spec,
            &MixOptions {
                apply_async: false,
                include_noise: false,
                ..MixOptions::default()
            },
        )
        .unwrap();
        let speech_pow: f64 = dry.observations[0].iter().map(|v| v * v).sum();
        let resid_pow: f64 = noisy.observations[0]
            .iter()
            .zip(&dry.observations[0])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(10.0 * (resid_pow / speech_pow).log10() <= -50.0);
    }
}
