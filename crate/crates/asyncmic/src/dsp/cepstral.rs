//! Cepstral distance between two waveforms, in dB.
//!
//! Frames are 20 ms Hann-windowed with 50 % overlap. Each frame's real
//! cepstrum is truncated to order 24; coefficient 0 is excluded, which
//! makes the metric invariant to a global gain on either signal. Only
//! frames within 40 dB of the reference's peak frame energy contribute.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const CEPSTRUM_ORDER: usize = 24;
pub const ACTIVITY_GATE_DB: f64 = 40.0;

/// Real cepstrum of one frame: IDFT of the log magnitude spectrum.
/// Returns coefficients `c_0 .. c_order`.
pub fn real_cepstrum(frame: &[f64], fft_size: usize, order: usize) -> Vec<f64> {
    let fft = crate::dsp::plan_forward(fft_size);
    let ifft = crate::dsp::plan_inverse(fft_size);
    let mut buf: Vec<Complex64> = (0..fft_size)
        .map(|i| Complex64::new(frame.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft.process(&mut buf);
    for z in buf.iter_mut() {
        let m = z.norm().max(1e-10);
        *z = Complex64::new(m.ln(), 0.0);
    }
    ifft.process(&mut buf);
    (0..=order).map(|q| buf[q].re / fft_size as f64).collect()
}

/// Mean per-frame cepstral distance in dB over active frames.
pub fn cepstral_distance(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "cepstral_distance needs equal lengths, got {} and {}",
            reference.len(),
            estimate.len()
        )));
    }
    let win_len = 320;
    let hop = 160;
    let fft_size = 512;
    if reference.len() < win_len {
        return Err(Error::ShapeMismatch(
            "input shorter than one analysis frame".into(),
        ));
    }
    let window = super::hann(win_len);
    let n_frames = (reference.len() - win_len) / hop + 1;

    let frame_energy: Vec<f64> = (0..n_frames)
        .map(|t| {
            let s = t * hop;
            (0..win_len)
                .map(|i| (reference[s + i] * window[i]).powi(2))
                .sum()
        })
        .collect();
    let peak = frame_energy.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::DegenerateInput(
            "all-silent reference in cepstral_distance".into(),
        ));
    }
    let gate = peak * 10f64.powf(-ACTIVITY_GATE_DB / 10.0);

    let scale = 10.0 / std::f64::consts::LN_10;
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut fr = vec![0.0; win_len];
    let mut fe = vec![0.0; win_len];
    for t in 0..n_frames {
        if frame_energy[t] < gate {
            continue;
        }
        let s = t * hop;
        for i in 0..win_len {
            fr[i] = reference[s + i] * window[i];
            fe[i] = estimate[s + i] * window[i];
        }
        let cr = real_cepstrum(&fr, fft_size, CEPSTRUM_ORDER);
        let ce = real_cepstrum(&fe, fft_size, CEPSTRUM_ORDER);
        let sq: f64 = (1..=CEPSTRUM_ORDER).map(|k| (cr[k] - ce[k]).powi(2)).sum();
        acc += scale * (2.0 * sq).sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateInput(
            "no active frames in cepstral_distance".into(),
        ));
    }
    Ok(acc / count as f64)
}
