//! Band-limited fractional delay and clock-drift warping via a 32-tap
//! windowed-sinc interpolation kernel.

/// Half-width of the interpolation kernel in samples.
pub const KERNEL_HALF: usize = 16;

/// Hann-windowed sinc kernel, zero outside |t| < 16. Exactly 1 at t = 0
/// and 0 at other integers, so integer shifts stay bit-transparent.
pub fn kernel(t: f64) -> f64 {
    let half = KERNEL_HALF as f64;
    if t.abs() >= half {
        return 0.0;
    }
    let sinc = if t.abs() < 1e-12 {
        1.0
    } else {
        let pt = std::f64::consts::PI * t;
        pt.sin() / pt
    };
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t / half).cos());
    sinc * w
}

/// Evaluate `x` at fractional position `u`; positions outside the signal
/// contribute zero.
pub fn interp(x: &[f64], u: f64) -> f64 {
    if !(-(KERNEL_HALF as f64) < u && u < x.len() as f64 + KERNEL_HALF as f64) {
        return 0.0;
    }
    let base = u.floor();
    let frac = u - base;
    if frac.abs() < 1e-12 {
        // exact integer position: pass the sample through untouched
        let n = base as i64;
        return if n >= 0 && (n as usize) < x.len() {
            x[n as usize]
        } else {
            0.0
        };
    }
    let base = base as i64;
    let mut acc = 0.0;
    for k in -(KERNEL_HALF as i64 - 1)..=(KERNEL_HALF as i64) {
        let n = base + k;
        if n >= 0 && (n as usize) < x.len() {
            acc += x[n as usize] * kernel(u - n as f64);
        }
    }
    acc
}

/// Resample `x` onto the warped time axis `u(t) = gamma * t - tau_s * fs`,
/// realizing per-device clock drift and latency. Output length equals the
/// input length; out-of-range samples are zero-filled.
pub fn warp(x: &[f64], gamma: f64, tau_s: f64, fs: f64) -> Vec<f64> {
    let shift = tau_s * fs;
    (0..x.len())
        .map(|t| interp(x, gamma * t as f64 - shift))
        .collect()
}
