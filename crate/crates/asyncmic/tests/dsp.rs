//! DSP identities checked against independent reference computations.

use asyncmic::dsp::cepstral::{cepstral_distance, CEPSTRUM_ORDER};
use asyncmic::dsp::frac::warp;
use asyncmic::dsp::xcorr::xcorr_align;
use asyncmic::dsp::{compress, compress_value, decompress, istft, stft, stft_adjoint, StftConfig};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn lowpass(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for _ in 0..4 {
        for t in 1..y.len() {
            y[t] = 0.5 * y[t] + 0.5 * y[t - 1];
        }
    }
    y
}

#[test]
fn cola_round_trip_interior_exact() {
    let cfg = StftConfig::for_sample_rate(16_000.0);
    let x = noise(16_000, 3);
    let y = istft(&stft(&x, &cfg).unwrap());
    let n: usize = y.len() - 2 * cfg.win_len;
    let err: f64 = (cfg.win_len..y.len() - cfg.win_len)
        .map(|i| (x[i] - y[i]).powi(2))
        .sum::<f64>()
        / n as f64;
    assert!(err.sqrt() < 1e-6, "interior RMS {}", err.sqrt());
}

#[test]
fn double_round_trip_is_idempotent() {
    // istft . stft is a projection: applying it twice equals applying once
    let cfg = StftConfig::for_sample_rate(16_000.0);
    let x = noise(8_000, 9);
    let y = istft(&stft(&x, &cfg).unwrap());
    let z = istft(&stft(&y, &cfg).unwrap());
    for i in 0..y.len().min(z.len()) {
        assert!((y[i] - z[i]).abs() < 1e-9, "sample {i}");
    }
}

#[test]
fn stft_adjoint_matches_directional_derivative() {
    // For the linear map S and loss L(x) = sum(a*re(Sx) + b*im(Sx)),
    // adjoint(G) dot delta must equal L(delta) exactly.
    let cfg = StftConfig::with_window(16_000.0, 64);
    let len = cfg.signal_len(10);
    let delta = noise(len, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = cfg.num_frames(len);
    let grad = Array2::from_shape_fn((t, cfg.num_bins()), |_| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let dx = stft_adjoint(&grad, &cfg, len);
    let lhs: f64 = dx.iter().zip(&delta).map(|(g, d)| g * d).sum();
    let s = stft(&delta, &cfg).unwrap();
    let rhs: f64 = s
        .data
        .iter()
        .zip(grad.iter())
        .map(|(z, g)| g.re * z.re + g.im * z.im)
        .sum();
    assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn compress_decompress_exact_inverse() {
    let cfg = StftConfig::for_sample_rate(16_000.0);
    let x = noise(4_000, 7);
    let spec = stft(&x, &cfg).unwrap();
    for c in [0.3, 0.5, 1.0] {
        let back = decompress(&compress(&spec, c).unwrap());
        for (a, b) in spec.data.iter().zip(back.data.iter()) {
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1e-12), "c={c}");
        }
    }
}

#[test]
fn compress_magnitude_and_phase_contract() {
    let z = Complex64::new(-3.0, 4.0); // |z| = 5
    let c = compress_value(z, 0.3);
    assert!((c.norm() - 5f64.powf(0.3)).abs() < 1e-12);
    assert!((c.arg() - z.arg()).abs() < 1e-12);
}

/// Naive O(N^2) DFT-based cepstral distance mirroring the documented
/// definition, computed without the library's FFT path.
fn cd_reference(reference: &[f64], estimate: &[f64]) -> f64 {
    let (win, hop, nfft) = (320usize, 160usize, 512usize);
    let w: Vec<f64> = (0..win)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos()))
        .collect();
    let frames = (reference.len() - win) / hop + 1;
    let energies: Vec<f64> = (0..frames)
        .map(|t| (0..win).map(|i| (reference[t * hop + i] * w[i]).powi(2)).sum())
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    let gate = peak * 10f64.powf(-4.0);
    let cep = |frame: &[f64]| -> Vec<f64> {
        let logmag: Vec<f64> = (0..nfft)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in frame.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * n) as f64 / nfft as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                (re * re + im * im).sqrt().max(1e-10).ln()
            })
            .collect();
        (0..=CEPSTRUM_ORDER)
            .map(|q| {
                logmag
                    .iter()
                    .enumerate()
                    .map(|(k, &l)| l * (2.0 * std::f64::consts::PI * (q * k) as f64 / nfft as f64).cos())
                    .sum::<f64>()
                    / nfft as f64
            })
            .collect()
    };
    let mut acc = 0.0;
    let mut count = 0;
    for t in 0..frames {
        if energies[t] < gate {
            continue;
        }
        let fr: Vec<f64> = (0..win).map(|i| reference[t * hop + i] * w[i]).collect();
        let fe: Vec<f64> = (0..win).map(|i| estimate[t * hop + i] * w[i]).collect();
        let (cr, ce) = (cep(&fr), cep(&fe));
        let sq: f64 = (1..=CEPSTRUM_ORDER).map(|k| (cr[k] - ce[k]).powi(2)).sum();
        acc += 10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt();
        count += 1;
    }
    acc / count as f64
}

#[test]
fn cepstral_distance_matches_naive_dft_reference() {
    let x = lowpass(&noise(800, 21));
    let y = lowpass(&noise(800, 22));
    let lib = cepstral_distance(&x, &y).unwrap();
    let oracle = cd_reference(&x, &y);
    assert!((lib - oracle).abs() < 1e-6, "lib {lib} oracle {oracle}");
    assert!(lib > 0.0);
}

#[test]
fn cepstral_distance_gain_invariant_both_sides() {
    let x = lowpass(&noise(4800, 2));
    let y = lowpass(&noise(4800, 3));
    let base = cepstral_distance(&x, &y).unwrap();
    let xg: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
    let yg: Vec<f64> = y.iter().map(|v| 0.2 * v).collect();
    assert!((cepstral_distance(&xg, &y).unwrap() - base).abs() < 1e-9);
    assert!((cepstral_distance(&x, &yg).unwrap() - base).abs() < 1e-9);
}

#[test]
fn warp_drift_lag_matches_analytic_formula() {
    // y[t] = x(gamma t - tau fs): a segment of y centered at c matches x
    // delayed by tau fs - (gamma - 1) c samples.
    let fs = 16_000.0;
    let x = lowpass(&noise(48_000, 13));
    for (gamma, tau_s) in [(1.0005, 0.0017), (0.9996, -0.002), (1.0, 0.003)] {
        let y = warp(&x, gamma, tau_s, fs);
        for center in [8_000usize, 24_000, 40_000] {
            let w = 2_000;
            let a = &x[center - w..center + w];
            let b = &y[center - w..center + w];
            let expect = tau_s * fs - (gamma - 1.0) * center as f64;
            let got = xcorr_align(a, b, 150).unwrap();
            assert!(
                (got.lag as f64 - expect).abs() <= 2.0,
                "gamma {gamma} tau {tau_s} center {center}: lag {} expected {expect:.1}",
                got.lag
            );
            assert!(got.score > 0.9);
        }
    }
}
