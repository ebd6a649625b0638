//! Normalized cross-correlation lag estimation, used as an independent
//! alignment oracle for drift/latency diagnostics.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    /// Lag of `b` relative to `a` in samples; positive means `b` is delayed.
    pub lag: i64,
    /// Signed normalized correlation at that lag, in [-1, 1].
    pub score: f64,
}

/// Find the lag in `[-max_lag, max_lag]` with the strongest normalized
/// correlation magnitude between `a` and `b`. Normalization is computed
/// over the overlapping region of each candidate lag.
pub fn xcorr_align(a: &[f64], b: &[f64], max_lag: usize) -> Result<Alignment> {
    if max_lag >= a.len().min(b.len()) / 2 {
        return Err(Error::Config(format!(
            "max_lag {} too large for signal lengths {} / {}",
            max_lag,
            a.len(),
            b.len()
        )));
    }
    let ea: f64 = a.iter().map(|v| v * v).sum();
    let eb: f64 = b.iter().map(|v| v * v).sum();
    if ea <= 0.0 || eb <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero-energy input to xcorr_align".into(),
        ));
    }
    let mut best = Alignment { lag: 0, score: 0.0 };
    let mut best_mag = -1.0;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        // b[t + lag] pairs with a[t]
        let t0 = 0.max(-lag);
        let t1 = (a.len() as i64).min(b.len() as i64 - lag);
        if t1 <= t0 {
            continue;
        }
        let mut num = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for t in t0..t1 {
            let va = a[t as usize];
            let vb = b[(t + lag) as usize];
            num += va * vb;
            na += va * va;
            nb += vb * vb;
        }
        if na <= 0.0 || nb <= 0.0 {
            continue;
        }
        let score = num / (na * nb).sqrt();
        if score.abs() > best_mag {
            best_mag = score.abs();
            best = Alignment { lag, score };
        }
    }
    Ok(best)
}
