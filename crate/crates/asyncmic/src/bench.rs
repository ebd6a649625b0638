//! Peak-memory and wall-time benchmark for the attention variants.
//!
//! Peak heap usage is read from the counting allocator (see
//! [`crate::alloc_counter`]); binaries that want real measurements must
//! install it as their global allocator. The dominant intermediate is the
//! attention probability tensor: `M^2 T^2` scalars for full cross-attention
//! against `M^2 T (2L+1)` for the windowed variant, so doubling T should
//! roughly quadruple the former and double the latter.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc_counter;
use crate::attention::{AttentionModuleKind, CommModule};
use crate::attention::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "default_t_values")]
    pub t_values: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_l")]
    pub window_l: usize,
    /// Grid points whose estimated working set exceeds this are recorded
    /// as OOM rows instead of being attempted.
    #[serde(default = "default_limit")]
    pub mem_limit_bytes: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_t_values() -> Vec<usize> {
    vec![256, 512, 1024]
}
fn default_m() -> usize {
    2
}
fn default_d() -> usize {
    16
}
fn default_l() -> usize {
    4
}
fn default_limit() -> u64 {
    1 << 31
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            t_values: default_t_values(),
            m: default_m(),
            d: default_d(),
            window_l: default_l(),
            mem_limit_bytes: default_limit(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchPoint {
    pub kind: AttentionModuleKind,
    pub m: usize,
    pub t: usize,
    pub d: usize,
    /// Window half-size; meaningful for the windowed variant only.
    pub window_l: usize,
    pub peak_bytes: Option<u64>,
    pub wall_ms: Option<f64>,
    pub oom: bool,
}

/// Lower bound on the working set of one forward pass, in bytes.
pub fn estimate_bytes(kind: AttentionModuleKind, m: usize, t: usize, d: usize, l: usize) -> u64 {
    let f = 8u64; // f64
    let mtd = (m * t * d) as u64 * f;
    let probs = match kind {
        AttentionModuleKind::FullXAttn => (m * m * t * t) as u64 * f,
        AttentionModuleKind::WindowedXAttn => (m * m * t * (2 * l + 1)) as u64 * f,
        AttentionModuleKind::FrameAttention => (t * m * m) as u64 * f,
        AttentionModuleKind::Tac => 0,
    };
    // input + q/k/v + aggregate + concat/out, all M*T*d-sized
    probs + 8 * mtd
}

/// Run the grid for the full and windowed variants at every T.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchPoint>> {
    if cfg.t_values.is_empty() {
        return Err(Error::Config("bench needs at least one T value".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::new();
    for &t in &cfg.t_values {
        for kind in [
            AttentionModuleKind::FullXAttn,
            AttentionModuleKind::WindowedXAttn,
        ] {
            let est = estimate_bytes(kind, cfg.m, t, cfg.d, cfg.window_l);
            if est > cfg.mem_limit_bytes {
                points.push(BenchPoint {
                    kind,
                    m: cfg.m,
                    t,
                    d: cfg.d,
                    window_l: cfg.window_l,
                    peak_bytes: None,
                    wall_ms: None,
                    oom: true,
                });
                continue;
            }
            let module = CommModule::new(kind, cfg.window_l, cfg.d, "bench.");
            let mut store = ParamStore::new();
            module.init_params(&mut store, &mut rng);
            let z = Array3::from_shape_fn((cfg.m, t, cfg.d), |_| rng.gen_range(-1.0..1.0));
            // warm-up so FFT/matmul one-time setup does not pollute the peak
            let _ = module.forward_array(&z, &store)?;
            alloc_counter::reset_peak();
            let start = Instant::now();
            let (out, cache) = module.forward_array(&z, &store)?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let peak = alloc_counter::peak_bytes();
            drop(out);
            drop(cache);
            points.push(BenchPoint {
                kind,
                m: cfg.m,
                t,
                d: cfg.d,
                window_l: cfg.window_l,
                peak_bytes: alloc_counter::installed().then_some(peak as u64),
                wall_ms: Some(wall),
                oom: false,
            });
        }
    }
    Ok(points)
}

/// Peak-memory ratio between `t_hi` and `t_lo` rows of one kind.
pub fn doubling_ratio(
    points: &[BenchPoint],
    kind: AttentionModuleKind,
    t_lo: usize,
    t_hi: usize,
) -> Option<f64> {
    let find = |t: usize| {
        points
            .iter()
            .find(|p| p.kind == kind && p.t == t)
            .and_then(|p| p.peak_bytes)
    };
    let lo = find(t_lo)? as f64;
    let hi = find(t_hi)? as f64;
    if lo > 0.0 {
        Some(hi / lo)
    } else {
        None
    }
}

pub fn write_csv(path: &Path, points: &[BenchPoint]) -> Result<()> {
    let mut s = String::from("kind,m,t,d,window_l,peak_bytes,wall_ms,oom\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.kind.label(),
            p.m,
            p.t,
            p.d,
            p.window_l,
            p.peak_bytes.map(|b| b.to_string()).unwrap_or_default(),
            p.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default(),
            p.oom
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_scales_quadratically_for_full() {
        let a = estimate_bytes(AttentionModuleKind::FullXAttn, 2, 512, 16, 4);
        let b = estimate_bytes(AttentionModuleKind::FullXAttn, 2, 1024, 16, 4);
        let ratio = b as f64 / a as f64;
        assert!(ratio > 3.5 && ratio < 4.0, "ratio {ratio}");
    }

    #[test]
    fn over_limit_points_become_oom_rows() {
        let cfg = BenchConfig {
            t_values: vec![4096],
            mem_limit_bytes: 1024,
            ..BenchConfig::default()
        };
        let points = run_bench(&cfg).unwrap();
        assert!(points.iter().all(|p| p.oom));
    }

    #[test]
    fn small_grid_runs() {
        let cfg = BenchConfig {
            t_values: vec![16, 32],
            ..BenchConfig::default()
        };
        let points = run_bench(&cfg).unwrap();
        assert_eq!(points.len(), 4);
        assert!(points.iter().all(|p| !p.oom));
    }
}
