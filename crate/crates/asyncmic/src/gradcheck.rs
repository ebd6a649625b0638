//! Finite-difference verification of every analytic backward pass: the four
//! communication modules in isolation and the end-to-end model on a tiny
//! configuration.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::params::ParamStore;
use crate::attention::{AttentionModuleKind, CommModule};
use crate::error::Result;
use crate::model::{BackboneConfig, Model};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Pass threshold for isolated modules.
pub const MODULE_TOL: f64 = 1e-4;
/// Pass threshold for the end-to-end model.
pub const MODEL_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-2)
}

/// Check one communication module's parameter and input gradients against
/// central differences on the scalar loss `sum(w * out)`.
pub fn check_module(
    kind: AttentionModuleKind,
    m: usize,
    t: usize,
    d: usize,
    l: usize,
    seed: u64,
) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let module = CommModule::new(kind, l, d, "gc.");
    let mut store = ParamStore::new();
    module.init_params(&mut store, &mut rng);
    let z = Array3::from_shape_fn((m, t, d), |_| rng.gen_range(-1.0..1.0));
    let w = Array3::from_shape_fn((m, t, d), |_| rng.gen_range(-1.0..1.0));

    // analytic
    let (_, cache) = module.forward_array(&z, &store)?;
    let dz = module.backward(&cache, &w, &mut store)?;
    let grads = store.flat_grads();
    store.zero_grads();

    let loss = |store: &ParamStore, z: &Array3<f64>| -> Result<f64> {
        let (out, _) = module.forward_array(z, store)?;
        Ok(out.iter().zip(w.iter()).map(|(o, wi)| o * wi).sum())
    };

    let mut max_err = 0.0f64;
    // parameters
    let theta = store.flat_values();
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += FD_EPS;
        store.set_flat_values(&plus);
        let lp = loss(&store, &z)?;
        let mut minus = theta.clone();
        minus[i] -= FD_EPS;
        store.set_flat_values(&minus);
        let lm = loss(&store, &z)?;
        max_err = max_err.max(rel_err(grads[i], (lp - lm) / (2.0 * FD_EPS)));
    }
    store.set_flat_values(&theta);
    // inputs
    for idx in ndarray::indices(z.raw_dim()) {
        let mut zp = z.clone();
        zp[idx] += FD_EPS;
        let lp = loss(&store, &zp)?;
        let mut zm = z.clone();
        zm[idx] -= FD_EPS;
        let lm = loss(&store, &zm)?;
        max_err = max_err.max(rel_err(dz[idx], (lp - lm) / (2.0 * FD_EPS)));
    }
    Ok(GradCheckResult {
        name: kind.label().to_string(),
        max_rel_err: max_err,
        tolerance: MODULE_TOL,
    })
}

/// Tiny end-to-end configuration: M=2 channels, 16-sample window (F=9),
/// T=8 frames, d=8.
pub fn tiny_backbone(kind: AttentionModuleKind) -> BackboneConfig {
    BackboneConfig {
        d_hidden: 8,
        n_blocks: 1,
        module_kind: kind,
        window_l: 2,
        compression_c: 0.3,
        sample_rate_hz: 16_000.0,
        win_len_override: Some(16),
    }
}

/// Check the end-to-end model: all parameters plus the input waveforms,
/// against the real training loss on a random target.
pub fn check_model(kind: AttentionModuleKind, seed: u64) -> Result<GradCheckResult> {
    let cfg = tiny_backbone(kind);
    let mut model = Model::init(&cfg, seed)?;
    let len = cfg.stft_config().signal_len(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let wave = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        // smooth-ish material keeps spectral magnitudes away from zero,
        // where |S|^c is poorly conditioned for finite differences
        let f1: f64 = rng.gen_range(0.05..0.2);
        let f2: f64 = rng.gen_range(0.2..0.4);
        let (p1, p2) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
        (0..len)
            .map(|n| {
                (f1 * n as f64 + p1).sin()
                    + 0.6 * (f2 * n as f64 + p2).sin()
                    + 0.1 * rng.gen_range(-1.0..1.0)
            })
            .collect()
    };
    let x = vec![wave(&mut rng), wave(&mut rng)];
    let target = wave(&mut rng);

    // analytic
    let fwd = model.forward(&x)?;
    let (_, dsum) = model.loss(&fwd, &target)?;
    let input_grads = model.backward(&fwd, &dsum, true)?.unwrap();
    let grads = model.store.flat_grads();
    model.store.zero_grads();

    let eval = |model: &Model, x: &[Vec<f64>]| -> Result<f64> {
        let fwd = model.forward(x)?;
        Ok(model.loss(&fwd, &target)?.0)
    };

    let mut max_err = 0.0f64;
    let theta = model.store.flat_values();
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += FD_EPS;
        model.store.set_flat_values(&plus);
        let lp = eval(&model, &x)?;
        let mut minus = theta.clone();
        minus[i] -= FD_EPS;
        model.store.set_flat_values(&minus);
        let lm = eval(&model, &x)?;
        max_err = max_err.max(rel_err(grads[i], (lp - lm) / (2.0 * FD_EPS)));
    }
    model.store.set_flat_values(&theta);
    for ch in 0..x.len() {
        for n in 0..len {
            let mut xp = x.clone();
            xp[ch][n] += FD_EPS;
            let lp = eval(&model, &xp)?;
            let mut xm = x.clone();
            xm[ch][n] -= FD_EPS;
            let lm = eval(&model, &xm)?;
            max_err = max_err.max(rel_err(input_grads[ch][n], (lp - lm) / (2.0 * FD_EPS)));
        }
    }
    Ok(GradCheckResult {
        name: format!("model_{}", kind.label()),
        max_rel_err: max_err,
        tolerance: MODEL_TOL,
    })
}

/// The standard gradcheck battery: every module kind plus the end-to-end
/// tiny model with windowed cross-attention.
pub fn check_all(seed: u64) -> Result<Vec<GradCheckResult>> {
    let kinds = [
        AttentionModuleKind::Tac,
        AttentionModuleKind::FrameAttention,
        AttentionModuleKind::FullXAttn,
        AttentionModuleKind::WindowedXAttn,
    ];
    let mut results = Vec::new();
    for kind in kinds {
        results.push(check_module(kind, 3, 6, 4, 2, seed)?);
    }
    results.push(check_model(AttentionModuleKind::WindowedXAttn, seed)?);
    Ok(results)
}
