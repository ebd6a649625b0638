//! Channel-communication modules operating on hidden representations of
//! shape `M x T x d` (microphones by frames by features):
//!
//! - TAC: per-frame transform/average across microphones,
//! - frame attention: softmax attention along the microphone axis at each
//!   frame index,
//! - full temporal cross-attention: every microphone pair attends over all
//!   frame pairs,
//! - windowed cross-attention: attention restricted to a +-L frame band,
//!   shrinking peak intermediate memory from `O(M^2 T^2)` to
//!   `O(M^2 T (2L+1))`.
//!
//! All four share the same combine stage: the aggregated representation is
//! projected, concatenated with the input, and refined by a linear layer.
//! Backward passes are analytic and verified against finite differences.
//!
//! # Example
//!
//! Run the windowed variant standalone and inspect its attention weights:
//!
//! ```
//! use asyncmic::attention::params::ParamStore;
//! use asyncmic::attention::{AttentionModuleKind, CommModule};
//! use ndarray::Array3;
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha8Rng;
//!
//! let (m, t, d, l) = (3, 16, 8, 2);
//! let mut store = ParamStore::new();
//! let module = CommModule::new(AttentionModuleKind::WindowedXAttn, l, d, "wca.");
//! module.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(5));
//!
//! let z = Array3::from_shape_fn((m, t, d), |(a, b, c)| ((a + 2 * b + 3 * c) as f64).sin());
//! let (out, cache) = module.forward_array(&z, &store)?;
//! assert_eq!(out.dim(), (m, t, d));
//!
//! // the cache exposes the attention distribution over the 2L+1 window slots
//! let (probs, window) = cache.attention_weights().unwrap();
//! assert_eq!(window, Some(l));
//! assert_eq!(probs.dim(), (m, m, t, 2 * l + 1));
//! # Ok::<(), asyncmic::Error>(())
//! ```

pub mod params;

mod frame;
mod tac;
mod xattn;

use ndarray::{concatenate, Array2, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use params::{init_linear, linear_bwd, linear_fwd, ParamStore};

pub use xattn::unfold_time;

/// Tagged choice of channel-communication module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionModuleKind {
    Tac,
    FrameAttention,
    FullXAttn,
    WindowedXAttn,
}

impl AttentionModuleKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttentionModuleKind::Tac => "tac",
            AttentionModuleKind::FrameAttention => "frame_attention",
            AttentionModuleKind::FullXAttn => "full_x_attn",
            AttentionModuleKind::WindowedXAttn => "windowed_x_attn",
        }
    }
}

/// Hidden representation of all microphone channels with frame timing.
#[derive(Clone, Debug, PartialEq)]
pub struct MicTensor {
    pub data: Array3<f64>,
    pub frame_hop_s: f64,
    pub mic_ids: Vec<usize>,
}

impl MicTensor {
    pub fn new(data: Array3<f64>, frame_hop_s: f64) -> Result<Self> {
        let (m, t, d) = data.dim();
        if m == 0 || t == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "MicTensor dims must be positive, got {m}x{t}x{d}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(
                "MicTensor contains non-finite entries".into(),
            ));
        }
        let mic_ids = (0..m).collect();
        Ok(MicTensor {
            data,
            frame_hop_s,
            mic_ids,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// One communication module instance bound to a parameter name prefix.
#[derive(Clone, Debug)]
pub struct CommModule {
    pub kind: AttentionModuleKind,
    /// Half window for the windowed variant, in frames.
    pub window_l: usize,
    pub d: usize,
    pub prefix: String,
}

/// Kind-specific intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub enum AttnCache {
    /// TAC stores the transformed features F.
    Tac { f: Array3<f64> },
    /// Per-frame attention over mics: probs is (T, M, M).
    Frame {
        q: Array3<f64>,
        k: Array3<f64>,
        v: Array3<f64>,
        probs: Array3<f64>,
    },
    /// Full temporal cross-attention: probs is (M, M, T, T), row softmax
    /// over the last axis (key frames), per source mic.
    Full {
        q: Array3<f64>,
        k: Array3<f64>,
        v: Array3<f64>,
        probs: Array4<f64>,
    },
    /// Windowed cross-attention: probs is (M, M, T, 2L+1); out-of-range
    /// slots carry probability exactly zero.
    Windowed {
        q: Array3<f64>,
        k: Array3<f64>,
        v: Array3<f64>,
        probs: Array4<f64>,
        l: usize,
    },
}

/// Forward intermediates for one module invocation.
#[derive(Clone, Debug)]
pub struct CommCache {
    pub z: Array3<f64>,
    pub attn: AttnCache,
    pub a: Array3<f64>,
    pub cat: Array3<f64>,
}

impl CommCache {
    /// Attention weights as (query mic, key mic, query frame, slot) where
    /// slot is the key frame (full) or window slot (windowed). `None` for
    /// modules without cross-time attention.
    pub fn attention_weights(&self) -> Option<(&Array4<f64>, Option<usize>)> {
        match &self.attn {
            AttnCache::Full { probs, .. } => Some((probs, None)),
            AttnCache::Windowed { probs, l, .. } => Some((probs, Some(*l))),
            _ => None,
        }
    }
}

impl CommModule {
    pub fn new(kind: AttentionModuleKind, window_l: usize, d: usize, prefix: &str) -> Self {
        CommModule {
            kind,
            window_l,
            d,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, layer: &str) -> String {
        format!("{}{}", self.prefix, layer)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.d;
        match self.kind {
            AttentionModuleKind::Tac => {
                init_linear(store, &self.name("p"), d, d, rng);
            }
            _ => {
                init_linear(store, &self.name("q"), d, d, rng);
                init_linear(store, &self.name("k"), d, d, rng);
                init_linear(store, &self.name("v"), d, d, rng);
            }
        }
        init_linear(store, &self.name("a"), d, d, rng);
        init_linear(store, &self.name("c"), d, 2 * d, rng);
    }

    pub fn forward(&self, z: &MicTensor, store: &ParamStore) -> Result<(MicTensor, CommCache)> {
        let (out, cache) = self.forward_array(&z.data, store)?;
        let mut t = MicTensor::new(out, z.frame_hop_s)?;
        t.mic_ids = z.mic_ids.clone();
        Ok((t, cache))
    }

    pub fn forward_array(
        &self,
        z: &Array3<f64>,
        store: &ParamStore,
    ) -> Result<(Array3<f64>, CommCache)> {
        let (m, t, d) = z.dim();
        if d != self.d {
            return Err(Error::ShapeMismatch(format!(
                "module expects feature dim {}, got {d}",
                self.d
            )));
        }
        let (a, attn) = match self.kind {
            AttentionModuleKind::Tac => {
                let f = self.project(store, "p", z, m, t, d);
                let a = tac::aggregate(&f);
                (a, AttnCache::Tac { f })
            }
            AttentionModuleKind::FrameAttention => {
                let q = self.project(store, "q", z, m, t, d);
                let k = self.project(store, "k", z, m, t, d);
                let v = self.project(store, "v", z, m, t, d);
                let (a, probs) = frame::aggregate(&q, &k, &v);
                (a, AttnCache::Frame { q, k, v, probs })
            }
            AttentionModuleKind::FullXAttn => {
                let q = self.project(store, "q", z, m, t, d);
                let k = self.project(store, "k", z, m, t, d);
                let v = self.project(store, "v", z, m, t, d);
                let (a, probs) = xattn::full_aggregate(&q, &k, &v);
                (a, AttnCache::Full { q, k, v, probs })
            }
            AttentionModuleKind::WindowedXAttn => {
                let q = self.project(store, "q", z, m, t, d);
                let k = self.project(store, "k", z, m, t, d);
                let v = self.project(store, "v", z, m, t, d);
                let (a, probs) = xattn::windowed_aggregate(&q, &k, &v, self.window_l);
                (
                    a,
                    AttnCache::Windowed {
                        q,
                        k,
                        v,
                        probs,
                        l: self.window_l,
                    },
                )
            }
        };
        // shared combine: out = P_c(concat[z, P_a(a)])
        let u3 = self.project_from(store, "a", &a, m, t, d);
        let cat = concatenate(Axis(2), &[z.view(), u3.view()]).unwrap();
        let cat2 = flat2(&cat, m * t, 2 * d);
        let out2 = linear_fwd(store, &self.name("c"), cat2.view());
        let out = out2.into_shape_with_order((m, t, d)).unwrap();
        Ok((
            out,
            CommCache {
                z: z.clone(),
                attn,
                a,
                cat,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &CommCache,
        d_out: &Array3<f64>,
        store: &mut ParamStore,
    ) -> Result<Array3<f64>> {
        let (m, t, d) = cache.z.dim();
        if d_out.dim() != (m, t, d) {
            return Err(Error::ShapeMismatch(format!(
                "upstream grad shape {:?} does not match forward shape {:?}",
                d_out.dim(),
                cache.z.dim()
            )));
        }
        let dout2 = flat2(d_out, m * t, d);
        let cat2 = flat2(&cache.cat, m * t, 2 * d);
        let dcat2 = linear_bwd(store, &self.name("c"), cat2.view(), dout2.view());
        let dcat = dcat2.into_shape_with_order((m, t, 2 * d)).unwrap();
        let mut dz = dcat.slice(ndarray::s![.., .., ..d]).to_owned();
        let du = dcat.slice(ndarray::s![.., .., d..]).to_owned();
        let a2 = flat2(&cache.a, m * t, d);
        let du2 = flat2(&du, m * t, d);
        let da2 = linear_bwd(store, &self.name("a"), a2.view(), du2.view());
        let da = da2.into_shape_with_order((m, t, d)).unwrap();

        match &cache.attn {
            AttnCache::Tac { f } => {
                let df = tac::backward(&da, m);
                dz += &self.project_bwd(store, "p", f, &cache.z, &df, m, t, d);
            }
            AttnCache::Frame { q, k, v, probs } => {
                let (dq, dk, dv) = frame::backward(q, k, v, probs, &da);
                dz += &self.project_bwd(store, "q", q, &cache.z, &dq, m, t, d);
                dz += &self.project_bwd(store, "k", k, &cache.z, &dk, m, t, d);
                dz += &self.project_bwd(store, "v", v, &cache.z, &dv, m, t, d);
            }
            AttnCache::Full { q, k, v, probs } => {
                let (dq, dk, dv) = xattn::full_backward(q, k, v, probs, &da);
                dz += &self.project_bwd(store, "q", q, &cache.z, &dq, m, t, d);
                dz += &self.project_bwd(store, "k", k, &cache.z, &dk, m, t, d);
                dz += &self.project_bwd(store, "v", v, &cache.z, &dv, m, t, d);
            }
            AttnCache::Windowed { q, k, v, probs, l } => {
                let (dq, dk, dv) = xattn::windowed_backward(q, k, v, probs, &da, *l);
                dz += &self.project_bwd(store, "q", q, &cache.z, &dq, m, t, d);
                dz += &self.project_bwd(store, "k", k, &cache.z, &dk, m, t, d);
                dz += &self.project_bwd(store, "v", v, &cache.z, &dv, m, t, d);
            }
        }
        Ok(dz)
    }

    fn project(
        &self,
        store: &ParamStore,
        layer: &str,
        x: &Array3<f64>,
        m: usize,
        t: usize,
        d: usize,
    ) -> Array3<f64> {
        let x2 = flat2(x, m * t, d);
        linear_fwd(store, &self.name(layer), x2.view())
            .into_shape_with_order((m, t, d))
            .unwrap()
    }

    fn project_from(
        &self,
        store: &ParamStore,
        layer: &str,
        x: &Array3<f64>,
        m: usize,
        t: usize,
        d: usize,
    ) -> Array3<f64> {
        self.project(store, layer, x, m, t, d)
    }

    /// Backward of a projection layer applied to `z`; accumulates weight
    /// grads and returns d z.
    fn project_bwd(
        &self,
        store: &mut ParamStore,
        layer: &str,
        _y: &Array3<f64>,
        z: &Array3<f64>,
        dy: &Array3<f64>,
        m: usize,
        t: usize,
        d: usize,
    ) -> Array3<f64> {
        let z2 = flat2(z, m * t, d);
        let dy2 = flat2(dy, m * t, d);
        linear_bwd(store, &self.name(layer), z2.view(), dy2.view())
            .into_shape_with_order((m, t, d))
            .unwrap()
    }
}

/// Reshape an (a, b, c) array to 2-D (rows, cols) in logical row-major
/// order, regardless of the source memory layout (`concatenate` can
/// produce Fortran-layout arrays when an axis has length one).
fn flat2(x: &Array3<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), x.iter().copied().collect()).unwrap()
}

/// Numerically stable in-place softmax over `row`; positions where
/// `valid` is false receive exactly zero probability.
pub(crate) fn softmax_masked_inplace(row: &mut [f64], valid: &dyn Fn(usize) -> bool) {
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if valid(i) && v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for (i, v) in row.iter_mut().enumerate() {
        if valid(i) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    if sum > 0.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward of a softmax row: ds = p * (dp - sum(dp * p)).
pub(crate) fn softmax_backward_row(p: &[f64], dp: &[f64], ds: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for i in 0..p.len() {
        ds[i] = p[i] * (dp[i] - dot);
    }
}

pub use params::{load_checkpoint, save_checkpoint};
