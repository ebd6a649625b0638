//! Minimal encoder/bottleneck/decoder backbone with a pluggable
//! channel-communication module.
//!
//! Per channel: STFT -> magnitude-compressed complex features -> shared
//! linear encoder -> `n_blocks` x (shared GRU + communication module,
//! each wrapped in a residual connection) -> shared linear head
//! predicting the complex compressed spectrum. The
//! final estimate is the sum of the per-channel spectra, decompressed and
//! inverted back to a waveform.
//!
//! # Example
//!
//! Forward, loss, and one analytic backward pass:
//!
//! ```
//! use asyncmic::attention::AttentionModuleKind;
//! use asyncmic::model::{BackboneConfig, Model};
//!
//! let cfg = BackboneConfig {
//!     d_hidden: 8,
//!     n_blocks: 1,
//!     module_kind: AttentionModuleKind::Tac,
//!     window_l: 2,
//!     compression_c: 0.3,
//!     sample_rate_hz: 16_000.0,
//!     win_len_override: Some(32), // tiny window for a fast example
//! };
//! let mut model = Model::init(&cfg, 3)?;
//!
//! // two identical 1-channel copies -> permutation cannot matter
//! let x: Vec<f64> = (0..400).map(|n| (0.05 * n as f64).sin()).collect();
//! let obs = vec![x.clone(), x.clone()];
//! let fwd = model.forward(&obs)?;
//! let (loss, grad) = model.loss(&fwd, &x)?;
//! assert!(loss.is_finite());
//!
//! // one analytic gradient step through the whole network
//! model.backward(&fwd, &grad, true)?;
//! # Ok::<(), asyncmic::Error>(())
//! ```

pub mod gru;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::attention::params::{init_linear, linear_bwd, linear_fwd, ParamStore};
use crate::attention::{AttentionModuleKind, CommCache, CommModule};
use crate::dsp::{
    compress, decompress, istft, stft, stft_adjoint, CompressedSpec, Spectrogram, StftConfig,
};
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use gru::{Gru, GruCache};

/// Blend between the complex and magnitude-only terms of the loss.
pub const LOSS_LAMBDA: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    #[serde(default = "default_d_hidden")]
    pub d_hidden: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    pub module_kind: AttentionModuleKind,
    #[serde(default = "default_window_l")]
    pub window_l: usize,
    #[serde(default = "default_compression")]
    pub compression_c: f64,
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    /// Override the 20 ms analysis window (samples); used by tiny test
    /// configurations.
    #[serde(default)]
    pub win_len_override: Option<usize>,
}

fn default_d_hidden() -> usize {
    64
}
fn default_n_blocks() -> usize {
    2
}
fn default_window_l() -> usize {
    4
}
fn default_compression() -> f64 {
    0.3
}
fn default_fs() -> f64 {
    16_000.0
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hidden < 8 {
            return Err(Error::Config(format!(
                "d_hidden must be at least 8, got {}",
                self.d_hidden
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if !(self.compression_c > 0.0 && self.compression_c <= 1.0) {
            return Err(Error::Config(format!(
                "compression exponent must lie in (0, 1], got {}",
                self.compression_c
            )));
        }
        Ok(())
    }

    pub fn stft_config(&self) -> StftConfig {
        match self.win_len_override {
            Some(w) => StftConfig::with_window(self.sample_rate_hz, w),
            None => StftConfig::for_sample_rate(self.sample_rate_hz),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    pub gru: Vec<GruCache>,
    pub gru_out: Array3<f64>,
    pub comm: CommCache,
}

/// Everything the backward pass needs from one forward invocation.
#[derive(Clone, Debug)]
pub struct ModelForward {
    pub specs: Vec<Spectrogram>,
    pub feats: Array3<f64>,
    pub z0: Array3<f64>,
    pub blocks: Vec<BlockCache>,
    pub z_final: Array3<f64>,
    /// Summed per-channel compressed spectrum, re/im interleaved (T, 2F).
    pub s_hat: Array2<f64>,
    pub y_hat: Vec<f64>,
    pub input_len: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: BackboneConfig,
    pub stft_cfg: StftConfig,
    pub store: ParamStore,
    grus: Vec<Gru>,
    comms: Vec<CommModule>,
}

impl Model {
    /// Fresh model with seeded fan-in-uniform initialization.
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut model = Model::skeleton(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA11));
        let f = model.stft_cfg.num_bins();
        init_linear(&mut model.store, "enc", cfg.d_hidden, 2 * f, &mut rng);
        for b in 0..cfg.n_blocks {
            let g = model.grus[b].clone();
            g.init_params(&mut model.store, &mut rng);
            let c = model.comms[b].clone();
            c.init_params(&mut model.store, &mut rng);
        }
        init_linear(&mut model.store, "dec", 2 * f, cfg.d_hidden, &mut rng);
        Ok(model)
    }

    /// Rebuild a model around an existing parameter store (checkpoints).
    pub fn from_store(cfg: &BackboneConfig, store: ParamStore) -> Result<Model> {
        cfg.validate()?;
        let mut model = Model::skeleton(cfg)?;
        model.store = store;
        Ok(model)
    }

    fn skeleton(cfg: &BackboneConfig) -> Result<Model> {
        let stft_cfg = cfg.stft_config();
        let grus = (0..cfg.n_blocks)
            .map(|b| Gru::new(&format!("blk{b}.gru"), cfg.d_hidden, cfg.d_hidden))
            .collect();
        let comms = (0..cfg.n_blocks)
            .map(|b| {
                CommModule::new(
                    cfg.module_kind,
                    cfg.window_l,
                    cfg.d_hidden,
                    &format!("blk{b}.comm."),
                )
            })
            .collect();
        Ok(Model {
            cfg: cfg.clone(),
            stft_cfg,
            store: ParamStore::new(),
            grus,
            comms,
        })
    }

    /// Encode waveforms into the shared hidden representation (M, T, d).
    pub fn encode(&self, x: &[Vec<f64>]) -> Result<(Array3<f64>, Vec<Spectrogram>, Array3<f64>)> {
        if x.is_empty() {
            return Err(Error::ShapeMismatch("need at least one channel".into()));
        }
        let len = x[0].len();
        if x.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch(
                "all channels must have equal length".into(),
            ));
        }
        let mut specs = Vec::with_capacity(x.len());
        let mut feats_vec = Vec::with_capacity(x.len());
        for ch in x {
            let spec = stft(ch, &self.stft_cfg)?;
            let comp = compress(&spec, self.cfg.compression_c)?;
            feats_vec.push(spec_to_real(&comp.data));
            specs.push(spec);
        }
        let (t, f2) = feats_vec[0].dim();
        let mut feats = Array3::zeros((x.len(), t, f2));
        for (m, fm) in feats_vec.into_iter().enumerate() {
            feats.index_axis_mut(Axis(0), m).assign(&fm);
        }
        let m = x.len();
        let feats2 = feats.to_shape((m * t, f2)).unwrap().to_owned();
        let z2 = linear_fwd(&self.store, "enc", feats2.view());
        let z = z2.into_shape_with_order((m, t, self.cfg.d_hidden)).unwrap();
        Ok((z, specs, feats))
    }

    /// Full forward pass including the waveform estimate `y_hat`.
    pub fn forward(&self, x: &[Vec<f64>]) -> Result<ModelForward> {
        self.forward_opts(x, true)
    }

    /// Forward pass; when `with_waveform` is false the decompress/iSTFT
    /// stage is skipped and `y_hat` is left empty (training only needs the
    /// spectrum).
    pub fn forward_opts(&self, x: &[Vec<f64>], with_waveform: bool) -> Result<ModelForward> {
        let (z0, specs, feats) = self.encode(x)?;
        let (m, t, d) = z0.dim();
        let mut z = z0.clone();
        let mut blocks = Vec::with_capacity(self.cfg.n_blocks);
        for b in 0..self.cfg.n_blocks {
            // residual connections around both the GRU and the
            // communication module: h = z + GRU(z), z' = h + Comm(h)
            let mut gru_caches = Vec::with_capacity(m);
            let mut h = z.clone();
            for mi in 0..m {
                let (g, cache) = self.grus[b].forward(z.index_axis(Axis(0), mi), &self.store);
                let mut hm = h.index_axis_mut(Axis(0), mi);
                hm += &g;
                gru_caches.push(cache);
            }
            let (c_out, comm_cache) = self.comms[b].forward_array(&h, &self.store)?;
            let z_next = &h + &c_out;
            blocks.push(BlockCache {
                gru: gru_caches,
                gru_out: h,
                comm: comm_cache,
            });
            z = z_next;
        }
        let z_final = z;
        let f2 = 2 * self.stft_cfg.num_bins();
        let zf2 = z_final.to_shape((m * t, d)).unwrap().to_owned();
        let dec2 = linear_fwd(&self.store, "dec", zf2.view());
        let dec = dec2.into_shape_with_order((m, t, f2)).unwrap();
        let s_hat = dec.sum_axis(Axis(0));

        let y_hat = if with_waveform {
            let comp = CompressedSpec {
                data: real_to_spec(&s_hat),
                exponent_c: self.cfg.compression_c,
                cfg: self.stft_cfg.clone(),
            };
            istft(&decompress(&comp))
        } else {
            Vec::new()
        };
        Ok(ModelForward {
            specs,
            feats,
            z0,
            blocks,
            z_final,
            s_hat,
            y_hat,
            input_len: x[0].len(),
        })
    }

    /// Complex compressed MSE against a target waveform. Returns the loss
    /// and its gradient with respect to the summed spectrum.
    pub fn loss(&self, fwd: &ModelForward, target: &[f64]) -> Result<(f64, Array2<f64>)> {
        if target.len() < self.stft_cfg.win_len {
            return Err(Error::ShapeMismatch("target too short".into()));
        }
        let tspec = stft(target, &self.stft_cfg)?;
        let tcomp = compress(&tspec, self.cfg.compression_c)?;
        let target_real = spec_to_real(&tcomp.data);
        if target_real.dim() != fwd.s_hat.dim() {
            return Err(Error::ShapeMismatch(format!(
                "target spectrum {:?} does not match estimate {:?}",
                target_real.dim(),
                fwd.s_hat.dim()
            )));
        }
        Ok(spec_loss(&fwd.s_hat, &target_real))
    }

    /// Backpropagate from d loss / d summed-spectrum. Parameter gradients
    /// accumulate into the store; input-waveform gradients are returned
    /// when requested (used by finite-difference checks).
    pub fn backward(
        &mut self,
        fwd: &ModelForward,
        d_s_hat: &Array2<f64>,
        want_input_grads: bool,
    ) -> Result<Option<Vec<Vec<f64>>>> {
        let (m, t, d) = fwd.z0.dim();
        let f2 = 2 * self.stft_cfg.num_bins();
        // the sum over channels broadcasts the upstream grad to each one
        let mut ddec = Array3::zeros((m, t, f2));
        for mi in 0..m {
            ddec.index_axis_mut(Axis(0), mi).assign(d_s_hat);
        }
        let zf2 = fwd.z_final.to_shape((m * t, d)).unwrap().to_owned();
        let ddec2 = ddec.to_shape((m * t, f2)).unwrap().to_owned();
        let dz2 = linear_bwd(&mut self.store, "dec", zf2.view(), ddec2.view());
        let mut dz = dz2.into_shape_with_order((m, t, d)).unwrap();

        for b in (0..self.cfg.n_blocks).rev() {
            let cache = &fwd.blocks[b];
            // undo the residual connections: z' = h + Comm(h), h = z + GRU(z)
            let dcomm_in = self.comms[b].backward(&cache.comm, &dz, &mut self.store)?;
            let dh = &dz + &dcomm_in;
            let mut dz_prev = dh.clone();
            for mi in 0..m {
                let dx = self.grus[b].backward(
                    &cache.gru[mi],
                    dh.index_axis(Axis(0), mi),
                    &mut self.store,
                );
                let mut dzm = dz_prev.index_axis_mut(Axis(0), mi);
                dzm += &dx;
            }
            dz = dz_prev;
        }

        let feats2 = fwd.feats.to_shape((m * t, f2)).unwrap().to_owned();
        let dz2 = dz.to_shape((m * t, d)).unwrap().to_owned();
        let dfeats2 = linear_bwd(&mut self.store, "enc", feats2.view(), dz2.view());
        if !want_input_grads {
            return Ok(None);
        }
        let dfeats = dfeats2.into_shape_with_order((m, t, f2)).unwrap();
        let mut input_grads = Vec::with_capacity(m);
        for mi in 0..m {
            let dcomp = real_to_spec(&dfeats.index_axis(Axis(0), mi).to_owned());
            let spec = &fwd.specs[mi];
            let mut dspec = Array2::zeros(dcomp.raw_dim());
            for ((ds, &dc), &s) in dspec.iter_mut().zip(dcomp.iter()).zip(spec.data.iter()) {
                *ds = compress_bwd(s, dc, self.cfg.compression_c);
            }
            input_grads.push(stft_adjoint(&dspec, &self.stft_cfg, fwd.input_len));
        }
        Ok(Some(input_grads))
    }

    /// Forward and return the waveform estimate.
    pub fn enhance(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.y_hat)
    }
}

/// lambda |S_c - T_c|^2 + (1 - lambda) (|S_c| - |T_c|)^2, averaged over
/// T x F bins. Returns (loss, d loss / d estimate) in re/im layout.
pub fn spec_loss(est: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let (t, f2) = est.dim();
    let bins = (t * f2 / 2) as f64;
    let lam = LOSS_LAMBDA;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((t, f2));
    for ti in 0..t {
        for fi in 0..f2 / 2 {
            let re = est[[ti, 2 * fi]];
            let im = est[[ti, 2 * fi + 1]];
            let tre = target[[ti, 2 * fi]];
            let tim = target[[ti, 2 * fi + 1]];
            let mag = (re * re + im * im).sqrt();
            let tmag = (tre * tre + tim * tim).sqrt();
            loss += lam * ((re - tre).powi(2) + (im - tim).powi(2))
                + (1.0 - lam) * (mag - tmag).powi(2);
            let mut dre = 2.0 * lam * (re - tre);
            let mut dim = 2.0 * lam * (im - tim);
            if mag > 1e-300 {
                let dm = 2.0 * (1.0 - lam) * (mag - tmag) / mag;
                dre += dm * re;
                dim += dm * im;
            }
            grad[[ti, 2 * fi]] = dre / bins;
            grad[[ti, 2 * fi + 1]] = dim / bins;
        }
    }
    (loss / bins, grad)
}

/// d compress / d input spectrum, pulled back through `|S|^c e^{i arg S}`.
fn compress_bwd(s: Complex64, dc: Complex64, c: f64) -> Complex64 {
    let r = s.norm();
    if r < 1e-12 {
        return Complex64::new(0.0, 0.0);
    }
    let a = s.re;
    let b = s.im;
    let rc1 = r.powf(c - 1.0);
    let rc3 = (c - 1.0) * r.powf(c - 3.0);
    let daa = rc1 + rc3 * a * a;
    let dab = rc3 * a * b;
    let dbb = rc1 + rc3 * b * b;
    Complex64::new(dc.re * daa + dc.im * dab, dc.re * dab + dc.im * dbb)
}

/// (T, F) complex -> (T, 2F) re/im interleaved.
pub fn spec_to_real(spec: &Array2<Complex64>) -> Array2<f64> {
    let (t, f) = spec.dim();
    let mut out = Array2::zeros((t, 2 * f));
    for ti in 0..t {
        for fi in 0..f {
            out[[ti, 2 * fi]] = spec[[ti, fi]].re;
            out[[ti, 2 * fi + 1]] = spec[[ti, fi]].im;
        }
    }
    out
}

/// (T, 2F) re/im interleaved -> (T, F) complex.
pub fn real_to_spec(real: &Array2<f64>) -> Array2<Complex64> {
    let (t, f2) = real.dim();
    let f = f2 / 2;
    let mut out = Array2::zeros((t, f));
    for ti in 0..t {
        for fi in 0..f {
            out[[ti, fi]] = Complex64::new(real[[ti, 2 * fi]], real[[ti, 2 * fi + 1]]);
        }
    }
    out
}
