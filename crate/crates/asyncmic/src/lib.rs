//! Desk-scale toolkit for asynchronous multi-microphone speech enhancement.
//!
//! The crate has five layers:
//!
//! - [`scene`] — simulation of multi-device captures: image-source room
//!   impulse responses, diffuse noise, per-device latency and clock drift,
//!   and the three training-target strategies.
//! - [`dsp`] — STFT/iSTFT framing, complex spectrum compression,
//!   fractional-delay warping, cross-correlation alignment and cepstral
//!   distance.
//! - [`attention`] — differentiable channel-communication modules (TAC,
//!   per-frame attention, full and windowed temporal cross-attention) with
//!   analytic backward passes.
//! - [`model`] — a minimal encoder/bottleneck/decoder backbone with a
//!   pluggable communication module and the complex compressed MSE loss.
//! - [`train`] — seeded training/evaluation harness, optimizers,
//!   checkpoints, and module-comparison reports.
//!
//! See the `book/` guide in the repository for worked examples.
//!
//! # Quick start
//!
//! Simulate a small two-microphone scene and run a freshly initialized
//! model over it:
//!
//! ```
//! use asyncmic::attention::AttentionModuleKind;
//! use asyncmic::model::{BackboneConfig, Model};
//! use asyncmic::scene::{mix_scene, TargetStrategy};
//! use asyncmic::train::SceneDistribution;
//!
//! let dist = SceneDistribution::DelayedCopy {
//!     n_mics: [2, 2],
//!     max_offset_frames: 2,
//!     duration_s: 0.5,
//!     frame_hop_s: 0.010,
//!     sensor_snr_db: None,
//! };
//! let spec = dist.sample(7, TargetStrategy::MinLatency);
//! let scene = mix_scene(&spec)?;
//!
//! let cfg = BackboneConfig {
//!     d_hidden: 8,
//!     n_blocks: 1,
//!     module_kind: AttentionModuleKind::WindowedXAttn,
//!     window_l: 2,
//!     compression_c: 0.3,
//!     sample_rate_hz: 16_000.0,
//!     win_len_override: None,
//! };
//! let model = Model::init(&cfg, 1)?;
//! let fwd = model.forward(&scene.observations)?;
//! let (loss, _grad) = model.loss(&fwd, &scene.target)?;
//! assert!(loss.is_finite());
//! assert!(!fwd.y_hat.is_empty());
//! # Ok::<(), asyncmic::Error>(())
//! ```

pub mod alloc_counter;
pub mod attention;
pub mod bench;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod scene;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
