//! Desk-scale simulator for cacheless distributed mixture-of-experts decoding.
//!
//! The crate models a cluster in which a *main node* runs attention and gating
//! for a toy MoE transformer while groups of *worker nodes* fetch expert
//! weights on demand from host memory, compute the expert FFNs, and evict them
//! again. A quantized *shadow model* runs ahead of the main model to predict
//! which experts each layer will activate, so workers can start loading before
//! the main node's gate has fired. Everything is deterministic: model
//! numerics are plain `f64` with a documented accumulation order, and the
//! timing side is a discrete-event simulation in virtual seconds.
//!
//! Module map:
//!
//! * [`model`] — toy MoE transformer: weights, quantization emulation,
//!   checkpoint I/O, single-token forward pass and prefill.
//! * [`sep`] — shadow-model expert prediction: alignment of the shadow's
//!   token/KV state with the main model, lockstep decoding, recall metrics.
//! * [`cluster`] — static cluster planning: worker groups, layer round-robin,
//!   expert-to-worker assignment, load-time budget, misprediction reloads,
//!   prefill mini-batch plans.
//! * [`sim`] — virtual-time engines for decode and prefill plus the ablation
//!   harness; emits event traces.
//! * [`metrics`] — throughput/TTFT/stall summaries and the bottleneck report.
//! * [`experiment`] — TOML experiment specs, prompt generation, and the
//!   batch runner behind the CLI.

pub mod cluster;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sep;
pub mod sim;

pub use error::{Error, Result};

/// Token id that terminates decoding when the model emits it.
pub const EOS_TOKEN: u32 = 0;

/// Longest prompt `model::prefill` accepts.
pub const MAX_PROMPT_LEN: usize = 1024;
