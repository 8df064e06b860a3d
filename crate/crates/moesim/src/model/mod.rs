//! Toy MoE transformer: small enough to decode in milliseconds, structured
//! enough to expose real routing dynamics.
//!
//! Each layer is single-head attention (with KV cache) followed by a top-k
//! gated mixture of two-matrix FFN experts; both sublayers add residually
//! into the stream. There is no normalization — layers are kept linear-ish on
//! purpose so quantization perturbations propagate visibly.
//!
//! Weight initialization draws from [`SplitMix64`] in a pinned order so a
//! model is a pure function of its config: for each layer in turn `wq`,
//! `wk`, `wv`, `wo` (each `d x d`), the gate matrix (`E x d`), then each
//! expert's `w1` (`4d x d`) and `w2` (`d x 4d`); after all layers the
//! embedding table (`V x d`) and the output head (`d x V`). Every matrix
//! fills row-major, each entry `(2u - 1) / sqrt(d)` with `u` the next
//! generator output in `[0, 1)` — i.e. uniform on `[-1/sqrt(d), 1/sqrt(d))`.

mod checkpoint;
mod forward;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC};
pub use forward::{
    expert_forward, forward_token, gate, prefill, InferenceState, KvCache, RoutingDecision,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// Dimensions and seed of a toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of transformer layers (`L`).
    pub num_layers: usize,
    /// Experts per layer (`E`).
    pub num_experts: usize,
    /// Experts activated per token per layer (`k`).
    pub top_k: usize,
    /// Hidden width (`d`); expert FFNs expand to `4d`.
    pub hidden_dim: usize,
    /// Vocabulary size (`V`); token 0 is reserved as end-of-sequence.
    pub vocab_size: usize,
    /// Weight-stream seed.
    pub seed: u64,
}

impl ModelConfig {
    /// The default desk-scale configuration used by experiments and tests.
    pub fn toy_default(seed: u64) -> Self {
        ModelConfig {
            num_layers: 8,
            num_experts: 8,
            top_k: 2,
            hidden_dim: 64,
            vocab_size: 256,
            seed,
        }
    }

    /// Parameter bytes of one expert at `f64` storage: `2 * 4d * d * 8`.
    pub fn expert_param_bytes(&self) -> u64 {
        let d = self.hidden_dim as u64;
        2 * 4 * d * d * 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::config("num_layers must be at least 1"));
        }
        if self.num_experts == 0 {
            return Err(Error::config("num_experts must be at least 1"));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::config(format!(
                "top_k must be in 1..={}, got {}",
                self.num_experts, self.top_k
            )));
        }
        if self.hidden_dim < 2 {
            return Err(Error::config("hidden_dim must be at least 2"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config(
                "vocab_size must be at least 2 (token 0 is end-of-sequence)",
            ));
        }
        Ok(())
    }
}

/// Whether weights are exact `f64` or snapped to an emulated uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Full,
    /// Symmetric uniform quantization with this many bits (2..=16).
    Emulated(u8),
}

/// One expert's position in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExpertId {
    pub layer: usize,
    pub expert: usize,
}

/// Expert FFN: `w2 * relu(w1 * x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    /// `4d x d` up-projection.
    pub w1: Matrix,
    /// `d x 4d` down-projection.
    pub w2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// `E x d`; row `e` scores expert `e`.
    pub gate: Matrix,
    pub experts: Vec<Expert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMoeModel {
    config: ModelConfig,
    precision: Precision,
    layers: Vec<LayerWeights>,
    /// `V x d` token embedding table.
    embedding: Matrix,
    /// `d x V` output head (logits are `head^T x`).
    head: Matrix,
}

impl ToyMoeModel {
    /// Initializes all weights from the config's seed. See the module docs
    /// for the exact draw order.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = SplitMix64::new(config.seed);
        let mut draw = move || (2.0 * rng.next_f64() - 1.0) * scale;

        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                wq: Matrix::fill_with(d, d, &mut draw),
                wk: Matrix::fill_with(d, d, &mut draw),
                wv: Matrix::fill_with(d, d, &mut draw),
                wo: Matrix::fill_with(d, d, &mut draw),
                gate: Matrix::fill_with(config.num_experts, d, &mut draw),
                experts: (0..config.num_experts)
                    .map(|_| Expert {
                        w1: Matrix::fill_with(4 * d, d, &mut draw),
                        w2: Matrix::fill_with(d, 4 * d, &mut draw),
                    })
                    .collect(),
            })
            .collect();
        let embedding = Matrix::fill_with(config.vocab_size, d, &mut draw);
        let head = Matrix::fill_with(d, config.vocab_size, &mut draw);

        Ok(ToyMoeModel {
            config,
            precision: Precision::Full,
            layers,
            embedding,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerWeights {
        &self.layers[l]
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn expert(&self, id: ExpertId) -> Result<&Expert> {
        self.layers
            .get(id.layer)
            .and_then(|l| l.experts.get(id.expert))
            .ok_or_else(|| {
                Error::routing(format!(
                    "expert (layer {}, expert {}) out of range",
                    id.layer, id.expert
                ))
            })
    }

    /// Parameter bytes of one expert at `f64` storage: `2 * 4d * d * 8`.
    pub fn expert_param_bytes(&self) -> u64 {
        self.config.expert_param_bytes()
    }

    /// Bytes of one per-token KV alignment payload: a key and a value vector
    /// per layer, `L * 2 * d * 8`.
    pub fn kv_entry_bytes(&self) -> u64 {
        (self.config.num_layers as u64) * 2 * (self.config.hidden_dim as u64) * 8
    }

    /// Returns a copy with every weight matrix snapped to a symmetric uniform
    /// grid emulating `bits`-wide storage. For each matrix independently the
    /// step is `max|w| / (2^(bits-1) - 1)` and each weight becomes
    /// `round_ties_even(w / step) * step`; an all-zero matrix stays zero.
    /// Arithmetic remains `f64`.
    pub fn quantize(&self, bits: u8) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::config(format!(
                "quantization bits must be in 2..=16, got {bits}"
            )));
        }
        let mut out = self.clone();
        out.precision = Precision::Emulated(bits);
        let levels = ((1u32 << (bits - 1)) - 1) as f64;
        for m in out.matrices_mut() {
            quantize_matrix(m, levels);
        }
        Ok(out)
    }

    /// All matrices in declaration order — the order used by the weight
    /// stream and the checkpoint format.
    pub(crate) fn matrices(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.wq);
            out.push(&layer.wk);
            out.push(&layer.wv);
            out.push(&layer.wo);
            out.push(&layer.gate);
            for e in &layer.experts {
                out.push(&e.w1);
                out.push(&e.w2);
            }
        }
        out.push(&self.embedding);
        out.push(&self.head);
        out
    }

    pub(crate) fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.wq);
            out.push(&mut layer.wk);
            out.push(&mut layer.wv);
            out.push(&mut layer.wo);
            out.push(&mut layer.gate);
            for e in &mut layer.experts {
                out.push(&mut e.w1);
                out.push(&mut e.w2);
            }
        }
        out.push(&mut self.embedding);
        out.push(&mut self.head);
        out
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        precision: Precision,
        layers: Vec<LayerWeights>,
        embedding: Matrix,
        head: Matrix,
    ) -> Self {
        ToyMoeModel {
            config,
            precision,
            layers,
            embedding,
            head,
        }
    }
}

fn quantize_matrix(m: &mut Matrix, levels: f64) {
    let mut amax = 0.0f64;
    for &w in m.data() {
        let a = w.abs();
        if a > amax {
            amax = a;
        }
    }
    if amax == 0.0 {
        return;
    }
    let step = amax / levels;
    for w in m.data_mut().iter_mut() {
        // Index on the grid; computed as w*levels/amax rather than w/step so
        // exact cases (like -0.5 at 8 bits -> -63.5) hit their tie exactly.
        let q = (*w * levels / amax).round_ties_even();
        // Grid extremes snap to +/-amax itself: that is the exact value of
        // levels*step, and keeping it exact makes re-quantization at the same
        // width reproduce the same grid bit for bit.
        *w = if q.abs() >= levels {
            q.signum() * amax
        } else {
            q * step
        };
    }
}
