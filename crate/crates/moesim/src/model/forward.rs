//! The forward pass: single-head causal attention with a KV cache, top-k
//! gated expert mixtures, residual connections, and greedy decoding.
//!
//! # The pending-token convention
//!
//! An [`InferenceState`] always ends with exactly one *pending* token: the
//! most recently generated (or supplied) token id that has not yet been run
//! through the network. Every layer's KV cache therefore holds
//! `token_ids.len() - 1` entries — one per *processed* token.
//!
//! [`prefill`] processes the whole prompt (so the caches hold `prompt.len()`
//! entries) and appends the first generated token as the pending one.
//! [`forward_token`] processes the pending token, appends one KV entry per
//! layer, greedily picks the next token from the output logits, and appends
//! that token as the new pending one. Chaining `prefill` + n×`forward_token`
//! is therefore bit-identical to processing the same ids one at a time from
//! scratch.
//!
//! # Fixed arithmetic order
//!
//! Every reduction runs in ascending index order, softmax subtracts the row
//! max before exponentiating, and all argmax ties resolve to the lowest
//! index. Combined with the seeded initializer this makes whole decodes
//! reproducible bit for bit, which the simulator leans on: it replays these
//! exact numerics under a virtual clock and must emit identical tokens.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{add_assign, all_finite, argmax, dot, relu_in_place, softmax};
use crate::model::{ExpertId, ToyMoeModel};
use crate::MAX_PROMPT_LEN;

/// Per-layer growable key/value store, one entry per processed token.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl KvCache {
    pub fn new(num_layers: usize) -> Self {
        KvCache {
            keys: vec![Vec::new(); num_layers],
            values: vec![Vec::new(); num_layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.keys.len()
    }

    /// Entries per layer. Uniform across layers between full forward passes.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_entry(&mut self, layer: usize, key: Vec<f64>, value: Vec<f64>) {
        self.keys[layer].push(key);
        self.values[layer].push(value);
    }

    pub fn entry(&self, layer: usize, pos: usize) -> (&[f64], &[f64]) {
        (&self.keys[layer][pos], &self.values[layer][pos])
    }

    /// Overwrite the entry at `pos` for one layer.
    pub fn set_entry(&mut self, layer: usize, pos: usize, key: Vec<f64>, value: Vec<f64>) {
        self.keys[layer][pos] = key;
        self.values[layer][pos] = value;
    }

    /// Clone the per-layer (key, value) pair at one position, e.g. to ship it
    /// to another model instance as an alignment payload.
    pub fn entries_at(&self, pos: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if pos >= self.len() {
            return Err(Error::state(format!(
                "kv position {pos} out of range (len {})",
                self.len()
            )));
        }
        Ok((0..self.num_layers())
            .map(|l| (self.keys[l][pos].clone(), self.values[l][pos].clone()))
            .collect())
    }

    fn layer_keys(&self, layer: usize) -> &[Vec<f64>] {
        &self.keys[layer]
    }

    fn layer_values(&self, layer: usize) -> &[Vec<f64>] {
        &self.values[layer]
    }
}

/// Token sequence plus KV caches for one decoding stream.
///
/// The last token id is always the pending (not yet processed) one, so
/// `kv.len() == token_ids.len() - 1` between forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceState {
    token_ids: Vec<u32>,
    kv: KvCache,
}

impl InferenceState {
    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    /// Sequence position: number of tokens held, processed plus pending.
    pub fn position(&self) -> usize {
        self.token_ids.len()
    }

    pub fn tokens_processed(&self) -> usize {
        self.kv.len()
    }

    /// The token the next forward pass will consume.
    pub fn pending_token(&self) -> u32 {
        *self.token_ids.last().expect("state holds >= 1 token")
    }

    pub fn kv(&self) -> &KvCache {
        &self.kv
    }

    pub(crate) fn kv_mut(&mut self) -> &mut KvCache {
        &mut self.kv
    }

    /// Replace the pending token (token alignment does this with the main
    /// model's true token). The processed prefix and the KV caches stay put.
    pub(crate) fn set_pending_token(&mut self, token: u32) {
        *self.token_ids.last_mut().expect("state holds >= 1 token") = token;
    }
}

/// One layer's routing choice: the selected experts plus the full gate-score
/// vector they were chosen from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingDecision {
    pub layer: usize,
    /// Selected expert indices, ascending. Natural routing selects the k
    /// largest gate scores with ties going to the lower index.
    pub experts: Vec<usize>,
    /// Raw gate scores for all E experts, natural even when the selection
    /// was overridden.
    pub gate_scores: Vec<f64>,
}

impl RoutingDecision {
    /// Mixture weights for the selected experts: softmax over their gate
    /// scores, in the same ascending-index order as `experts`.
    pub fn mixture_weights(&self) -> Vec<f64> {
        let picked: Vec<f64> = self.experts.iter().map(|&e| self.gate_scores[e]).collect();
        softmax(&picked)
    }
}

/// Score the experts of one layer against an embedding and pick the top k.
pub fn gate(model: &ToyMoeModel, layer: usize, embedding: &[f64]) -> Result<RoutingDecision> {
    let cfg = model.config();
    if layer >= cfg.num_layers {
        return Err(Error::routing(format!(
            "layer {layer} out of range (num_layers {})",
            cfg.num_layers
        )));
    }
    if embedding.len() != cfg.hidden_dim {
        return Err(Error::numeric(format!(
            "gate input has {} dims, expected {}",
            embedding.len(),
            cfg.hidden_dim
        )));
    }
    if !all_finite(embedding) {
        return Err(Error::numeric(format!(
            "non-finite embedding at gate of layer {layer}"
        )));
    }
    let scores = model.layer(layer).gate.matvec(embedding);
    let experts = top_k_indices(&scores, cfg.top_k);
    Ok(RoutingDecision {
        layer,
        experts,
        gate_scores: scores,
    })
}

/// Indices of the k largest scores, ties to the lower index, returned in
/// ascending index order.
fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            // Strict > keeps the earliest index on ties.
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        picked.push(best.expect("k <= E by config validation"));
    }
    picked.sort_unstable();
    picked
}

/// One expert FFN: `w2 · relu(w1 · x)`.
pub fn expert_forward(model: &ToyMoeModel, expert: ExpertId, embedding: &[f64]) -> Result<Vec<f64>> {
    let e = model.expert(expert)?;
    let mut hidden = e.w1.matvec(embedding);
    relu_in_place(&mut hidden);
    let out = e.w2.matvec(&hidden);
    if !all_finite(&out) {
        return Err(Error::numeric(format!(
            "non-finite expert output (layer {}, expert {})",
            expert.layer, expert.expert
        )));
    }
    Ok(out)
}

/// Run the pending token through all layers: append one KV entry per layer,
/// return the output logits and the per-layer routing actually used.
fn advance(
    model: &ToyMoeModel,
    state: &mut InferenceState,
    routing_override: Option<&[RoutingDecision]>,
) -> Result<(Vec<f64>, Vec<RoutingDecision>)> {
    let cfg = model.config();
    let d = cfg.hidden_dim;
    if let Some(ovr) = routing_override {
        if ovr.len() != cfg.num_layers {
            return Err(Error::routing(format!(
                "routing override has {} entries, expected {}",
                ovr.len(),
                cfg.num_layers
            )));
        }
    }
    let token = state.pending_token();
    if (token as usize) >= cfg.vocab_size {
        return Err(Error::state(format!(
            "pending token {token} outside vocab {}",
            cfg.vocab_size
        )));
    }

    let mut x: Vec<f64> = model.embedding().row(token as usize).to_vec();
    let scale = 1.0 / (d as f64).sqrt();
    let mut decisions = Vec::with_capacity(cfg.num_layers);

    for l in 0..cfg.num_layers {
        let lw = model.layer(l);

        // Attention. The new entry is appended first, so the query attends
        // over every processed position including the token's own.
        let q = lw.wq.matvec(&x);
        let key = lw.wk.matvec(&x);
        let value = lw.wv.matvec(&x);
        state.kv.push_entry(l, key, value);
        let keys = state.kv.layer_keys(l);
        let values = state.kv.layer_values(l);
        let scores: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        let weights = softmax(&scores);
        let mut ctx = vec![0.0; d];
        for (w, v) in weights.iter().zip(values) {
            for (c, vj) in ctx.iter_mut().zip(v) {
                *c += w * vj;
            }
        }
        let attn_out = lw.wo.matvec(&ctx);
        add_assign(&mut x, &attn_out);

        // Gating on the post-attention stream. Natural scores are always
        // computed; an override replaces only the selection.
        let natural = gate(model, l, &x)?;
        let selected = match routing_override {
            Some(ovr) => validate_override(&ovr[l], l, cfg.top_k, cfg.num_experts)?,
            None => natural.experts.clone(),
        };
        let decision = RoutingDecision {
            layer: l,
            experts: selected,
            gate_scores: natural.gate_scores,
        };

        // Expert mixture, weighted by softmax over the selected gate scores.
        let mix = decision.mixture_weights();
        let mut moe_out = vec![0.0; d];
        for (w, &e) in mix.iter().zip(&decision.experts) {
            let out = expert_forward(model, ExpertId { layer: l, expert: e }, &x)?;
            for (m, oj) in moe_out.iter_mut().zip(&out) {
                *m += w * oj;
            }
        }
        add_assign(&mut x, &moe_out);
        decisions.push(decision);
    }

    let logits = model.head().tmatvec(&x);
    if !all_finite(&logits) {
        return Err(Error::numeric("non-finite output logits"));
    }
    Ok((logits, decisions))
}

fn validate_override(
    ovr: &RoutingDecision,
    layer: usize,
    k: usize,
    num_experts: usize,
) -> Result<Vec<usize>> {
    if ovr.layer != layer {
        return Err(Error::routing(format!(
            "override entry for layer {} found at position {layer}",
            ovr.layer
        )));
    }
    if ovr.experts.len() != k {
        return Err(Error::routing(format!(
            "override selects {} experts at layer {layer}, expected {k}",
            ovr.experts.len()
        )));
    }
    let mut experts = ovr.experts.clone();
    experts.sort_unstable();
    experts.dedup();
    if experts.len() != k {
        return Err(Error::routing(format!(
            "override at layer {layer} repeats an expert"
        )));
    }
    if experts.iter().any(|&e| e >= num_experts) {
        return Err(Error::routing(format!(
            "override at layer {layer} names an expert >= {num_experts}"
        )));
    }
    Ok(experts)
}

/// Process the pending token and greedily pick the next one.
///
/// Appends exactly one KV entry per layer, appends the generated token as
/// the new pending token, and returns it with the routing actually used.
/// `routing_override` (one decision per layer) replaces expert *selection*
/// only; gate scores, mixture weights, and the returned decisions' scores
/// are always the natural ones, so an override equal to natural routing is
/// bit-identical to passing none.
pub fn forward_token(
    model: &ToyMoeModel,
    state: &mut InferenceState,
    routing_override: Option<&[RoutingDecision]>,
) -> Result<(u32, Vec<RoutingDecision>)> {
    if state.token_ids.is_empty() {
        return Err(Error::state("forward_token on an empty state"));
    }
    let (logits, decisions) = advance(model, state, routing_override)?;
    let next = argmax(&logits) as u32;
    state.token_ids.push(next);
    Ok((next, decisions))
}

/// Build the initial state for a prompt: process every prompt token in
/// order (causal — each token attends only to itself and earlier ones),
/// then append the first generated token as pending.
///
/// Returns the state plus per-token, per-layer routing decisions for the
/// prompt. The first generated token is `state.pending_token()`.
pub fn prefill(
    model: &ToyMoeModel,
    prompt: &[u32],
) -> Result<(InferenceState, Vec<Vec<RoutingDecision>>)> {
    let cfg = model.config();
    if prompt.is_empty() {
        return Err(Error::input("empty prompt"));
    }
    if prompt.len() > MAX_PROMPT_LEN {
        return Err(Error::input(format!(
            "prompt of {} tokens exceeds the {MAX_PROMPT_LEN}-token bound",
            prompt.len()
        )));
    }
    if let Some(&bad) = prompt.iter().find(|&&t| (t as usize) >= cfg.vocab_size) {
        return Err(Error::input(format!(
            "prompt token {bad} outside vocab {}",
            cfg.vocab_size
        )));
    }

    let mut state = InferenceState {
        token_ids: Vec::with_capacity(prompt.len() + 1),
        kv: KvCache::new(cfg.num_layers),
    };
    let mut routing = Vec::with_capacity(prompt.len());
    let mut logits = Vec::new();
    for &t in prompt {
        state.token_ids.push(t);
        let (lg, decisions) = advance(model, &mut state, None)?;
        routing.push(decisions);
        logits = lg;
    }
    let first = argmax(&logits) as u32;
    state.token_ids.push(first);
    Ok((state, routing))
}
