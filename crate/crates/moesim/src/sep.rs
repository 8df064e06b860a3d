//! Shadow-model expert prediction and alignment.
//!
//! A quantized *shadow* copy of the model decodes the same stream as the
//! full-precision *main* model and its per-layer routing choices serve as
//! expert predictions for the cluster's prefetcher. Quantization error makes
//! the two decoding paths drift apart over time, so the shadow is
//! periodically re-synchronized from the main model:
//!
//! * **token alignment** replaces the shadow's pending (last generated)
//!   token with the main model's true token;
//! * **KV alignment** overwrites the shadow's key/value cache entries for
//!   the most recently processed position with the main model's entries.
//!
//! Both fire at the start of a decode iteration, before the shadow's
//! forward pass, on independent periods. This module is the pure data-flow
//! half of the system: it decides *what* the predictions are and how well
//! they recall the true routing. When they become available in virtual time
//! is the simulator's concern.
//!
//! Prediction quality is scored by recall: the fraction of truly activated
//! experts that the shadow predicted, aggregated per token index and
//! overall. All counting is integer-exact; only the final ratios are floats.

use std::io::Write as IoWrite;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{forward_token, prefill, InferenceState, RoutingDecision, ToyMoeModel};
use crate::EOS_TOKEN;

/// How often (in decode iterations, 1-based) the shadow is re-synchronized.
/// `None` disables that alignment kind entirely. A finite period `p` fires
/// on iterations p, 2p, 3p, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentPolicy {
    pub token_period: Option<u64>,
    pub kv_period: Option<u64>,
}

impl AlignmentPolicy {
    /// Both alignments every `token`/`kv` iterations.
    pub fn new(token_period: Option<u64>, kv_period: Option<u64>) -> Result<Self> {
        if token_period == Some(0) || kv_period == Some(0) {
            return Err(Error::config("alignment periods must be >= 1 when finite"));
        }
        Ok(AlignmentPolicy {
            token_period,
            kv_period,
        })
    }

    /// Token and KV alignment on every iteration.
    pub fn every_iteration() -> Self {
        AlignmentPolicy {
            token_period: Some(1),
            kv_period: Some(1),
        }
    }

    /// No alignment at all.
    pub fn never() -> Self {
        AlignmentPolicy {
            token_period: None,
            kv_period: None,
        }
    }

    pub fn token_fires(&self, iteration: u64) -> bool {
        fires(self.token_period, iteration)
    }

    pub fn kv_fires(&self, iteration: u64) -> bool {
        fires(self.kv_period, iteration)
    }

    pub fn any_fires(&self, iteration: u64) -> bool {
        self.token_fires(iteration) || self.kv_fires(iteration)
    }
}

fn fires(period: Option<u64>, iteration: u64) -> bool {
    match period {
        Some(p) => iteration % p == 0,
        None => false,
    }
}

/// The main model's state after it finished the previous iteration: its
/// pending (true) token and, per layer, the key/value pair it wrote for the
/// last position it processed.
#[derive(Debug, Clone)]
pub struct MainFeedback {
    pub true_token: u32,
    pub kv_entries: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MainFeedback {
    /// Snapshot feedback from a main-model state.
    pub fn capture(state: &InferenceState) -> Result<Self> {
        let last = state
            .tokens_processed()
            .checked_sub(1)
            .ok_or_else(|| Error::state("main state has no processed tokens yet"))?;
        Ok(MainFeedback {
            true_token: state.pending_token(),
            kv_entries: state.kv().entries_at(last)?,
        })
    }
}

/// Replace the shadow's pending token with the main model's true one.
/// The processed prefix and all KV entries stay untouched; if the shadow
/// already generated the same token this is a no-op.
pub fn align_token(state: &mut InferenceState, true_token: u32, vocab_size: usize) -> Result<()> {
    if state.position() == 0 {
        return Err(Error::state("cannot align an empty state"));
    }
    if (true_token as usize) >= vocab_size {
        return Err(Error::input(format!(
            "alignment token {true_token} outside vocab {vocab_size}"
        )));
    }
    state.set_pending_token(true_token);
    Ok(())
}

/// Overwrite the shadow's KV entries for the most recently processed
/// position (one `(key, value)` pair per layer) with the main model's.
/// Earlier positions are untouched and no lengths change, so aligning twice
/// with the same entries equals aligning once.
pub fn align_kv(state: &mut InferenceState, entries: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
    let kv = state.kv();
    if kv.is_empty() {
        return Err(Error::alignment("no processed position to align"));
    }
    if entries.len() != kv.num_layers() {
        return Err(Error::alignment(format!(
            "feedback covers {} layers, shadow has {}",
            entries.len(),
            kv.num_layers()
        )));
    }
    let pos = kv.len() - 1;
    for (l, (key, value)) in entries.iter().enumerate() {
        let (have_k, have_v) = kv.entry(l, pos);
        if key.len() != have_k.len() || value.len() != have_v.len() {
            return Err(Error::alignment(format!(
                "feedback entry at layer {l} has dims {}x{}, shadow expects {}x{}",
                key.len(),
                value.len(),
                have_k.len(),
                have_v.len()
            )));
        }
    }
    let kv = state.kv_mut();
    for (l, (key, value)) in entries.iter().enumerate() {
        kv.set_entry(l, pos, key.clone(), value.clone());
    }
    Ok(())
}

/// One shadow iteration: perform whatever alignment the policy schedules
/// for `iteration` (1-based), then run one forward pass. The returned
/// routing decisions are the expert predictions for the main model's same
/// iteration; the returned token is the shadow's own next-token guess.
pub fn shadow_decode_step(
    shadow_model: &ToyMoeModel,
    shadow_state: &mut InferenceState,
    policy: &AlignmentPolicy,
    main_feedback: Option<&MainFeedback>,
    iteration: u64,
) -> Result<(Vec<RoutingDecision>, u32)> {
    if policy.any_fires(iteration) {
        let fb = main_feedback.ok_or_else(|| {
            Error::alignment(format!(
                "iteration {iteration} requires main-model feedback but none was supplied"
            ))
        })?;
        if policy.token_fires(iteration) {
            align_token(
                shadow_state,
                fb.true_token,
                shadow_model.config().vocab_size,
            )?;
        }
        if policy.kv_fires(iteration) {
            align_kv(shadow_state, &fb.kv_entries)?;
        }
    }
    let (token, decisions) = forward_token(shadow_model, shadow_state, None)?;
    Ok((decisions, token))
}

/// One (prompt, iteration, layer) routing observation: the experts the main
/// model actually used and the experts the shadow predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoutingRecord {
    /// Prompt index within the experiment, 0-based.
    #[serde(rename = "q")]
    pub prompt_id: usize,
    /// Decode iteration, 1-based.
    #[serde(rename = "n")]
    pub token_index: usize,
    /// Layer, 0-based.
    #[serde(rename = "l")]
    pub layer: usize,
    #[serde(rename = "true")]
    pub true_experts: Vec<usize>,
    /// The shadow's prediction. May be recorded even when it arrived too
    /// late to be used (`prediction_available == false`), in which case it
    /// scores zero credit.
    #[serde(rename = "pred")]
    pub predicted_experts: Vec<usize>,
    #[serde(rename = "avail")]
    pub prediction_available: bool,
}

/// Recall aggregates. `correct`/`active` are the exact integer counts the
/// ratios are formed from: for token index n (1-based),
/// `per_token[n-1] = correct[n-1] / (k * L * active[n-1])`, and `overall`
/// pools numerators and denominators across all n.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub per_token: Vec<f64>,
    pub overall: f64,
    /// Per token index: how many prompts still had that iteration.
    pub active_per_token: Vec<u64>,
    /// Per token index: total correctly predicted experts over all prompts
    /// and layers.
    pub correct_per_token: Vec<u64>,
    pub top_k: usize,
    pub num_layers: usize,
}

/// Score predictions against true routing, exactly.
///
/// Every iteration a prompt actually ran contributes `k * L` to the
/// denominator; each record with an available prediction contributes
/// `|true ∩ predicted|` to the numerator. Unavailable predictions score
/// zero. Token indices with no surviving prompts report recall 0 (their
/// denominator is empty; they contribute nothing to `overall`).
pub fn compute_recall(records: &[RoutingRecord], top_k: usize, num_layers: usize) -> Result<RecallReport> {
    if records.is_empty() {
        return Err(Error::input("no routing records to score"));
    }
    if top_k == 0 || num_layers == 0 {
        return Err(Error::input("top_k and num_layers must be positive"));
    }
    let max_n = records.iter().map(|r| r.token_index).max().unwrap();
    let mut correct = vec![0u64; max_n];
    // Active prompts per token index, deduplicated via (q, n) pairs.
    let mut seen: Vec<(usize, usize)> = records
        .iter()
        .map(|r| (r.prompt_id, r.token_index))
        .collect();
    seen.sort_unstable();
    seen.dedup();
    let mut active = vec![0u64; max_n];
    for &(_, n) in &seen {
        active[n - 1] += 1;
    }

    for r in records {
        if r.token_index == 0 {
            return Err(Error::input("token_index is 1-based and must be >= 1"));
        }
        if r.layer >= num_layers {
            return Err(Error::input(format!(
                "record layer {} out of range (num_layers {num_layers})",
                r.layer
            )));
        }
        if r.true_experts.len() != top_k {
            return Err(Error::input(format!(
                "record has {} true experts, expected top_k {top_k}",
                r.true_experts.len()
            )));
        }
        if r.prediction_available && r.predicted_experts.len() != top_k {
            return Err(Error::input(format!(
                "available prediction has {} experts, expected top_k {top_k}",
                r.predicted_experts.len()
            )));
        }
        if r.prediction_available {
            let hits = r
                .true_experts
                .iter()
                .filter(|t| r.predicted_experts.contains(t))
                .count();
            correct[r.token_index - 1] += hits as u64;
        }
    }

    let weight = (top_k * num_layers) as u64;
    let per_token: Vec<f64> = correct
        .iter()
        .zip(&active)
        .map(|(&c, &a)| {
            if a == 0 {
                0.0
            } else {
                c as f64 / (weight * a) as f64
            }
        })
        .collect();
    let total_correct: u64 = correct.iter().sum();
    let total_active: u64 = active.iter().sum();
    Ok(RecallReport {
        per_token,
        overall: total_correct as f64 / (weight * total_active) as f64,
        active_per_token: active,
        correct_per_token: correct,
        top_k,
        num_layers,
    })
}

/// Everything a lockstep shadow/main run produces.
#[derive(Debug, Clone)]
pub struct SepRun {
    pub report: RecallReport,
    pub records: Vec<RoutingRecord>,
    /// Per prompt: every token the main model generated (including the
    /// final pending one), in order.
    pub main_tokens: Vec<Vec<u32>>,
}

/// Decode every prompt on the main model with the shadow running in
/// lockstep, and score the shadow's predictions.
///
/// `shadow_bits = None` uses a bit-identical full-precision copy as the
/// shadow. Decoding stops after `max_tokens` iterations or when the main
/// model's next token is the end-of-sequence id, whichever comes first; the
/// iteration that produces the end-of-sequence token still counts. The main
/// model's outputs never depend on the shadow.
pub fn run_sep_experiment(
    full_model: &ToyMoeModel,
    shadow_bits: Option<u8>,
    policy: &AlignmentPolicy,
    prompts: &[Vec<u32>],
    max_tokens: usize,
) -> Result<SepRun> {
    if prompts.is_empty() {
        return Err(Error::input("no prompts"));
    }
    if max_tokens == 0 {
        return Err(Error::input("max_tokens must be >= 1"));
    }
    let shadow_model = match shadow_bits {
        Some(bits) => full_model.quantize(bits)?,
        None => full_model.clone(),
    };
    let cfg = full_model.config();
    let mut records = Vec::new();
    let mut main_tokens = Vec::with_capacity(prompts.len());

    for (q, prompt) in prompts.iter().enumerate() {
        let (mut main_state, _) = prefill(full_model, prompt)?;
        let (mut shadow_state, _) = prefill(&shadow_model, prompt)?;
        let mut n: u64 = 0;
        while main_state.pending_token() != EOS_TOKEN && (n as usize) < max_tokens {
            n += 1;
            let feedback = if policy.any_fires(n) {
                Some(MainFeedback::capture(&main_state)?)
            } else {
                None
            };
            let (predictions, _) = shadow_decode_step(
                &shadow_model,
                &mut shadow_state,
                policy,
                feedback.as_ref(),
                n,
            )?;
            let (_, true_decisions) = forward_token(full_model, &mut main_state, None)?;
            for (l, (t, p)) in true_decisions.iter().zip(&predictions).enumerate() {
                records.push(RoutingRecord {
                    prompt_id: q,
                    token_index: n as usize,
                    layer: l,
                    true_experts: t.experts.clone(),
                    predicted_experts: p.experts.clone(),
                    prediction_available: true,
                });
            }
        }
        main_tokens.push(main_state.token_ids()[prompt.len()..].to_vec());
    }

    let report = compute_recall(&records, cfg.top_k, cfg.num_layers)?;
    Ok(SepRun {
        report,
        records,
        main_tokens,
    })
}

/// Write one JSON object per routing record.
pub fn write_records_jsonl(records: &[RoutingRecord], mut out: impl IoWrite) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::internal(format!("record serialization failed: {e}")))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Write the per-token recall curve as `token_index,recall` rows.
pub fn write_recall_csv(report: &RecallReport, mut out: impl IoWrite) -> Result<()> {
    writeln!(out, "token_index,recall")?;
    for (i, r) in report.per_token.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, r)?;
    }
    Ok(())
}
