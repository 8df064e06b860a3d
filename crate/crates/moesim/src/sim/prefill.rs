//! Prefill-phase pipeline simulation.
//!
//! Prefill processes the whole prompt at once, so the worker side becomes a
//! classic transfer/compute pipeline: the main node runs a layer's attention
//! and gate over all prompt tokens, then streams each expert's token group
//! to that expert's dedicated worker in mini-batches. A worker may start
//! computing a mini-batch once its embeddings have arrived and its previous
//! work finished, so smaller batches hide transfer time behind compute at
//! the price of a fixed per-batch overhead (`prefill_alpha`): a chunk of `s`
//! tokens costs `t * (alpha + (1 - alpha) * s)`.

use crate::cluster::PrefillPlan;
use crate::error::{Error, Result};
use crate::model::{prefill, InferenceState, RoutingDecision, ToyMoeModel};
use crate::sim::{audit_trace, dump_trace, CostModel, EventKind, EventTrace, Payload, Subject};

/// Outcome of one simulated prefill.
#[derive(Debug, Clone)]
pub struct PrefillSimResult {
    /// Model state after the prompt, ready for decoding (same convention as
    /// [`crate::model::prefill`]: the first generated token is pending).
    pub state: InferenceState,
    /// Per-token per-layer routing of the prompt.
    pub routing: Vec<Vec<RoutingDecision>>,
    pub trace: EventTrace,
    /// When the last worker mini-batch finished computing: the pipeline
    /// completion the mini-batch recurrence predicts.
    pub completion_s: f64,
    /// When the last expert result arrived back at the main node. Decoding
    /// composes after this instant (pass it to `run_decode_sim` as
    /// `start_time`); the first decode iteration then finalizes the prompt's
    /// pending token, so time-to-first-token is this plus one iteration.
    pub pipeline_end_s: f64,
}

/// Simulate prefilling `prompt` with the mini-batch schedule in `plan`.
///
/// The plan must describe exactly this prompt's routing (build it with
/// [`crate::cluster::plan_prefill`] from the routing `prefill` reports).
pub fn run_prefill_sim(
    model: &ToyMoeModel,
    prompt: &[u32],
    plan: &PrefillPlan,
    cost: &CostModel,
) -> Result<PrefillSimResult> {
    cost.validate()?;
    let (state, routing) = prefill(model, prompt)?;
    validate_plan_against_routing(plan, &routing, prompt.len())?;

    let config = model.config();
    let prompt_len = prompt.len();
    let alpha = cost.prefill_alpha;
    // Batched-compute discount: a chunk of s tokens costs t*(alpha+(1-alpha)s).
    let batched = |t: f64, s: usize| t * (alpha + (1.0 - alpha) * s as f64);
    let load_dur = cost.load_time(model.expert_param_bytes());
    let per_token_bytes = (config.hidden_dim * 8) as u64;

    let mut trace = EventTrace::new();
    let mut main_free = 0.0f64;
    let mut main_sender_free = 0.0f64;
    // Worker state: the worker handles its items (stage an expert, compute
    // its chunks) strictly in plan order; its sender returns results.
    let num_workers = plan.batches.iter().map(|b| b.worker + 1).max().unwrap_or(1);
    let mut worker_free = vec![0.0f64; num_workers];
    let mut worker_sender_free = vec![0.0f64; num_workers];
    let mut worker_resident: Vec<Option<(usize, usize)>> = vec![None; num_workers];
    let mut completion = 0.0f64;
    let mut pipeline_end = 0.0f64;

    for layer in 0..config.num_layers {
        // Main node: attention and gating over the whole prompt.
        let m_start = main_free;
        let m_end = m_start + batched(cost.t_m, prompt_len);
        main_free = m_end;
        let p = Payload {
            layer: Some(layer),
            chunk_len: Some(prompt_len),
            note: Some("prefill"),
            ..Payload::default()
        };
        trace.push(m_start, EventKind::MainStart, Subject::Main, p.clone());
        trace.push(m_end, EventKind::MainEnd, Subject::Main, p);

        // Stream this layer's mini-batches out in plan order; the main
        // node's sender serializes them.
        let mut layer_results_in = m_end;
        for batch in plan.batches.iter().filter(|b| b.layer == layer) {
            let w = batch.worker;
            let s = batch.token_positions.len();
            let bytes = per_token_bytes * s as u64;
            let send_start = m_end.max(main_sender_free);
            let arrive = send_start + cost.lan_time(bytes);
            main_sender_free = arrive;
            let p = Payload {
                layer: Some(layer),
                expert: Some(batch.expert),
                chunk_len: Some(s),
                bytes: Some(bytes),
                note: Some("chunk"),
                ..Payload::default()
            };
            trace.push(send_start, EventKind::TransferStart, Subject::Main, p.clone());
            trace.push(arrive, EventKind::TransferEnd, Subject::Main, p);

            // First chunk of this (layer, expert) on the worker: stage the
            // expert, evicting whatever it held. Which experts activate is
            // known once the layer's gate has run, so never before m_end.
            if worker_resident[w] != Some((layer, batch.expert)) {
                let load_start = worker_free[w].max(m_end);
                let load_end = load_start + load_dur;
                let mut p = Payload {
                    layer: Some(layer),
                    expert: Some(batch.expert),
                    evicts: worker_resident[w].map(|(_, e)| e),
                    note: Some("prefill"),
                    ..Payload::default()
                };
                trace.push(load_start, EventKind::LoadStart, Subject::Worker(w), p.clone());
                p.evicts = None;
                trace.push(load_end, EventKind::LoadEnd, Subject::Worker(w), p);
                worker_free[w] = load_end;
                worker_resident[w] = Some((layer, batch.expert));
            }

            let c_start = arrive.max(worker_free[w]);
            let c_end = c_start + batched(cost.t_w, s);
            worker_free[w] = c_end;
            completion = completion.max(c_end);
            let p = Payload {
                layer: Some(layer),
                expert: Some(batch.expert),
                chunk_len: Some(s),
                note: Some("prefill"),
                ..Payload::default()
            };
            trace.push(c_start, EventKind::ComputeStart, Subject::Worker(w), p.clone());
            trace.push(c_end, EventKind::ComputeEnd, Subject::Worker(w), p);

            // Result returns on the worker's own sender, overlapping its
            // next chunk's compute.
            let r_start = c_end.max(worker_sender_free[w]);
            let r_end = r_start + cost.lan_time(bytes);
            worker_sender_free[w] = r_end;
            let p = Payload {
                layer: Some(layer),
                expert: Some(batch.expert),
                chunk_len: Some(s),
                bytes: Some(bytes),
                note: Some("result"),
                ..Payload::default()
            };
            trace.push(r_start, EventKind::TransferStart, Subject::Worker(w), p.clone());
            trace.push(r_end, EventKind::TransferEnd, Subject::Worker(w), p);
            layer_results_in = layer_results_in.max(r_end);
        }

        // The next layer's attention needs every expert output of this one.
        main_free = main_free.max(layer_results_in);
        pipeline_end = pipeline_end.max(layer_results_in);
    }

    trace.finish();
    if let Err(err) = audit_trace(&trace, 2) {
        return Err(Error::internal(format!(
            "prefill trace failed its own audit: {err}\n{}",
            dump_trace(&trace, 40)
        )));
    }
    Ok(PrefillSimResult { state, routing, trace, completion_s: completion, pipeline_end_s: pipeline_end })
}

/// The plan must cover exactly the (layer, expert) token groups the prompt
/// routes, in order, chunked to the plan's own size.
fn validate_plan_against_routing(
    plan: &PrefillPlan,
    routing: &[Vec<RoutingDecision>],
    prompt_len: usize,
) -> Result<()> {
    use std::collections::BTreeMap;
    if plan.mini_batch_size == 0 {
        return Err(Error::planning("mini_batch_size must be at least 1"));
    }
    let mut expected: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, per_layer) in routing.iter().enumerate() {
        for decision in per_layer {
            for &e in &decision.experts {
                expected.entry((decision.layer, e)).or_default().push(t);
            }
        }
    }
    let mut seen: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for batch in &plan.batches {
        if batch.token_positions.is_empty() {
            return Err(Error::planning("plan contains an empty mini-batch"));
        }
        if batch.token_positions.len() > plan.mini_batch_size {
            return Err(Error::planning("mini-batch exceeds the plan's chunk size"));
        }
        if batch.token_positions.iter().any(|&t| t >= prompt_len) {
            return Err(Error::planning("mini-batch references a position beyond the prompt"));
        }
        seen.entry((batch.layer, batch.expert))
            .or_default()
            .extend(batch.token_positions.iter().copied());
    }
    if seen != expected {
        return Err(Error::planning(
            "prefill plan does not match the prompt's routing (stale or foreign plan)",
        ));
    }
    Ok(())
}
