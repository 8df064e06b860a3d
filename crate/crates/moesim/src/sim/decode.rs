//! Decode-phase pipeline simulation.
//!
//! One iteration decodes one token. The main node runs one attention slot
//! per layer, ships the layer's hidden state to the worker group that owns
//! the layer (`layer mod num_groups`), the group computes the routed experts
//! for one slot, and the lead worker ships the result back. Groups use the
//! gap between their compute slots to load the experts predicted for their
//! next layer; when the prediction is wrong or arrives after the gate, the
//! correction can only start once the true routing reaches the group with
//! the embedding, which is where stalls come from.
//!
//! Timing never feeds back into the numerics: every emitted token comes from
//! the exact same forward pass a single-node run would execute, so the token
//! stream bit-matches the sequential oracle no matter how the pipeline is
//! configured.

use serde::Serialize;

use crate::cluster::{assign_experts, handle_misprediction, plan_groups, ClusterConfig};
use crate::error::{Error, Result};
use crate::model::{forward_token, prefill, InferenceState, ToyMoeModel};
use crate::rng::SplitMix64;
use crate::sep::{AlignmentPolicy, MainFeedback, RoutingRecord, shadow_decode_step};
use crate::sim::{
    align_payload_bytes, audit_trace, dump_trace, CostModel, EventKind, EventTrace, Payload,
    Subject,
};

/// How worker groups decide which experts to stage ahead of the gate.
#[derive(Debug, Clone, PartialEq)]
pub enum PrefetchMode {
    /// A shadow node runs a (possibly quantized) replica one iteration ahead
    /// and streams per-layer routing predictions to the groups. `bits` of
    /// `None` means a full-precision replica.
    Shadow { bits: Option<u8>, policy: AlignmentPolicy },
    /// No shadow: groups stage a uniformly random expert set as soon as they
    /// finish their previous layer. Seeded, so runs are reproducible.
    Random { seed: u64 },
    /// No staging at all: every load starts when the true routing arrives
    /// with the embedding.
    None,
}

/// Outcome of one simulated decode run.
#[derive(Debug, Clone)]
pub struct DecodeSimResult {
    /// All generated tokens, in order, including the final unprocessed one.
    /// Bit-identical to a sequential forward pass of the same model/prompt.
    pub tokens: Vec<u32>,
    pub trace: EventTrace,
    /// One routing record per (iteration, layer) actually decoded.
    pub records: Vec<RoutingRecord>,
    /// Number of decode iterations executed (may stop early at end-of-text).
    pub iterations: u64,
}

/// The six staging/alignment configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AblationCase {
    /// Shadow predictions, token and KV alignment every iteration.
    ShadowAlignedTokenKv = 1,
    /// Shadow predictions, token alignment only.
    ShadowAlignedToken = 2,
    /// Shadow predictions, KV alignment only.
    ShadowAlignedKv = 3,
    /// Shadow predictions, never aligned.
    ShadowUnaligned = 4,
    /// Random staging, no shadow.
    RandomPrefetch = 5,
    /// On-demand loads only, no staging.
    NoPrefetch = 6,
}

impl AblationCase {
    pub const ALL: [AblationCase; 6] = [
        AblationCase::ShadowAlignedTokenKv,
        AblationCase::ShadowAlignedToken,
        AblationCase::ShadowAlignedKv,
        AblationCase::ShadowUnaligned,
        AblationCase::RandomPrefetch,
        AblationCase::NoPrefetch,
    ];

    pub fn index(&self) -> u8 {
        *self as u8
    }

    /// Stable name used in CSV keys and CLI output.
    pub fn label(&self) -> &'static str {
        match self {
            AblationCase::ShadowAlignedTokenKv => "shadow-aligned-token-kv",
            AblationCase::ShadowAlignedToken => "shadow-aligned-token",
            AblationCase::ShadowAlignedKv => "shadow-aligned-kv",
            AblationCase::ShadowUnaligned => "shadow-unaligned",
            AblationCase::RandomPrefetch => "random-prefetch",
            AblationCase::NoPrefetch => "no-prefetch",
        }
    }

    /// The prefetch mode this case runs under, given the shadow's precision
    /// and a seed for the random-staging case.
    pub fn prefetch(&self, shadow_bits: Option<u8>, seed: u64) -> PrefetchMode {
        let shadow = |policy| PrefetchMode::Shadow { bits: shadow_bits, policy };
        match self {
            AblationCase::ShadowAlignedTokenKv => shadow(AlignmentPolicy::every_iteration()),
            AblationCase::ShadowAlignedToken => {
                shadow(AlignmentPolicy::new(Some(1), None).expect("period 1 is valid"))
            }
            AblationCase::ShadowAlignedKv => {
                shadow(AlignmentPolicy::new(None, Some(1)).expect("period 1 is valid"))
            }
            AblationCase::ShadowUnaligned => shadow(AlignmentPolicy::never()),
            AblationCase::RandomPrefetch => PrefetchMode::Random { seed },
            AblationCase::NoPrefetch => PrefetchMode::None,
        }
    }
}

/// Waits shorter than this are rounding noise from the time recurrences
/// (different summation orders of the same quantities), not stalls; a real
/// load-induced stall at any plausible bandwidth is milliseconds.
const STALL_EPS: f64 = 1.0e-12;

/// Per-iteration clock state that survives across layers.
struct Clocks {
    main_free: f64,
    main_sender_free: f64,
    shadow_sender_free: f64,
    /// End of the shadow's previous full iteration.
    shadow_iter_end: f64,
    /// Per group: end of the group's latest expert-compute slot.
    group_free: Vec<f64>,
    /// Per group: the lead worker's outbound link.
    lead_sender_free: Vec<f64>,
    /// Per worker: end of the latest host-to-accelerator copy.
    worker_link_free: Vec<f64>,
    /// Per worker: the expert currently held (evicted at its next load).
    resident: Vec<Option<usize>>,
    /// Main-slot start times of the previous iteration, one per layer; the
    /// shadow may not start its layer-l pass for iteration n before the main
    /// node started layer l of iteration n-1 (bounded lookahead).
    prev_m_start: Vec<f64>,
    /// Arrival of the previous iteration's final result at the main node.
    prev_result_arrival: f64,
}

/// Simulate decoding `max_new_tokens` tokens (stopping early at end-of-text)
/// on the distributed pipeline.
///
/// The prompt is prefilled numerically before the clock starts; decode
/// virtual time begins at `start_time` (compose with a prefill simulation by
/// passing its completion time). `prompt_index` only tags the routing
/// records of this run.
#[allow(clippy::too_many_arguments)]
pub fn run_decode_sim(
    model: &ToyMoeModel,
    prompt: &[u32],
    max_new_tokens: usize,
    cluster: &ClusterConfig,
    cost: &CostModel,
    prefetch: &PrefetchMode,
    prompt_index: usize,
    start_time: f64,
) -> Result<DecodeSimResult> {
    cluster.validate()?;
    cluster.validate_for_top_k(model.config().top_k)?;
    cost.validate()?;
    if cluster.expert_param_bytes != model.expert_param_bytes() {
        return Err(Error::config(format!(
            "cluster expects {}-byte experts but the model's are {} bytes",
            cluster.expert_param_bytes,
            model.expert_param_bytes()
        )));
    }
    if max_new_tokens == 0 {
        return Err(Error::input("max_new_tokens must be at least 1"));
    }
    if !start_time.is_finite() || start_time < 0.0 {
        return Err(Error::input(format!("start_time must be finite and non-negative, got {start_time}")));
    }

    let config = model.config();
    let num_layers = config.num_layers;
    let num_groups = cluster.num_groups();
    let top_k = config.top_k;
    let groups = plan_groups(cluster)?;
    let load_dur = cost.load_time(model.expert_param_bytes());
    let embed_bytes = (config.hidden_dim * 8) as u64;
    let embed_time = cost.lan_time(embed_bytes);
    let pred_bytes = (top_k * 8) as u64;
    let pred_time = cost.lan_time(pred_bytes);

    // Numeric side: the main model's state, plus the shadow replica when the
    // staging mode uses one. The shadow prefills the same prompt itself; only
    // decode time is on this clock.
    let (mut state, _) = prefill(model, prompt)?;
    let mut shadow: Option<(ToyMoeModel, InferenceState, AlignmentPolicy)> = match prefetch {
        PrefetchMode::Shadow { bits, policy } => {
            let shadow_model = match bits {
                Some(b) => model.quantize(*b)?,
                None => model.clone(),
            };
            let (shadow_state, _) = prefill(&shadow_model, prompt)?;
            Some((shadow_model, shadow_state, policy.clone()))
        }
        _ => None,
    };
    let mut staging_rng = match prefetch {
        PrefetchMode::Random { seed } => Some(SplitMix64::new(*seed)),
        _ => None,
    };

    let mut trace = EventTrace::new();
    let mut records = Vec::new();
    let mut clocks = Clocks {
        main_free: start_time,
        main_sender_free: start_time,
        shadow_sender_free: start_time,
        shadow_iter_end: start_time,
        group_free: vec![start_time; num_groups],
        lead_sender_free: vec![start_time; num_groups],
        worker_link_free: vec![start_time; cluster.num_workers],
        resident: vec![None; cluster.num_workers],
        prev_m_start: vec![start_time; num_layers],
        prev_result_arrival: start_time,
    };

    let mut iterations = 0u64;
    let mut prev_emitted: Option<u32> = None;

    for n in 1..=max_new_tokens as u64 {
        let pending = state.pending_token();
        if pending == crate::EOS_TOKEN {
            break;
        }
        iterations = n;

        // ---- numerics for this iteration ----
        let predictions = match shadow.as_mut() {
            Some((shadow_model, shadow_state, policy)) => {
                let feedback = if policy.any_fires(n) {
                    Some(MainFeedback::capture(&state)?)
                } else {
                    None
                };
                let (decisions, _) =
                    shadow_decode_step(shadow_model, shadow_state, policy, feedback.as_ref(), n)?;
                Some(decisions)
            }
            None => None,
        };
        let (_, true_decisions) = forward_token(model, &mut state, None)?;

        // ---- timing: main slot for layer 0, which also finalizes the
        // previous iteration (emit + head share the slot) ----
        let mut m_start = vec![0.0f64; num_layers];
        let mut m_end = vec![0.0f64; num_layers];
        m_start[0] = clocks.main_free.max(clocks.prev_result_arrival);
        m_end[0] = m_start[0] + cost.t_m;
        clocks.main_free = m_end[0];
        trace.push(m_start[0], EventKind::MainStart, Subject::Main, Payload::at(n, 0));
        trace.push(m_end[0], EventKind::MainEnd, Subject::Main, Payload::at(n, 0));
        if let Some(token) = prev_emitted.take() {
            let mut p = Payload::default();
            p.iteration = Some(n - 1);
            p.token = Some(token);
            trace.push(m_end[0], EventKind::TokenEmitted, Subject::Main, p);
        }
        prev_emitted = Some(pending);

        // Embedding for layer 0 leaves first; the alignment payload (if this
        // iteration fires one) queues behind it on the main node's sender.
        let mut embed_arrival = vec![0.0f64; num_layers];
        embed_arrival[0] = send(
            &mut trace,
            &mut clocks.main_sender_free,
            Subject::Main,
            m_end[0],
            embed_time,
            embed_payload(n, 0, embed_bytes),
        );

        let mut align_release = clocks.shadow_iter_end;
        if let Some((_, _, policy)) = shadow.as_ref() {
            let token_fires = policy.token_fires(n);
            let kv_fires = policy.kv_fires(n);
            if token_fires || kv_fires {
                let bytes =
                    align_payload_bytes(num_layers, config.hidden_dim, token_fires, kv_fires);
                let align_time = cost.lan_time(bytes);
                let mut p = Payload::default();
                p.iteration = Some(n);
                p.bytes = Some(bytes);
                p.note = Some("align");
                let arrival = send(
                    &mut trace,
                    &mut clocks.main_sender_free,
                    Subject::Main,
                    m_end[0],
                    align_time,
                    p.clone(),
                );
                trace.push(m_end[0], EventKind::AlignStart, Subject::Shadow, p.clone());
                trace.push(arrival, EventKind::AlignEnd, Subject::Shadow, p);
                align_release = align_release.max(arrival);
            }
        }

        // ---- shadow pass for this iteration: chained layer slots, capped
        // lookahead, one small routing message per layer ----
        let mut pred_arrival = vec![f64::INFINITY; num_layers];
        if shadow.is_some() {
            let mut s_free = clocks.shadow_iter_end.max(align_release);
            for l in 0..num_layers {
                let s_start = s_free.max(clocks.prev_m_start[l]);
                let s_end = s_start + cost.shadow_layer_time;
                s_free = s_end;
                trace.push(s_start, EventKind::ComputeStart, Subject::Shadow, Payload::at(n, l));
                trace.push(s_end, EventKind::ComputeEnd, Subject::Shadow, Payload::at(n, l));
                let mut p = Payload::at(n, l);
                p.bytes = Some(pred_bytes);
                p.note = Some("pred");
                pred_arrival[l] = send(
                    &mut trace,
                    &mut clocks.shadow_sender_free,
                    Subject::Shadow,
                    s_end,
                    pred_time,
                    p,
                );
            }
            clocks.shadow_iter_end = s_free;
        }

        // ---- layer loop ----
        let mut result_arrival = vec![0.0f64; num_layers];
        for l in 0..num_layers {
            if l > 0 {
                m_start[l] = clocks.main_free.max(result_arrival[l - 1]);
                m_end[l] = m_start[l] + cost.t_m;
                clocks.main_free = m_end[l];
                trace.push(m_start[l], EventKind::MainStart, Subject::Main, Payload::at(n, l));
                trace.push(m_end[l], EventKind::MainEnd, Subject::Main, Payload::at(n, l));
                embed_arrival[l] = send(
                    &mut trace,
                    &mut clocks.main_sender_free,
                    Subject::Main,
                    m_end[l],
                    embed_time,
                    embed_payload(n, l, embed_bytes),
                );
            }
            let gate_time = m_end[l];
            let group = l % num_groups;
            let workers = &groups[group];
            let true_experts = &true_decisions[l].experts;

            // What the group staged for this layer, and whether the staged
            // routing was in hand before the gate resolved.
            let (predicted, available) = match prefetch {
                PrefetchMode::Shadow { .. } => {
                    let p = &predictions.as_ref().expect("shadow mode has predictions")[l].experts;
                    (p.clone(), pred_arrival[l] <= gate_time)
                }
                PrefetchMode::Random { .. } => {
                    let rng = staging_rng.as_mut().expect("random mode has a generator");
                    (random_expert_set(rng, config.num_experts, top_k), true)
                }
                PrefetchMode::None => (Vec::new(), false),
            };

            // `placement` is where each true expert actually sits when the
            // group computes, which after a misprediction differs from the
            // nominal staging assignment.
            let (ready, placement) = if available {
                // Stage the predicted set as soon as the group is idle and
                // the prediction is in hand.
                let staged = assign_experts(&predicted, workers)?;
                let stage_start = match prefetch {
                    // Random staging needs no message: the guess is local.
                    PrefetchMode::Random { .. } => clocks.group_free[group],
                    _ => clocks.group_free[group].max(pred_arrival[l]),
                };
                let mut ready = stage_start;
                for &(expert, worker) in &staged {
                    let begin = stage_start.max(clocks.worker_link_free[worker]);
                    let done = begin + load_dur;
                    push_load(&mut trace, &mut clocks, worker, expert, n, l, begin, done, "prefetch");
                    ready = ready.max(done);
                }
                if predicted == *true_experts {
                    (ready, staged)
                } else {
                    // The gate disagrees: evict-and-reload on the workers
                    // holding unneeded experts. The correction cannot begin
                    // before the true routing arrives with the embedding,
                    // and each worker's copy engine is not preemptible.
                    let mut p = Payload::at(n, l);
                    p.predicted = Some(predicted.clone());
                    p.actual = Some(true_experts.clone());
                    trace.push(gate_time, EventKind::Mispredict, Subject::Main, p);
                    let mut placement: Vec<(usize, usize)> = staged
                        .iter()
                        .copied()
                        .filter(|(expert, _)| true_experts.contains(expert))
                        .collect();
                    for (expert, worker) in handle_misprediction(true_experts, &staged, workers) {
                        let begin = embed_arrival[l].max(clocks.worker_link_free[worker]);
                        let done = begin + load_dur;
                        push_load(&mut trace, &mut clocks, worker, expert, n, l, begin, done, "reload");
                        ready = ready.max(done);
                        placement.push((expert, worker));
                    }
                    placement.sort_unstable();
                    (ready, placement)
                }
            } else {
                // No usable staging: load the true set once it arrives with
                // the embedding.
                let begin = clocks.group_free[group].max(embed_arrival[l]);
                let placement = assign_experts(true_experts, workers)?;
                let mut ready = begin;
                for &(expert, worker) in &placement {
                    let start = begin.max(clocks.worker_link_free[worker]);
                    let done = start + load_dur;
                    push_load(&mut trace, &mut clocks, worker, expert, n, l, start, done, "fallback");
                    ready = ready.max(done);
                }
                (ready, placement)
            };

            let ec_start = embed_arrival[l].max(ready);
            let stall = ec_start - embed_arrival[l];
            if stall > STALL_EPS {
                let mut p = Payload::at(n, l);
                p.seconds = Some(stall);
                let aligning = matches!(
                    prefetch,
                    PrefetchMode::Shadow { policy, .. } if policy.any_fires(n)
                );
                p.note = Some(if (n == 1 || aligning) && l < num_groups { "warmup" } else { "steady" });
                trace.push(embed_arrival[l], EventKind::Stall, Subject::Main, p);
            }
            let ec_end = ec_start + cost.t_w;
            for &(expert, worker) in &placement {
                let mut p = Payload::at(n, l);
                p.expert = Some(expert);
                trace.push(ec_start, EventKind::ComputeStart, Subject::Worker(worker), p.clone());
                trace.push(ec_end, EventKind::ComputeEnd, Subject::Worker(worker), p);
            }
            clocks.group_free[group] = ec_end;

            let mut p = Payload::at(n, l);
            p.bytes = Some(embed_bytes);
            p.note = Some("result");
            result_arrival[l] = send(
                &mut trace,
                &mut clocks.lead_sender_free[group],
                Subject::Worker(workers[0]),
                ec_end,
                embed_time,
                p,
            );

            records.push(RoutingRecord {
                prompt_id: prompt_index,
                token_index: n as usize,
                layer: l,
                true_experts: true_experts.clone(),
                predicted_experts: predicted,
                prediction_available: available,
            });
        }

        clocks.prev_m_start = m_start;
        clocks.prev_result_arrival = result_arrival[num_layers - 1];
    }

    // Trailing main slot: the final decoded token's head pass has no next
    // iteration to share a slot with.
    if let Some(token) = prev_emitted {
        let f_start = clocks.main_free.max(clocks.prev_result_arrival);
        let f_end = f_start + cost.t_m;
        let mut p = Payload::default();
        p.iteration = Some(iterations);
        p.note = Some("finalize");
        trace.push(f_start, EventKind::MainStart, Subject::Main, p.clone());
        trace.push(f_end, EventKind::MainEnd, Subject::Main, p);
        let mut p = Payload::default();
        p.iteration = Some(iterations);
        p.token = Some(token);
        trace.push(f_end, EventKind::TokenEmitted, Subject::Main, p);
    }

    trace.finish();
    if let Err(err) = audit_trace(&trace, 2) {
        return Err(Error::internal(format!(
            "decode trace failed its own audit: {err}\n{}",
            dump_trace(&trace, 40)
        )));
    }

    let tokens = state.token_ids()[prompt.len()..].to_vec();
    Ok(DecodeSimResult { tokens, trace, records, iterations })
}

/// Run all six ablation cases on one prompt with one model. The shadow cases
/// use `shadow_bits`; the random-staging case draws from `seed`.
pub fn run_ablation(
    model: &ToyMoeModel,
    prompt: &[u32],
    max_new_tokens: usize,
    cluster: &ClusterConfig,
    cost: &CostModel,
    shadow_bits: Option<u8>,
    seed: u64,
) -> Result<Vec<(AblationCase, DecodeSimResult)>> {
    AblationCase::ALL
        .iter()
        .map(|case| {
            let mode = case.prefetch(shadow_bits, seed);
            let result =
                run_decode_sim(model, prompt, max_new_tokens, cluster, cost, &mode, 0, 0.0)?;
            Ok((*case, result))
        })
        .collect()
}

fn embed_payload(iteration: u64, layer: usize, bytes: u64) -> Payload {
    let mut p = Payload::at(iteration, layer);
    p.bytes = Some(bytes);
    p.note = Some("embed");
    p
}

/// Occupy a sender link for one message; returns the arrival time.
fn send(
    trace: &mut EventTrace,
    sender_free: &mut f64,
    subject: Subject,
    ready: f64,
    duration: f64,
    payload: Payload,
) -> f64 {
    let start = ready.max(*sender_free);
    let end = start + duration;
    *sender_free = end;
    trace.push(start, EventKind::TransferStart, subject, payload.clone());
    trace.push(end, EventKind::TransferEnd, subject, payload);
    end
}

/// Record one expert load, evicting whatever the worker held.
#[allow(clippy::too_many_arguments)]
fn push_load(
    trace: &mut EventTrace,
    clocks: &mut Clocks,
    worker: usize,
    expert: usize,
    iteration: u64,
    layer: usize,
    begin: f64,
    done: f64,
    note: &'static str,
) {
    let mut p = Payload::at(iteration, layer);
    p.expert = Some(expert);
    p.evicts = clocks.resident[worker];
    p.note = Some(note);
    trace.push(begin, EventKind::LoadStart, Subject::Worker(worker), p.clone());
    p.evicts = None;
    trace.push(done, EventKind::LoadEnd, Subject::Worker(worker), p);
    clocks.worker_link_free[worker] = done;
    clocks.resident[worker] = Some(expert);
}

/// `k` distinct experts drawn uniformly, ascending.
fn random_expert_set(rng: &mut SplitMix64, num_experts: usize, k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while picked.len() < k {
        let x = (rng.next_u64() % num_experts as u64) as usize;
        if !picked.contains(&x) {
            picked.push(x);
        }
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::sep::compute_recall;

    fn test_model() -> ToyMoeModel {
        let config = ModelConfig {
            num_layers: 8,
            num_experts: 8,
            top_k: 2,
            hidden_dim: 16,
            vocab_size: 64,
            seed: 11,
        };
        ToyMoeModel::init(config).unwrap()
    }

    fn test_cluster(model: &ToyMoeModel) -> ClusterConfig {
        ClusterConfig {
            num_workers: 8,
            group_size: 2,
            worker_memory_bytes: 16 * model.expert_param_bytes(),
            expert_param_bytes: model.expert_param_bytes(),
        }
    }

    fn oracle_decode(model: &ToyMoeModel, prompt: &[u32], max_new: usize) -> Vec<u32> {
        let (mut state, _) = prefill(model, prompt).unwrap();
        for _ in 0..max_new {
            if state.pending_token() == crate::EOS_TOKEN {
                break;
            }
            forward_token(model, &mut state, None).unwrap();
        }
        state.token_ids()[prompt.len()..].to_vec()
    }

    #[test]
    fn tokens_bit_match_sequential_oracle_in_every_mode() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let prompt = vec![5, 9, 2];
        let expected = oracle_decode(&model, &prompt, 12);
        let modes = [
            PrefetchMode::Shadow { bits: Some(8), policy: AlignmentPolicy::every_iteration() },
            PrefetchMode::Shadow { bits: Some(4), policy: AlignmentPolicy::never() },
            PrefetchMode::Shadow { bits: None, policy: AlignmentPolicy::new(Some(4), Some(8)).unwrap() },
            PrefetchMode::Random { seed: 7 },
            PrefetchMode::None,
        ];
        for mode in &modes {
            let out =
                run_decode_sim(&model, &prompt, 12, &cluster, &cost, mode, 0, 0.0).unwrap();
            assert_eq!(out.tokens, expected, "mode {mode:?} changed the numerics");
        }
    }

    #[test]
    fn identical_runs_produce_identical_traces() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let mode = PrefetchMode::Shadow { bits: Some(8), policy: AlignmentPolicy::every_iteration() };
        let a = run_decode_sim(&model, &[3, 4], 8, &cluster, &cost, &mode, 0, 0.0).unwrap();
        let b = run_decode_sim(&model, &[3, 4], 8, &cluster, &cost, &mode, 0, 0.0).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn emits_one_token_per_iteration_in_order() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let out = run_decode_sim(
            &model,
            &[1, 2, 3],
            10,
            &cluster,
            &cost,
            &PrefetchMode::None,
            0,
            0.0,
        )
        .unwrap();
        let times = out.trace.token_times();
        assert_eq!(times.len() as u64, out.iterations);
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        // Emitted tokens are the generated stream minus the final pending one.
        let emitted: Vec<u32> = out
            .trace
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::TokenEmitted)
            .map(|e| e.payload.token.unwrap())
            .collect();
        assert_eq!(&out.tokens[..out.tokens.len() - 1], &emitted[..]);
    }

    #[test]
    fn start_time_offsets_the_whole_trace() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let mode = PrefetchMode::Random { seed: 3 };
        let base = run_decode_sim(&model, &[7], 6, &cluster, &cost, &mode, 0, 0.0).unwrap();
        let moved = run_decode_sim(&model, &[7], 6, &cluster, &cost, &mode, 0, 1.5).unwrap();
        assert_eq!(base.trace.len(), moved.trace.len());
        for (a, b) in base.trace.events().iter().zip(moved.trace.events()) {
            assert!((b.time - (a.time + 1.5)).abs() < 1e-12);
            assert_eq!(a.kind, b.kind);
        }
    }

    #[test]
    fn no_prefetch_stalls_every_layer_and_has_no_mispredicts() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let out = run_decode_sim(
            &model,
            &[4, 4, 8],
            6,
            &cluster,
            &cost,
            &PrefetchMode::None,
            0,
            0.0,
        )
        .unwrap();
        assert_eq!(out.trace.mispredict_count(), 0);
        let stalls =
            out.trace.events().iter().filter(|e| e.kind == EventKind::Stall).count() as u64;
        assert_eq!(stalls, out.iterations * model.config().num_layers as u64);
        // Every stall is within rounding of the bare load time.
        let load = cost.load_time(model.expert_param_bytes());
        for e in out.trace.events().iter().filter(|e| e.kind == EventKind::Stall) {
            let s = e.payload.seconds.unwrap();
            assert!((s - load).abs() < 1e-12, "stall {s} vs load {load}");
        }
        for r in &out.records {
            assert!(!r.prediction_available);
            assert!(r.predicted_experts.is_empty());
        }
        let recall = compute_recall(&out.records, model.config().top_k, model.config().num_layers).unwrap();
        assert_eq!(recall.overall, 0.0);
    }

    #[test]
    fn random_staging_recall_sits_near_k_over_e() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let mut records = Vec::new();
        for seed in 0..8u64 {
            let out = run_decode_sim(
                &model,
                &[seed as u32 + 1, 2, 30],
                24,
                &cluster,
                &cost,
                &PrefetchMode::Random { seed },
                seed as usize,
                0.0,
            )
            .unwrap();
            assert!(out.trace.mispredict_count() > 0);
            records.extend(out.records);
        }
        let recall = compute_recall(&records, model.config().top_k, model.config().num_layers).unwrap();
        // Uniform staging of k of E experts recalls k/E on average (0.25).
        assert!(
            (recall.overall - 0.25).abs() < 0.08,
            "random staging recall {}",
            recall.overall
        );
    }

    #[test]
    fn all_mode_traces_pass_the_audit() {
        // run_decode_sim audits internally; this exercises it across modes
        // and a second cluster shape, and re-audits with the public entry.
        let model = test_model();
        let mut cluster = test_cluster(&model);
        let cost = CostModel::default();
        for mode in [
            PrefetchMode::Shadow { bits: Some(6), policy: AlignmentPolicy::new(Some(2), Some(4)).unwrap() },
            PrefetchMode::Random { seed: 1 },
            PrefetchMode::None,
        ] {
            let out = run_decode_sim(&model, &[9, 1], 9, &cluster, &cost, &mode, 0, 0.0).unwrap();
            audit_trace(&out.trace, 2).unwrap();
        }
        cluster.num_workers = 4;
        cluster.group_size = 2;
        let out = run_decode_sim(
            &model,
            &[9, 1],
            9,
            &cluster,
            &cost,
            &PrefetchMode::Random { seed: 2 },
            0,
            0.0,
        )
        .unwrap();
        audit_trace(&out.trace, 2).unwrap();
    }

    #[test]
    fn perfect_predictions_under_budget_never_stall_in_steady_state() {
        // Dyadic cost values make the load-vs-budget comparison exact: with
        // 4 groups, budget = 4*t_m + 3*t_w = 2^-6 s, and the load equals it
        // exactly at bandwidth bytes/budget.
        let model = test_model();
        let cluster = test_cluster(&model);
        let bytes = model.expert_param_bytes(); // 2*4*16*16*8 = 2^14, a power of two
        let t_m = f64::powi(2.0, -10);
        let t_w = f64::powi(2.0, -8);
        let budget = 4.0 * t_m + 3.0 * t_w; // 2^-6 exactly
        let cost = CostModel {
            t_m,
            t_w,
            cpu_gpu_bandwidth: bytes as f64 / budget,
            lan_bandwidth: f64::INFINITY,
            lan_latency: 0.0,
            serialize_overhead: 0.0,
            shadow_layer_time: 1.0e-4,
            prefill_alpha: 0.2,
        };
        assert_eq!(cost.load_time(bytes), budget);
        let mode = PrefetchMode::Shadow { bits: None, policy: AlignmentPolicy::never() };
        let out = run_decode_sim(&model, &[3, 5, 40], 10, &cluster, &cost, &mode, 0, 0.0).unwrap();
        assert_eq!(out.trace.mispredict_count(), 0, "full-precision shadow must agree");
        for (layer, (_, steady)) in out.trace.stall_by_layer() {
            assert_eq!(steady, 0.0, "steady stall on layer {layer}");
        }
    }

    #[test]
    fn ten_percent_over_budget_stalls_exactly_the_overshoot() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let bytes = model.expert_param_bytes();
        let t_m = f64::powi(2.0, -10);
        let t_w = f64::powi(2.0, -8);
        let budget = 4.0 * t_m + 3.0 * t_w;
        let cost = CostModel {
            t_m,
            t_w,
            cpu_gpu_bandwidth: bytes as f64 / (1.1 * budget),
            lan_bandwidth: f64::INFINITY,
            lan_latency: 0.0,
            serialize_overhead: 0.0,
            shadow_layer_time: 1.0e-4,
            prefill_alpha: 0.2,
        };
        let overshoot = cost.load_time(bytes) - budget;
        assert!(overshoot > 0.0);
        let mode = PrefetchMode::Shadow { bits: None, policy: AlignmentPolicy::never() };
        let out = run_decode_sim(&model, &[3, 5, 40], 12, &cluster, &cost, &mode, 0, 0.0).unwrap();
        let mut nonzero = 0;
        for e in out.trace.events().iter().filter(|e| e.kind == EventKind::Stall) {
            if e.payload.note == Some("warmup") {
                continue;
            }
            let s = e.payload.seconds.unwrap();
            assert!((s - overshoot).abs() < 1e-9, "steady stall {s} vs overshoot {overshoot}");
            nonzero += 1;
        }
        assert!(nonzero > 0, "expected at least one steady stall above budget");
    }

    #[test]
    fn ablation_runs_all_six_cases_with_matching_tokens() {
        let model = test_model();
        let cluster = test_cluster(&model);
        let cost = CostModel::default();
        let prompt = vec![2, 6, 10];
        let expected = oracle_decode(&model, &prompt, 8);
        // Full-precision shadow: it replays the main model exactly, so all
        // four shadow cases must hit perfect recall, random staging sits
        // near k/E, and no staging at all scores zero.
        let results = run_ablation(&model, &prompt, 8, &cluster, &cost, None, 42).unwrap();
        assert_eq!(results.len(), 6);
        for (case, out) in &results {
            assert_eq!(out.tokens, expected, "case {case:?}");
        }
        assert_eq!(
            results.iter().map(|(c, _)| c.index()).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5, 6]
        );
        let recall_of = |i: usize| {
            compute_recall(
                &results[i].1.records,
                model.config().top_k,
                model.config().num_layers,
            )
            .unwrap()
            .overall
        };
        for case in 0..4 {
            for r in &results[case].1.records {
                assert_eq!(
                    r.predicted_experts, r.true_experts,
                    "full-precision shadow predicted wrong, case {}",
                    case + 1
                );
            }
        }
        // Recall still differs across cases: a prediction that arrives
        // after the gate scores nothing, and alignment delays the shadow's
        // departure every iteration while free-running pays only at warm-up.
        assert!(recall_of(3) >= recall_of(0), "free-run sees fewer late predictions");
        assert!(recall_of(4) > 0.0 && recall_of(4) < recall_of(3));
        assert_eq!(recall_of(5), 0.0);
    }

    #[test]
    fn rejects_mismatched_cluster_and_model() {
        let model = test_model();
        let mut cluster = test_cluster(&model);
        cluster.expert_param_bytes += 8;
        let err = run_decode_sim(
            &model,
            &[1],
            4,
            &cluster,
            &CostModel::default(),
            &PrefetchMode::None,
            0,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let cluster = test_cluster(&model);
        let err = run_decode_sim(
            &model,
            &[1],
            0,
            &cluster,
            &CostModel::default(),
            &PrefetchMode::None,
            0,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
