//! Discrete-event timing simulation of the distributed decode/prefill pipeline.
//!
//! The simulator assigns virtual timestamps to the same numeric computation
//! that [`crate::model`] performs, so the emitted token stream always
//! bit-matches a plain sequential forward pass. Timing comes from a small
//! analytic cost model ([`CostModel`]): fixed per-layer compute slots on the
//! main node and the workers, bandwidth/latency transfers on the LAN, and
//! CPU-to-GPU copy time for on-demand expert loads.
//!
//! Every simulated run produces an [`EventTrace`]: a totally ordered list of
//! [`Event`]s (loads, computes, transfers, alignment windows, stalls,
//! mispredictions, token emissions). The trace is the ground truth for all
//! derived metrics, and [`audit_trace`] re-checks its structural invariants
//! (interval balance, per-resource exclusivity, load-before-compute causality,
//! bounded expert residency) after every run.

mod decode;
mod prefill;

pub use decode::{run_ablation, run_decode_sim, AblationCase, DecodeSimResult, PrefetchMode};
pub use prefill::{run_prefill_sim, PrefillSimResult};

use std::collections::BTreeMap;
use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time for one message of `bytes` over a link with the given bandwidth
/// (bytes/s), per-message latency, and per-message serialization overhead.
///
/// Bandwidth must be positive (`f64::INFINITY` is accepted and makes the
/// size-dependent term exactly zero).
pub fn transfer_time(bytes: u64, bandwidth: f64, latency: f64, serialize_overhead: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::config(format!(
            "transfer bandwidth must be positive, got {bandwidth}"
        )));
    }
    if latency < 0.0 || serialize_overhead < 0.0 {
        return Err(Error::config(
            "transfer latency and serialization overhead must be non-negative",
        ));
    }
    Ok(bytes as f64 / bandwidth + latency + serialize_overhead)
}

/// Analytic cost model for the simulated cluster.
///
/// All times are in seconds, bandwidths in bytes per second. The defaults
/// describe a small LAN cluster of single-board computers: a few milliseconds
/// of compute per layer, a gigabit-class network, and a host-to-accelerator
/// copy path that can load one expert in a few milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Main-node compute per layer (attention + gating + normalization),
    /// excluding communication.
    pub t_m: f64,
    /// Worker compute per layer for one expert on one token.
    pub t_w: f64,
    /// Host-memory to accelerator copy bandwidth on each worker.
    pub cpu_gpu_bandwidth: f64,
    /// LAN bandwidth between nodes.
    pub lan_bandwidth: f64,
    /// Fixed per-message LAN latency.
    pub lan_latency: f64,
    /// Per-message packet (de)serialization overhead.
    pub serialize_overhead: f64,
    /// Shadow-node compute per layer (its full forward layer, quantized).
    pub shadow_layer_time: f64,
    /// Fixed fraction of per-token work that does not amortize with batching
    /// during prefill; batch of `s` tokens costs `t * (alpha + (1-alpha)*s)`.
    pub prefill_alpha: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            t_m: 2.0e-3,
            t_w: 5.0e-3,
            cpu_gpu_bandwidth: 7.0e7,
            lan_bandwidth: 1.25e8,
            lan_latency: 2.0e-4,
            serialize_overhead: 2.0e-5,
            shadow_layer_time: 2.8e-3,
            prefill_alpha: 0.2,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_m >= 0.0 && self.t_w >= 0.0 && self.shadow_layer_time >= 0.0) {
            return Err(Error::config("compute times must be non-negative"));
        }
        if !(self.cpu_gpu_bandwidth > 0.0) || !(self.lan_bandwidth > 0.0) {
            return Err(Error::config("bandwidths must be positive"));
        }
        if self.lan_latency < 0.0 || self.serialize_overhead < 0.0 {
            return Err(Error::config("latency and serialization overhead must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.prefill_alpha) {
            return Err(Error::config(format!(
                "prefill_alpha must be in [0, 1), got {}",
                self.prefill_alpha
            )));
        }
        Ok(())
    }

    /// LAN transfer time for one message of `bytes`.
    pub fn lan_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.lan_bandwidth + self.lan_latency + self.serialize_overhead
    }

    /// Host-to-accelerator copy time for one expert's parameters.
    pub fn load_time(&self, expert_param_bytes: u64) -> f64 {
        expert_param_bytes as f64 / self.cpu_gpu_bandwidth
    }
}

/// Bytes shipped to the shadow node for one state-alignment message.
///
/// A key/value alignment carries the newest cache entry of every layer
/// (2 vectors of `hidden_dim` f64 per layer); a token alignment carries one
/// token id. `token` and `kv` select which components fire this iteration.
pub fn align_payload_bytes(num_layers: usize, hidden_dim: usize, token: bool, kv: bool) -> u64 {
    let mut bytes = 0u64;
    if token {
        bytes += 8;
    }
    if kv {
        bytes += (num_layers as u64) * 2 * (hidden_dim as u64) * 8;
    }
    bytes
}

/// Event kinds, ordered by tie-break rank for equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    LoadStart,
    LoadEnd,
    ComputeStart,
    ComputeEnd,
    MainStart,
    MainEnd,
    TransferStart,
    TransferEnd,
    AlignStart,
    AlignEnd,
    Stall,
    Mispredict,
    TokenEmitted,
}

/// The node an event happened on. Transfers are attributed to the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Main,
    Shadow,
    Worker(usize),
}

impl Subject {
    fn rank(&self) -> (u8, usize) {
        match self {
            Subject::Main => (0, 0),
            Subject::Shadow => (1, 0),
            Subject::Worker(w) => (2, *w),
        }
    }
}

impl Serialize for Subject {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Subject::Main => ser.serialize_str("main"),
            Subject::Shadow => ser.serialize_str("shadow"),
            Subject::Worker(w) => ser.serialize_str(&format!("worker:{w}")),
        }
    }
}

/// What a transfer or load event was about; `None` fields are omitted from
/// the JSONL form.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Payload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expert: Option<usize>,
    /// Expert evicted at this load's start, if the worker held one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evicts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<u32>,
    /// Tokens in a prefill mini-batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<Vec<usize>>,
    /// Free-form discriminator: "embed", "result", "pred", "align" for
    /// transfers; "prefetch", "reload", "fallback" for loads; "steady" or
    /// "warmup" for stalls; "finalize" for the trailing main slot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<&'static str>,
}

impl Payload {
    pub fn at(iteration: u64, layer: usize) -> Self {
        Payload { iteration: Some(iteration), layer: Some(layer), ..Payload::default() }
    }
}

/// One timestamped event. `time` is virtual seconds from the run's origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub subject: Subject,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Totally ordered event log of one simulated run.
///
/// Ordering is by time, then event-kind rank, then subject, then insertion
/// order, which makes traces of identical runs byte-identical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    events: Vec<Event>,
}

impl EventTrace {
    pub fn new() -> Self {
        EventTrace { events: Vec::new() }
    }

    pub(crate) fn push(&mut self, time: f64, kind: EventKind, subject: Subject, payload: Payload) {
        self.events.push(Event { time, kind, subject, payload });
    }

    /// Sort into canonical order. Insertion order breaks remaining ties, so
    /// the sort must be stable.
    pub(crate) fn finish(&mut self) {
        self.events
            .sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.cmp(&b.kind)).then(a.subject.rank().cmp(&b.subject.rank())));
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Merge another trace (e.g. a decode run appended to a prefill run).
    /// Event times must already share one clock.
    pub fn extend(&mut self, other: EventTrace) {
        self.events.extend(other.events);
        self.finish();
    }

    /// Times of `TokenEmitted` events in emission order.
    pub fn token_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::TokenEmitted)
            .map(|e| e.time)
            .collect()
    }

    /// Total stalled seconds per layer, split into (warmup, steady).
    pub fn stall_by_layer(&self) -> BTreeMap<usize, (f64, f64)> {
        let mut out: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for e in &self.events {
            if e.kind != EventKind::Stall {
                continue;
            }
            let layer = e.payload.layer.unwrap_or(usize::MAX);
            let secs = e.payload.seconds.unwrap_or(0.0);
            let slot = out.entry(layer).or_insert((0.0, 0.0));
            if e.payload.note == Some("warmup") {
                slot.0 += secs;
            } else {
                slot.1 += secs;
            }
        }
        out
    }

    /// Sum of all stall durations, warm-up included.
    pub fn total_stall(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Stall)
            .filter_map(|e| e.payload.seconds)
            .sum()
    }

    pub fn mispredict_count(&self) -> u64 {
        self.events.iter().filter(|e| e.kind == EventKind::Mispredict).count() as u64
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().map(|e| e.time).unwrap_or(0.0)
    }
}

/// Write a trace as JSON Lines, one event per line, in canonical order.
/// Timestamps serialize with full round-trip precision.
pub fn write_trace_jsonl<W: IoWrite>(trace: &EventTrace, mut out: W) -> Result<()> {
    for event in trace.events() {
        serde_json::to_writer(&mut out, event).map_err(|e| Error::internal(format!("trace serialization: {e}")))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Structural invariants every finished trace must satisfy. Violations mean
/// an engine bug, so callers surface them as internal errors.
///
/// Checks, in order:
/// 1. interval balance: every Start event of kinds Load/Compute/Main/
///    Transfer/Align has a matching End on the same subject, never nested;
/// 2. resource exclusivity: on one subject, Load intervals never overlap
///    (serial copy engine), Compute intervals never overlap (one
///    accelerator), Transfer intervals never overlap (one sender per node),
///    Main intervals never overlap;
/// 3. causality: every ComputeStart for an expert is preceded by a LoadEnd
///    of that expert on the same worker at or before the start time, and by
///    the end of the matching embedding transfer;
/// 4. residency: replaying loads and the evictions recorded on them, no
///    worker ever holds more than `max_resident` experts.
pub fn audit_trace(trace: &EventTrace, max_resident: usize) -> Result<()> {
    audit_balance(trace)?;
    audit_causality(trace)?;
    audit_residency(trace, max_resident)?;
    Ok(())
}

fn pair_kind(kind: EventKind) -> Option<(EventKind, bool)> {
    // (start kind, is_start) for interval kinds.
    match kind {
        EventKind::LoadStart => Some((EventKind::LoadStart, true)),
        EventKind::LoadEnd => Some((EventKind::LoadStart, false)),
        EventKind::ComputeStart => Some((EventKind::ComputeStart, true)),
        EventKind::ComputeEnd => Some((EventKind::ComputeStart, false)),
        EventKind::MainStart => Some((EventKind::MainStart, true)),
        EventKind::MainEnd => Some((EventKind::MainStart, false)),
        EventKind::TransferStart => Some((EventKind::TransferStart, true)),
        EventKind::TransferEnd => Some((EventKind::TransferStart, false)),
        EventKind::AlignStart => Some((EventKind::AlignStart, true)),
        EventKind::AlignEnd => Some((EventKind::AlignStart, false)),
        _ => None,
    }
}

fn audit_balance(trace: &EventTrace) -> Result<()> {
    // Canonical order is time-sorted, so per resource the i-th start pairs
    // with the i-th end; intervals are disjoint (shared endpoints allowed,
    // which zero-duration slots at t_m = 0 rely on) iff each interval ends
    // before the next begins.
    let mut starts: BTreeMap<((u8, usize), EventKind), Vec<f64>> = BTreeMap::new();
    let mut ends: BTreeMap<((u8, usize), EventKind), Vec<f64>> = BTreeMap::new();
    for e in trace.events() {
        let Some((start_kind, is_start)) = pair_kind(e.kind) else { continue };
        let key = (e.subject.rank(), start_kind);
        let bucket = if is_start { &mut starts } else { &mut ends };
        bucket.entry(key).or_default().push(e.time);
    }
    let keys: std::collections::BTreeSet<_> = starts.keys().chain(ends.keys()).cloned().collect();
    for key in keys {
        let empty: Vec<f64> = Vec::new();
        let s = starts.get(&key).unwrap_or(&empty);
        let e = ends.get(&key).unwrap_or(&empty);
        let (_, kind) = key;
        if s.len() != e.len() {
            return Err(Error::internal(format!(
                "trace audit: {} starts but {} ends for {kind:?} intervals on one resource",
                s.len(),
                e.len()
            )));
        }
        for i in 0..s.len() {
            if e[i] < s[i] {
                return Err(Error::internal(format!(
                    "trace audit: {kind:?} interval ends at {} before starting at {}",
                    e[i], s[i]
                )));
            }
            if i + 1 < s.len() && s[i + 1] < e[i] {
                return Err(Error::internal(format!(
                    "trace audit: overlapping {kind:?} intervals ([{}, {}] then one at {})",
                    s[i], e[i], s[i + 1]
                )));
            }
        }
    }
    Ok(())
}

fn audit_causality(trace: &EventTrace) -> Result<()> {
    // Latest LoadEnd per (worker, expert) and embed TransferEnd per
    // (iteration, layer), folded in canonical order.
    let mut load_done: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut embed_done: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    for e in trace.events() {
        match e.kind {
            EventKind::LoadEnd => {
                if let (Subject::Worker(w), Some(x)) = (e.subject, e.payload.expert) {
                    load_done.insert((w, x), e.time);
                }
            }
            EventKind::TransferEnd if e.payload.note == Some("embed") => {
                if let (Some(n), Some(l)) = (e.payload.iteration, e.payload.layer) {
                    embed_done.insert((n, l), e.time);
                }
            }
            EventKind::ComputeStart => {
                // The shadow replica computes from host memory and never
                // waits on loads or embeds; main-node work uses Main events.
                let w = match e.subject {
                    Subject::Worker(w) => w,
                    Subject::Shadow => continue,
                    Subject::Main => {
                        return Err(Error::internal(
                            "trace audit: worker-style compute on the main node".to_string(),
                        ));
                    }
                };
                if let Some(x) = e.payload.expert {
                    match load_done.get(&(w, x)) {
                        Some(&t) if t <= e.time => {}
                        _ => {
                            return Err(Error::internal(format!(
                                "trace audit: worker {w} computes expert {x} at t={} before it finished loading",
                                e.time
                            )));
                        }
                    }
                }
                if let (Some(n), Some(l)) = (e.payload.iteration, e.payload.layer) {
                    // Keyed embeds only exist in decode traces; prefill
                    // chunk arrivals are checked by their own engine.
                    if let Some(&t) = embed_done.get(&(n, l)) {
                        if t > e.time {
                            return Err(Error::internal(format!(
                                "trace audit: compute for iteration {n} layer {l} starts before its embedding arrives"
                            )));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn audit_residency(trace: &EventTrace, max_resident: usize) -> Result<()> {
    let mut held: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in trace.events() {
        if e.kind != EventKind::LoadStart {
            continue;
        }
        let Subject::Worker(w) = e.subject else {
            return Err(Error::internal("trace audit: load on non-worker subject".to_string()));
        };
        let slots = held.entry(w).or_default();
        if let Some(evicted) = e.payload.evicts {
            match slots.iter().position(|&x| x == evicted) {
                Some(i) => {
                    slots.remove(i);
                }
                None => {
                    return Err(Error::internal(format!(
                        "trace audit: worker {w} evicts expert {evicted} it does not hold"
                    )));
                }
            }
        }
        if let Some(x) = e.payload.expert {
            slots.push(x);
        }
        if slots.len() > max_resident {
            return Err(Error::internal(format!(
                "trace audit: worker {w} holds {} experts at t={}, bound is {max_resident}",
                slots.len(),
                e.time
            )));
        }
    }
    Ok(())
}

/// Render a trace to a string for error reports. Truncated to the first
/// `limit` events to keep internal-error messages readable.
pub(crate) fn dump_trace(trace: &EventTrace, limit: usize) -> String {
    let mut out = String::new();
    for e in trace.events().iter().take(limit) {
        out.push_str(&format!("{:.9e} {:?} {:?} {:?}\n", e.time, e.kind, e.subject, e.payload));
    }
    if trace.len() > limit {
        out.push_str(&format!("... ({} more events)\n", trace.len() - limit));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_time_adds_all_terms() {
        let t = transfer_time(1_000_000, 1.0e8, 2.0e-4, 2.0e-5).unwrap();
        assert!((t - (0.01 + 2.2e-4)).abs() < 1e-15);
        // Infinite bandwidth leaves only the fixed terms.
        let t = transfer_time(1 << 40, f64::INFINITY, 1.0e-3, 0.0).unwrap();
        assert_eq!(t, 1.0e-3);
        assert!(transfer_time(1, 0.0, 0.0, 0.0).is_err());
        assert!(transfer_time(1, -1.0, 0.0, 0.0).is_err());
        assert!(transfer_time(1, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn default_cost_model_is_valid_and_loads_in_milliseconds() {
        let cost = CostModel::default();
        cost.validate().unwrap();
        // One expert of the default model: 2 matrices of 4*64*64 f64.
        let load = cost.load_time(2 * 4 * 64 * 64 * 8);
        assert!(load > 3.0e-3 && load < 4.5e-3, "load {load}");
    }

    #[test]
    fn cost_model_validation_rejects_bad_fields() {
        let mut cost = CostModel::default();
        cost.prefill_alpha = 1.0;
        assert!(cost.validate().is_err());
        let mut cost = CostModel::default();
        cost.lan_bandwidth = 0.0;
        assert!(cost.validate().is_err());
        let mut cost = CostModel::default();
        cost.t_w = -1.0;
        assert!(cost.validate().is_err());
    }

    #[test]
    fn align_payload_counts_kv_and_token_bytes() {
        assert_eq!(align_payload_bytes(8, 64, false, true), 8 * 2 * 64 * 8);
        assert_eq!(align_payload_bytes(8, 64, true, true), 8 + 8 * 2 * 64 * 8);
        assert_eq!(align_payload_bytes(8, 64, true, false), 8);
        assert_eq!(align_payload_bytes(8, 64, false, false), 0);
    }

    #[test]
    fn events_sort_by_time_then_kind_then_subject() {
        let mut trace = EventTrace::new();
        trace.push(1.0, EventKind::TokenEmitted, Subject::Main, Payload::default());
        trace.push(1.0, EventKind::LoadStart, Subject::Worker(1), Payload::default());
        trace.push(1.0, EventKind::LoadStart, Subject::Worker(0), Payload::default());
        trace.push(0.5, EventKind::MainEnd, Subject::Main, Payload::default());
        trace.finish();
        let kinds: Vec<_> = trace.events().iter().map(|e| (e.time, e.kind, e.subject)).collect();
        assert_eq!(
            kinds,
            vec![
                (0.5, EventKind::MainEnd, Subject::Main),
                (1.0, EventKind::LoadStart, Subject::Worker(0)),
                (1.0, EventKind::LoadStart, Subject::Worker(1)),
                (1.0, EventKind::TokenEmitted, Subject::Main),
            ]
        );
    }

    #[test]
    fn jsonl_export_omits_empty_payload_fields() {
        let mut trace = EventTrace::new();
        let mut p = Payload::at(3, 5);
        p.expert = Some(2);
        p.note = Some("prefetch");
        trace.push(0.25, EventKind::LoadStart, Subject::Worker(4), p);
        trace.finish();
        let mut buf = Vec::new();
        write_trace_jsonl(&trace, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"time":0.25,"kind":"LoadStart","subject":"worker:4","iteration":3,"layer":5,"expert":2,"note":"prefetch"}"#
        );
    }

    #[test]
    fn audit_rejects_corrupted_traces() {
        // Overlapping loads on one worker.
        let mut t = EventTrace::new();
        t.push(0.0, EventKind::LoadStart, Subject::Worker(0), Payload { expert: Some(1), ..Payload::default() });
        t.push(1.0, EventKind::LoadStart, Subject::Worker(0), Payload { expert: Some(2), ..Payload::default() });
        t.push(2.0, EventKind::LoadEnd, Subject::Worker(0), Payload { expert: Some(1), ..Payload::default() });
        t.push(3.0, EventKind::LoadEnd, Subject::Worker(0), Payload { expert: Some(2), ..Payload::default() });
        t.finish();
        assert!(audit_balance(&t).is_err());

        // An end without a start.
        let mut t = EventTrace::new();
        t.push(1.0, EventKind::MainEnd, Subject::Main, Payload::default());
        t.finish();
        assert!(audit_balance(&t).is_err());

        // Back-to-back zero-duration slots are legal.
        let mut t = EventTrace::new();
        t.push(1.0, EventKind::MainStart, Subject::Main, Payload::default());
        t.push(1.0, EventKind::MainEnd, Subject::Main, Payload::default());
        t.push(1.0, EventKind::MainStart, Subject::Main, Payload::default());
        t.push(1.0, EventKind::MainEnd, Subject::Main, Payload::default());
        t.finish();
        assert!(audit_balance(&t).is_ok());

        // Compute before the expert's load finished.
        let mut t = EventTrace::new();
        t.push(0.0, EventKind::LoadStart, Subject::Worker(0), Payload { expert: Some(1), ..Payload::default() });
        t.push(2.0, EventKind::LoadEnd, Subject::Worker(0), Payload { expert: Some(1), ..Payload::default() });
        let mut p = Payload::at(1, 0);
        p.expert = Some(1);
        t.push(1.0, EventKind::ComputeStart, Subject::Worker(0), p);
        t.finish();
        assert!(audit_causality(&t).is_err());

        // A third resident expert on one worker.
        let mut t = EventTrace::new();
        for x in 0..3usize {
            t.push(x as f64, EventKind::LoadStart, Subject::Worker(0), Payload { expert: Some(x), ..Payload::default() });
            t.push(x as f64 + 0.5, EventKind::LoadEnd, Subject::Worker(0), Payload { expert: Some(x), ..Payload::default() });
        }
        t.finish();
        assert!(audit_residency(&t, 2).is_err());
        assert!(audit_residency(&t, 3).is_ok());
    }
}
