//! The distributed execution plan: how workers are grouped, which group
//! serves which layer, where predicted experts are loaded, what happens on a
//! misprediction, and how prefill work is chunked across workers.
//!
//! Decoding uses grouped round-robin scheduling: the workers are split into
//! `N_G = num_workers / group_size` groups, layer `l` is served by group
//! `l mod N_G`, and the `k` experts predicted for a layer are loaded
//! one-to-one onto that group's workers. While one group computes, the
//! other groups load ahead, which is what hides expert-loading latency —
//! up to the budget computed by [`max_load_budget`].
//!
//! Everything here is pure planning; the simulator attaches time to it.

use crate::error::{Error, Result};
use crate::model::{ExpertId, RoutingDecision};

/// Worker-fleet shape plus the per-worker memory constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    pub num_workers: usize,
    /// Workers per group; must equal the model's top_k so one group hosts
    /// exactly one layer's active experts.
    pub group_size: usize,
    pub worker_memory_bytes: u64,
    pub expert_param_bytes: u64,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_workers == 0 || self.group_size == 0 {
            return Err(Error::config("num_workers and group_size must be >= 1"));
        }
        if self.num_workers % self.group_size != 0 {
            return Err(Error::config(format!(
                "num_workers {} not divisible by group_size {}",
                self.num_workers, self.group_size
            )));
        }
        if self.num_groups() < 2 {
            return Err(Error::config(
                "need at least 2 groups so loading can overlap computing",
            ));
        }
        if self.expert_param_bytes == 0 {
            return Err(Error::config("expert_param_bytes must be positive"));
        }
        // One expert computing/evicting plus one loading.
        if self.worker_memory_bytes < 2 * self.expert_param_bytes {
            return Err(Error::config(format!(
                "worker memory {} cannot hold two experts of {} bytes",
                self.worker_memory_bytes, self.expert_param_bytes
            )));
        }
        Ok(())
    }

    /// Cross-check against the model actually being served.
    pub fn validate_for_top_k(&self, top_k: usize) -> Result<()> {
        self.validate()?;
        if self.group_size != top_k {
            return Err(Error::config(format!(
                "group_size {} must equal the model's top_k {}",
                self.group_size, top_k
            )));
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.num_workers / self.group_size
    }
}

/// Contiguous grouping: group g owns workers [g*G, (g+1)*G).
pub fn plan_groups(config: &ClusterConfig) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    let g = config.group_size;
    Ok((0..config.num_groups())
        .map(|i| (i * g..(i + 1) * g).collect())
        .collect())
}

/// Round-robin layer-to-group mapping.
pub fn assign_layer(layer: usize, num_groups: usize) -> usize {
    layer % num_groups
}

/// Deterministic one-to-one placement: sorted expert indices paired with
/// sorted worker ids.
pub fn assign_experts(predicted: &[usize], group_workers: &[usize]) -> Result<Vec<(usize, usize)>> {
    if predicted.len() != group_workers.len() {
        return Err(Error::planning(format!(
            "{} experts for {} workers",
            predicted.len(),
            group_workers.len()
        )));
    }
    let mut experts = predicted.to_vec();
    experts.sort_unstable();
    experts.dedup();
    if experts.len() != predicted.len() {
        return Err(Error::planning("duplicate expert in prediction"));
    }
    let mut workers = group_workers.to_vec();
    workers.sort_unstable();
    Ok(experts.into_iter().zip(workers).collect())
}

/// The longest an expert load may take without ever stalling compute, for a
/// pipeline of `num_groups` groups with per-layer main-node time `t_m` and
/// worker compute time `t_w`: while one layer's load is in flight, the other
/// `num_groups - 1` groups' main and worker slots all overlap it, plus the
/// loading layer's own main slot.
pub fn max_load_budget(t_m: f64, t_w: f64, num_groups: usize) -> Result<f64> {
    if t_m < 0.0 || t_w < 0.0 {
        return Err(Error::input("negative compute times"));
    }
    if num_groups == 0 {
        return Err(Error::input("num_groups must be >= 1"));
    }
    let n = num_groups as f64;
    Ok(n * t_m + (n - 1.0) * t_w)
}

/// Pick reloads after the gate disagreed with the prefetch: every truly
/// needed expert that is not already resident gets loaded onto a worker
/// whose resident expert turned out to be wrong (evicting it), keeping the
/// one-to-one placement without moving correct experts. Workers that were
/// empty (late or missing prediction) count as wrong. Returns
/// (expert, worker) pairs sorted by worker id; empty when the prediction
/// was fully correct.
pub fn handle_misprediction(
    true_experts: &[usize],
    resident: &[(usize, usize)],
    group_workers: &[usize],
) -> Vec<(usize, usize)> {
    let mut missing: Vec<usize> = true_experts
        .iter()
        .copied()
        .filter(|e| !resident.iter().any(|&(re, _)| re == *e))
        .collect();
    missing.sort_unstable();
    let mut free: Vec<usize> = group_workers
        .iter()
        .copied()
        .filter(|w| {
            !resident
                .iter()
                .any(|&(re, rw)| rw == *w && true_experts.contains(&re))
        })
        .collect();
    free.sort_unstable();
    missing.into_iter().zip(free).collect()
}

/// Residency tracker for one worker's GPU memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerState {
    pub worker_id: usize,
    pub group_id: usize,
    resident: Vec<ExpertId>,
    expert_param_bytes: u64,
    memory_bytes: u64,
}

impl WorkerState {
    pub fn new(worker_id: usize, group_id: usize, config: &ClusterConfig) -> Self {
        WorkerState {
            worker_id,
            group_id,
            resident: Vec::new(),
            expert_param_bytes: config.expert_param_bytes,
            memory_bytes: config.worker_memory_bytes,
        }
    }

    pub fn resident(&self) -> &[ExpertId] {
        &self.resident
    }

    pub fn bytes_used(&self) -> u64 {
        self.resident.len() as u64 * self.expert_param_bytes
    }

    pub fn holds(&self, id: ExpertId) -> bool {
        self.resident.contains(&id)
    }

    pub fn load(&mut self, id: ExpertId) -> Result<()> {
        if self.holds(id) {
            return Ok(());
        }
        if self.bytes_used() + self.expert_param_bytes > self.memory_bytes {
            return Err(Error::state(format!(
                "worker {} out of memory: {} resident experts of {} bytes within {}",
                self.worker_id,
                self.resident.len(),
                self.expert_param_bytes,
                self.memory_bytes
            )));
        }
        self.resident.push(id);
        Ok(())
    }

    pub fn evict(&mut self, id: ExpertId) {
        self.resident.retain(|&r| r != id);
    }
}

/// One contiguous run of same-expert prompt tokens, to be shipped to and
/// computed on that expert's dedicated worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub layer: usize,
    pub expert: usize,
    pub worker: usize,
    /// Prompt positions (0-based) in original order.
    pub token_positions: Vec<usize>,
}

/// Worker-side prefill schedule: every (layer, activated expert) token group
/// split into order-preserving chunks of at most `mini_batch_size` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefillPlan {
    pub mini_batch_size: usize,
    /// Ordered by (layer, expert, chunk index).
    pub batches: Vec<MiniBatch>,
}

/// Worker hosting an expert during prefill: expert e of every layer lives on
/// worker e, wrapping round-robin when there are more experts than workers.
pub fn prefill_worker_for_expert(expert: usize, num_workers: usize) -> usize {
    expert % num_workers
}

/// Build the prefill schedule from the per-token routing the model produced.
/// `routing[t][l]` is prompt token t's decision at layer l. Each token lands
/// in the batch of every expert it activates, once per (layer, expert).
pub fn plan_prefill(
    routing: &[Vec<RoutingDecision>],
    mini_batch_size: usize,
    num_experts: usize,
    cluster: &ClusterConfig,
) -> Result<PrefillPlan> {
    if mini_batch_size == 0 {
        return Err(Error::planning("mini_batch_size must be >= 1"));
    }
    if routing.is_empty() {
        return Err(Error::planning("no routed tokens to plan"));
    }
    let num_layers = routing[0].len();
    let mut batches = Vec::new();
    for layer in 0..num_layers {
        for expert in 0..num_experts {
            let tokens: Vec<usize> = routing
                .iter()
                .enumerate()
                .filter(|(_, per_layer)| per_layer[layer].experts.contains(&expert))
                .map(|(t, _)| t)
                .collect();
            let worker = prefill_worker_for_expert(expert, cluster.num_workers);
            for chunk in tokens.chunks(mini_batch_size) {
                batches.push(MiniBatch {
                    layer,
                    expert,
                    worker,
                    token_positions: chunk.to_vec(),
                });
            }
        }
    }
    Ok(PrefillPlan {
        mini_batch_size,
        batches,
    })
}
