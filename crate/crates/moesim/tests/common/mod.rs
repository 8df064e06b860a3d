//! Independent reference implementations the integration suite checks the
//! library against. Everything here is deliberately straight-line: plain
//! loops over raw weight slices, no shared helpers from the crate's linalg
//! or model modules, so a bug in those cannot cancel out in both places.

use moesim::model::ToyMoeModel;
use moesim::rng::SplitMix64;
use moesim::sep::RoutingRecord;

/// Greedy decode with nothing but raw weight rows and the documented
/// arithmetic contract: ascending-index reductions, shifted softmax,
/// lowest-index tie-breaks. Returns the generated tokens (the first entry is
/// the token produced by the prompt's last position) including the final
/// unprocessed one — the same convention as the simulator's token list.
pub fn reference_decode(model: &ToyMoeModel, prompt: &[u32], max_new_tokens: usize) -> Vec<u32> {
    let cfg = *model.config();
    let d = cfg.hidden_dim;
    let scale = 1.0 / (d as f64).sqrt();

    // Per-layer KV store, one (key, value) pair per processed token.
    let mut keys: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.num_layers];
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.num_layers];

    // Processes one token id through the whole stack; returns the logits.
    let process = |token: u32, keys: &mut Vec<Vec<Vec<f64>>>, values: &mut Vec<Vec<Vec<f64>>>| -> Vec<f64> {
        let mut x: Vec<f64> = model.embedding().row(token as usize).to_vec();
        for l in 0..cfg.num_layers {
            let lw = model.layer(l);

            // q/k/v projections, one dot product per output lane.
            let q = matvec_rows(&lw.wq, &x, d);
            let k = matvec_rows(&lw.wk, &x, d);
            let v = matvec_rows(&lw.wv, &x, d);
            keys[l].push(k);
            values[l].push(v);

            // Causal attention over every stored position (newest included).
            let mut scores = Vec::with_capacity(keys[l].len());
            for key in &keys[l] {
                let mut s = 0.0;
                for i in 0..d {
                    s += q[i] * key[i];
                }
                scores.push(s * scale);
            }
            let weights = shifted_softmax(&scores);
            let mut ctx = vec![0.0; d];
            for (w, val) in weights.iter().zip(&values[l]) {
                for i in 0..d {
                    ctx[i] += w * val[i];
                }
            }
            let attn = matvec_rows(&lw.wo, &ctx, d);
            for i in 0..d {
                x[i] += attn[i];
            }

            // Top-k gate on the post-attention stream.
            let gate_scores = matvec_rows(&lw.gate, &x, cfg.num_experts);
            let picked = smallest_index_top_k(&gate_scores, cfg.top_k);
            let picked_scores: Vec<f64> = picked.iter().map(|&e| gate_scores[e]).collect();
            let mix = shifted_softmax(&picked_scores);

            // Expert mixture: w2 * relu(w1 * x), accumulated expert-major.
            let mut moe = vec![0.0; d];
            for (w, &e) in mix.iter().zip(&picked) {
                let expert = &lw.experts[e];
                let mut hidden = matvec_rows(&expert.w1, &x, 4 * d);
                for h in hidden.iter_mut() {
                    if *h < 0.0 {
                        *h = 0.0;
                    }
                }
                let out = matvec_rows(&expert.w2, &hidden, d);
                for i in 0..d {
                    moe[i] += w * out[i];
                }
            }
            for i in 0..d {
                x[i] += moe[i];
            }
        }

        // Output head stored hidden-by-vocab: logits[j] = sum_i head[i][j]*x[i].
        let mut logits = vec![0.0; cfg.vocab_size];
        for i in 0..d {
            let row = model.head().row(i);
            for j in 0..cfg.vocab_size {
                logits[j] += x[i] * row[j];
            }
        }
        logits
    };

    let mut logits = Vec::new();
    for &t in prompt {
        logits = process(t, &mut keys, &mut values);
    }
    let mut generated = vec![first_argmax(&logits) as u32];

    for _ in 1..=max_new_tokens {
        let pending = *generated.last().unwrap();
        if pending == 0 {
            break;
        }
        let logits = process(pending, &mut keys, &mut values);
        generated.push(first_argmax(&logits) as u32);
    }
    generated
}

/// `y[r] = sum_c M[r][c] * x[c]`, rows and columns ascending.
fn matvec_rows(m: &moesim::linalg::Matrix, x: &[f64], rows: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = m.row(r);
        let mut acc = 0.0;
        for c in 0..x.len() {
            acc += row[c] * x[c];
        }
        y.push(acc);
    }
    y
}

fn shifted_softmax(xs: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let mut sum = 0.0;
    for &e in &exps {
        sum += e;
    }
    exps.iter().map(|&e| e / sum).collect()
}

fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// k passes of "scan for the strict maximum among unpicked indices", then
/// ascending order — ties land on the lowest index.
fn smallest_index_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            if best.map_or(true, |b| s > scores[b]) {
                best = Some(i);
            }
        }
        picked.push(best.unwrap());
    }
    picked.sort_unstable();
    picked
}

/// What the brute-force recall count reports for one record set.
pub struct RecallCounts {
    pub per_token: Vec<f64>,
    pub overall: f64,
    pub correct_per_token: Vec<u64>,
    pub active_per_token: Vec<u64>,
}

/// Triple-loop recall oracle: walk prompts, then token indices, then layers,
/// counting set intersections by scanning the record list each time. Active
/// prompts per token index are counted the same brute-force way.
pub fn recall_oracle(records: &[RoutingRecord], top_k: usize, num_layers: usize) -> RecallCounts {
    let max_q = records.iter().map(|r| r.prompt_id).max().unwrap_or(0);
    let max_n = records.iter().map(|r| r.token_index).max().unwrap_or(0);
    let mut correct = vec![0u64; max_n];
    let mut active = vec![0u64; max_n];
    for q in 0..=max_q {
        for n in 1..=max_n {
            let mut prompt_ran_this_token = false;
            for l in 0..num_layers {
                for r in records {
                    if r.prompt_id != q || r.token_index != n || r.layer != l {
                        continue;
                    }
                    prompt_ran_this_token = true;
                    if r.prediction_available {
                        let mut hits = 0u64;
                        for t in &r.true_experts {
                            if r.predicted_experts.iter().any(|p| p == t) {
                                hits += 1;
                            }
                        }
                        correct[n - 1] += hits;
                    }
                }
            }
            if prompt_ran_this_token {
                active[n - 1] += 1;
            }
        }
    }
    let weight = (top_k * num_layers) as u64;
    let per_token: Vec<f64> = correct
        .iter()
        .zip(&active)
        .map(|(&c, &a)| if a == 0 { 0.0 } else { c as f64 / (weight * a) as f64 })
        .collect();
    let total_c: u64 = correct.iter().sum();
    let total_a: u64 = active.iter().sum();
    RecallCounts {
        per_token,
        overall: total_c as f64 / (weight * total_a) as f64,
        correct_per_token: correct,
        active_per_token: active,
    }
}

/// Completion time a single-worker, single-expert, single-layer prefill
/// pipeline should reach: the main node computes the batched layer, its
/// sender streams the chunks back to back, and the worker folds each chunk
/// in as soon as both the chunk and its previous compute are done.
///
/// `chunk_sizes` are the planned chunk lengths in send order.
pub struct PipelineCost {
    pub t_m: f64,
    pub t_w: f64,
    pub per_token_transfer_s: f64,
    pub alpha: f64,
}

pub fn prefill_recurrence_oracle(prompt_len: usize, chunk_sizes: &[usize], cost: &PipelineCost) -> f64 {
    let batched = |t: f64, s: usize| t * (cost.alpha + (1.0 - cost.alpha) * s as f64);
    let main_end = batched(cost.t_m, prompt_len);
    let mut sender_free = main_end;
    let mut worker_free = main_end; // expert staging is instant but gated on the gate
    for &s in chunk_sizes {
        let arrive = sender_free + cost.per_token_transfer_s * s as f64;
        sender_free = arrive;
        let start = if arrive > worker_free { arrive } else { worker_free };
        worker_free = start + batched(cost.t_w, s);
    }
    worker_free
}

/// Seeded prompt of `len` tokens, none of them the end-of-sequence id.
pub fn random_prompt(seed: u64, len: usize, vocab_size: usize) -> Vec<u32> {
    let mut rng = SplitMix64::new(seed);
    (0..len)
        .map(|_| 1 + (rng.next_u64() % (vocab_size as u64 - 1)) as u32)
        .collect()
}
