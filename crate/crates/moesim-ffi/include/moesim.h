#ifndef MOESIM_H
#define MOESIM_H

/* Generated by cbindgen from the moesim-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum MoesimStatus {
  /**
   * The call succeeded and all out-parameters are valid.
   */
  MOESIM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MOESIM_STATUS_NULL_ARGUMENT = 1,
  /**
   * The arguments were rejected; `moesim_last_error` explains why.
   */
  MOESIM_STATUS_INVALID = 2,
  /**
   * An output buffer was too small for the result.
   */
  MOESIM_STATUS_BUFFER_TOO_SMALL = 3,
  /**
   * The library panicked internally; treat involved handles as poisoned.
   */
  MOESIM_STATUS_PANIC = 4,
} MoesimStatus;

/**
 * How expert staging is driven during the simulated decode.
 */
typedef enum MoesimStagingKind {
  /**
   * A shadow model streams per-layer predictions ahead of the main pass.
   */
  MOESIM_STAGING_KIND_SHADOW = 0,
  /**
   * Uniform random predictions (pure-chance baseline).
   */
  MOESIM_STAGING_KIND_RANDOM = 1,
  /**
   * No predictions; experts load on demand when the gate resolves.
   */
  MOESIM_STAGING_KIND_ON_DEMAND = 2,
} MoesimStagingKind;

/**
 * Opaque handle to an initialized toy MoE model.
 */
typedef struct MoesimModel MoesimModel;

/**
 * Model shape and weight-initialization seed.
 */
typedef struct MoesimModelDesc {
  uint32_t num_layers;
  uint32_t num_experts;
  /**
   * Experts activated per token per layer.
   */
  uint32_t top_k;
  uint32_t hidden_dim;
  uint32_t vocab_size;
  uint64_t seed;
} MoesimModelDesc;

/**
 * Timing constants for the simulation, in seconds and bytes per second.
 */
typedef struct MoesimCostDesc {
  /**
   * Main-node compute per token per layer.
   */
  double t_m;
  /**
   * Worker expert compute per token per expert.
   */
  double t_w;
  /**
   * Disk/flash-to-RAM bandwidth for expert loads.
   */
  double cpu_gpu_bandwidth;
  double lan_bandwidth;
  double lan_latency;
  /**
   * Fixed per-message serialization cost.
   */
  double serialize_overhead;
  /**
   * Shadow compute per layer per iteration.
   */
  double shadow_layer_time;
  /**
   * Fractional per-batch overhead of batched matrix work.
   */
  double prefill_alpha;
} MoesimCostDesc;

/**
 * Worker-pool shape for the staged-decode simulation.
 */
typedef struct MoesimClusterDesc {
  uint32_t num_workers;
  /**
   * Workers per group; must equal the model's `top_k` for decoding.
   */
  uint32_t group_size;
  /**
   * Per-worker RAM budget, counted in whole expert weight sets.
   */
  uint32_t worker_memory_experts;
} MoesimClusterDesc;

/**
 * Staging strategy descriptor. `shadow_bits` of 0 runs the shadow at full
 * precision; any other value emulates that uniform quantization width.
 * `token_period` / `kv_period` of 0 disable that alignment stream; a period
 * `p >= 1` re-syncs the shadow from the main model every `p` iterations.
 * `seed` only drives `MOESIM_STAGING_KIND_RANDOM`.
 */
typedef struct MoesimStagingDesc {
  enum MoesimStagingKind kind;
  uint8_t shadow_bits;
  uint64_t token_period;
  uint64_t kv_period;
  uint64_t seed;
} MoesimStagingDesc;

/**
 * Aggregates of one simulated decode.
 */
typedef struct MoesimDecodeSummary {
  /**
   * Continuation tokens produced, including the final pending one.
   */
  uint64_t tokens_generated;
  /**
   * Decode iterations executed (tokens actually emitted on the wire).
   */
  uint64_t iterations;
  /**
   * Mean decode rate between the first and last emission; 0 when fewer
   * than two tokens were emitted.
   */
  double tokens_per_s;
  /**
   * Total time the main node stalled waiting for expert loads.
   */
  double stall_s;
  /**
   * Expert loads redone because a prediction missed.
   */
  uint64_t mispredictions;
  /**
   * Virtual time of the last token emission.
   */
  double completion_s;
} MoesimDecodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static version string of this library. Do not free.
 */
const char *moesim_version(void);

/**
 * Copy the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap` bytes. Returns the full
 * message length in bytes (without the NUL); 0 means no recorded error.
 * `buf` may be null when `cap` is 0, to query the length first.
 */
size_t moesim_last_error(char *buf, size_t cap);

/**
 * Initialize a model from `desc` and write the new handle to `out`.
 */
enum MoesimStatus moesim_model_create(const struct MoesimModelDesc *desc, struct MoesimModel **out);

/**
 * Initialize the default desk-scale model (8 layers, 8 experts, top-2,
 * 64-dim, 256-token vocabulary) with the given weight seed.
 */
enum MoesimStatus moesim_model_toy_default(uint64_t seed, struct MoesimModel **out);

/**
 * Create a new handle holding a uniformly quantized copy of `model`
 * (`bits` in 2..=16). The source handle is untouched.
 */
enum MoesimStatus moesim_model_quantized(const struct MoesimModel *model,
                                         uint8_t bits,
                                         struct MoesimModel **out);

/**
 * Write the shape and seed of `model` to `out`.
 */
enum MoesimStatus moesim_model_desc(const struct MoesimModel *model, struct MoesimModelDesc *out);

/**
 * Release a model handle. Null is a no-op.
 */
void moesim_model_free(struct MoesimModel *model);

/**
 * Fill `out` with the library's default timing constants.
 */
enum MoesimStatus moesim_cost_default(struct MoesimCostDesc *out);

/**
 * Greedy-decode up to `max_new_tokens` continuation tokens (stopping once
 * the end-of-sequence token 0 appears) and write them to `out_tokens`
 * (`out_cap >= max_new_tokens + 1` always suffices; the written count goes
 * to `out_count`). These are the reference numerics that every staging
 * strategy of the simulator reproduces token for token.
 */
enum MoesimStatus moesim_decode(const struct MoesimModel *model,
                                const uint32_t *prompt,
                                size_t prompt_len,
                                size_t max_new_tokens,
                                uint32_t *out_tokens,
                                size_t out_cap,
                                size_t *out_count);

/**
 * Simulate one staged decode of `prompt` on a worker pool and write the
 * timing aggregates to `out_summary`. The generated tokens (identical to
 * `moesim_decode`'s) are also copied to `out_tokens` unless it is null.
 * `cost` may be null to use the library defaults.
 */
enum MoesimStatus moesim_simulate_decode(const struct MoesimModel *model,
                                         const struct MoesimClusterDesc *cluster,
                                         const struct MoesimCostDesc *cost,
                                         const struct MoesimStagingDesc *staging,
                                         const uint32_t *prompt,
                                         size_t prompt_len,
                                         size_t max_new_tokens,
                                         struct MoesimDecodeSummary *out_summary,
                                         uint32_t *out_tokens,
                                         size_t out_cap,
                                         size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOESIM_H */
