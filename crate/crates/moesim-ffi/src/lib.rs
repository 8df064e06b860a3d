//! C ABI over the simulator core: opaque handles, integer status codes, and
//! a generated header (`include/moesim.h`, kept current by the build script).
//!
//! Conventions: every fallible call returns [`MoesimStatus`] and leaves its
//! out-parameters untouched unless it returns `MOESIM_STATUS_OK`; details for
//! the calling thread's most recent failure come from [`moesim_last_error`];
//! every handle is released exactly once with its `_free` function.

use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use moesim::cluster::ClusterConfig;
use moesim::metrics::decode_throughput;
use moesim::model::{forward_token, prefill, ModelConfig, ToyMoeModel};
use moesim::sep::AlignmentPolicy;
use moesim::sim::{run_decode_sim, CostModel, PrefetchMode};
use moesim::EOS_TOKEN;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoesimStatus {
    /// The call succeeded and all out-parameters are valid.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// The arguments were rejected; `moesim_last_error` explains why.
    Invalid = 2,
    /// An output buffer was too small for the result.
    BufferTooSmall = 3,
    /// The library panicked internally; treat involved handles as poisoned.
    Panic = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: MoesimStatus, msg: impl AsRef<str>) -> MoesimStatus {
    let clean: String = msg
        .as_ref()
        .chars()
        .map(|c| if c == '\0' { ' ' } else { c })
        .collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
    status
}

/// Run an FFI body with panics converted to `MOESim` status codes so they
/// never unwind across the C boundary.
fn guarded<F: FnOnce() -> MoesimStatus>(f: F) -> MoesimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MoesimStatus::Panic, "internal panic"),
    }
}

/// Opaque handle to an initialized toy MoE model.
pub struct MoesimModel {
    inner: ToyMoeModel,
}

/// Model shape and weight-initialization seed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoesimModelDesc {
    pub num_layers: u32,
    pub num_experts: u32,
    /// Experts activated per token per layer.
    pub top_k: u32,
    pub hidden_dim: u32,
    pub vocab_size: u32,
    pub seed: u64,
}

/// Worker-pool shape for the staged-decode simulation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoesimClusterDesc {
    pub num_workers: u32,
    /// Workers per group; must equal the model's `top_k` for decoding.
    pub group_size: u32,
    /// Per-worker RAM budget, counted in whole expert weight sets.
    pub worker_memory_experts: u32,
}

/// How expert staging is driven during the simulated decode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoesimStagingKind {
    /// A shadow model streams per-layer predictions ahead of the main pass.
    Shadow = 0,
    /// Uniform random predictions (pure-chance baseline).
    Random = 1,
    /// No predictions; experts load on demand when the gate resolves.
    OnDemand = 2,
}

/// Staging strategy descriptor. `shadow_bits` of 0 runs the shadow at full
/// precision; any other value emulates that uniform quantization width.
/// `token_period` / `kv_period` of 0 disable that alignment stream; a period
/// `p >= 1` re-syncs the shadow from the main model every `p` iterations.
/// `seed` only drives `MOESIM_STAGING_KIND_RANDOM`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoesimStagingDesc {
    pub kind: MoesimStagingKind,
    pub shadow_bits: u8,
    pub token_period: u64,
    pub kv_period: u64,
    pub seed: u64,
}

/// Timing constants for the simulation, in seconds and bytes per second.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoesimCostDesc {
    /// Main-node compute per token per layer.
    pub t_m: f64,
    /// Worker expert compute per token per expert.
    pub t_w: f64,
    /// Disk/flash-to-RAM bandwidth for expert loads.
    pub cpu_gpu_bandwidth: f64,
    pub lan_bandwidth: f64,
    pub lan_latency: f64,
    /// Fixed per-message serialization cost.
    pub serialize_overhead: f64,
    /// Shadow compute per layer per iteration.
    pub shadow_layer_time: f64,
    /// Fractional per-batch overhead of batched matrix work.
    pub prefill_alpha: f64,
}

/// Aggregates of one simulated decode.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoesimDecodeSummary {
    /// Continuation tokens produced, including the final pending one.
    pub tokens_generated: u64,
    /// Decode iterations executed (tokens actually emitted on the wire).
    pub iterations: u64,
    /// Mean decode rate between the first and last emission; 0 when fewer
    /// than two tokens were emitted.
    pub tokens_per_s: f64,
    /// Total time the main node stalled waiting for expert loads.
    pub stall_s: f64,
    /// Expert loads redone because a prediction missed.
    pub mispredictions: u64,
    /// Virtual time of the last token emission.
    pub completion_s: f64,
}

/// Static version string of this library. Do not free.
#[no_mangle]
pub extern "C" fn moesim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the full
/// message length in bytes (without the NUL); 0 means no recorded error.
/// `buf` may be null when `cap` is 0, to query the length first.
#[no_mangle]
pub extern "C" fn moesim_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Initialize a model from `desc` and write the new handle to `out`.
#[no_mangle]
pub extern "C" fn moesim_model_create(
    desc: *const MoesimModelDesc,
    out: *mut *mut MoesimModel,
) -> MoesimStatus {
    guarded(|| {
        if desc.is_null() || out.is_null() {
            return fail(MoesimStatus::NullArgument, "desc and out must be non-null");
        }
        let d = unsafe { *desc };
        let config = ModelConfig {
            num_layers: d.num_layers as usize,
            num_experts: d.num_experts as usize,
            top_k: d.top_k as usize,
            hidden_dim: d.hidden_dim as usize,
            vocab_size: d.vocab_size as usize,
            seed: d.seed,
        };
        match ToyMoeModel::init(config) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(MoesimModel { inner })) };
                MoesimStatus::Ok
            }
            Err(e) => fail(MoesimStatus::Invalid, e.to_string()),
        }
    })
}

/// Initialize the default desk-scale model (8 layers, 8 experts, top-2,
/// 64-dim, 256-token vocabulary) with the given weight seed.
#[no_mangle]
pub extern "C" fn moesim_model_toy_default(
    seed: u64,
    out: *mut *mut MoesimModel,
) -> MoesimStatus {
    let desc = MoesimModelDesc {
        num_layers: 8,
        num_experts: 8,
        top_k: 2,
        hidden_dim: 64,
        vocab_size: 256,
        seed,
    };
    moesim_model_create(&desc, out)
}

/// Create a new handle holding a uniformly quantized copy of `model`
/// (`bits` in 2..=16). The source handle is untouched.
#[no_mangle]
pub extern "C" fn moesim_model_quantized(
    model: *const MoesimModel,
    bits: u8,
    out: *mut *mut MoesimModel,
) -> MoesimStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(MoesimStatus::NullArgument, "model and out must be non-null");
        }
        let m = unsafe { &*model };
        match m.inner.quantize(bits) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(MoesimModel { inner })) };
                MoesimStatus::Ok
            }
            Err(e) => fail(MoesimStatus::Invalid, e.to_string()),
        }
    })
}

/// Write the shape and seed of `model` to `out`.
#[no_mangle]
pub extern "C" fn moesim_model_desc(
    model: *const MoesimModel,
    out: *mut MoesimModelDesc,
) -> MoesimStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(MoesimStatus::NullArgument, "model and out must be non-null");
        }
        let cfg = *unsafe { &*model }.inner.config();
        unsafe {
            *out = MoesimModelDesc {
                num_layers: cfg.num_layers as u32,
                num_experts: cfg.num_experts as u32,
                top_k: cfg.top_k as u32,
                hidden_dim: cfg.hidden_dim as u32,
                vocab_size: cfg.vocab_size as u32,
                seed: cfg.seed,
            };
        }
        MoesimStatus::Ok
    })
}

/// Release a model handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn moesim_model_free(model: *mut MoesimModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Fill `out` with the library's default timing constants.
#[no_mangle]
pub extern "C" fn moesim_cost_default(out: *mut MoesimCostDesc) -> MoesimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MoesimStatus::NullArgument, "out must be non-null");
        }
        let c = CostModel::default();
        unsafe {
            *out = MoesimCostDesc {
                t_m: c.t_m,
                t_w: c.t_w,
                cpu_gpu_bandwidth: c.cpu_gpu_bandwidth,
                lan_bandwidth: c.lan_bandwidth,
                lan_latency: c.lan_latency,
                serialize_overhead: c.serialize_overhead,
                shadow_layer_time: c.shadow_layer_time,
                prefill_alpha: c.prefill_alpha,
            };
        }
        MoesimStatus::Ok
    })
}

fn cost_from(desc: *const MoesimCostDesc) -> CostModel {
    if desc.is_null() {
        return CostModel::default();
    }
    let d = unsafe { *desc };
    CostModel {
        t_m: d.t_m,
        t_w: d.t_w,
        cpu_gpu_bandwidth: d.cpu_gpu_bandwidth,
        lan_bandwidth: d.lan_bandwidth,
        lan_latency: d.lan_latency,
        serialize_overhead: d.serialize_overhead,
        shadow_layer_time: d.shadow_layer_time,
        prefill_alpha: d.prefill_alpha,
    }
}

fn copy_tokens(
    tokens: &[u32],
    out_tokens: *mut u32,
    out_cap: usize,
    out_count: *mut usize,
) -> MoesimStatus {
    if out_count.is_null() {
        return fail(
            MoesimStatus::NullArgument,
            "out_count must be non-null when out_tokens is used",
        );
    }
    if tokens.len() > out_cap {
        return fail(
            MoesimStatus::BufferTooSmall,
            format!("{} tokens generated but out_cap is {out_cap}", tokens.len()),
        );
    }
    unsafe {
        ptr::copy_nonoverlapping(tokens.as_ptr(), out_tokens, tokens.len());
        *out_count = tokens.len();
    }
    MoesimStatus::Ok
}

/// Greedy-decode up to `max_new_tokens` continuation tokens (stopping once
/// the end-of-sequence token 0 appears) and write them to `out_tokens`
/// (`out_cap >= max_new_tokens + 1` always suffices; the written count goes
/// to `out_count`). These are the reference numerics that every staging
/// strategy of the simulator reproduces token for token.
#[no_mangle]
pub extern "C" fn moesim_decode(
    model: *const MoesimModel,
    prompt: *const u32,
    prompt_len: usize,
    max_new_tokens: usize,
    out_tokens: *mut u32,
    out_cap: usize,
    out_count: *mut usize,
) -> MoesimStatus {
    guarded(|| {
        if model.is_null() || prompt.is_null() || out_tokens.is_null() {
            return fail(
                MoesimStatus::NullArgument,
                "model, prompt and out_tokens must be non-null",
            );
        }
        if max_new_tokens == 0 {
            return fail(MoesimStatus::Invalid, "max_new_tokens must be >= 1");
        }
        let m = unsafe { &*model };
        let prompt = unsafe { slice::from_raw_parts(prompt, prompt_len) };
        let mut state = match prefill(&m.inner, prompt) {
            Ok((state, _)) => state,
            Err(e) => return fail(MoesimStatus::Invalid, e.to_string()),
        };
        for _ in 1..=max_new_tokens {
            if state.pending_token() == EOS_TOKEN {
                break;
            }
            if let Err(e) = forward_token(&m.inner, &mut state, None) {
                return fail(MoesimStatus::Invalid, e.to_string());
            }
        }
        let tokens = &state.token_ids()[prompt.len()..];
        copy_tokens(tokens, out_tokens, out_cap, out_count)
    })
}

/// Simulate one staged decode of `prompt` on a worker pool and write the
/// timing aggregates to `out_summary`. The generated tokens (identical to
/// `moesim_decode`'s) are also copied to `out_tokens` unless it is null.
/// `cost` may be null to use the library defaults.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn moesim_simulate_decode(
    model: *const MoesimModel,
    cluster: *const MoesimClusterDesc,
    cost: *const MoesimCostDesc,
    staging: *const MoesimStagingDesc,
    prompt: *const u32,
    prompt_len: usize,
    max_new_tokens: usize,
    out_summary: *mut MoesimDecodeSummary,
    out_tokens: *mut u32,
    out_cap: usize,
    out_count: *mut usize,
) -> MoesimStatus {
    guarded(|| {
        if model.is_null()
            || cluster.is_null()
            || staging.is_null()
            || prompt.is_null()
            || out_summary.is_null()
        {
            return fail(
                MoesimStatus::NullArgument,
                "model, cluster, staging, prompt and out_summary must be non-null",
            );
        }
        let m = unsafe { &*model };
        let c = unsafe { *cluster };
        let s = unsafe { *staging };
        let prompt = unsafe { slice::from_raw_parts(prompt, prompt_len) };

        let cluster = ClusterConfig {
            num_workers: c.num_workers as usize,
            group_size: c.group_size as usize,
            worker_memory_bytes: c.worker_memory_experts as u64 * m.inner.expert_param_bytes(),
            expert_param_bytes: m.inner.expert_param_bytes(),
        };
        let nonzero = |p: u64| if p == 0 { None } else { Some(p) };
        let mode = match s.kind {
            MoesimStagingKind::Shadow => PrefetchMode::Shadow {
                bits: if s.shadow_bits == 0 { None } else { Some(s.shadow_bits) },
                // Zero periods map to None, so this cannot reject.
                policy: AlignmentPolicy::new(nonzero(s.token_period), nonzero(s.kv_period))
                    .unwrap(),
            },
            MoesimStagingKind::Random => PrefetchMode::Random { seed: s.seed },
            MoesimStagingKind::OnDemand => PrefetchMode::None,
        };
        let result = match run_decode_sim(
            &m.inner,
            prompt,
            max_new_tokens,
            &cluster,
            &cost_from(cost),
            &mode,
            0,
            0.0,
        ) {
            Ok(r) => r,
            Err(e) => return fail(MoesimStatus::Invalid, e.to_string()),
        };

        let emitted = result.tokens.len() - 1;
        let tokens_per_s = if emitted == 0 {
            0.0
        } else {
            match decode_throughput(&result.trace, emitted) {
                Ok(t) => t.tokens_per_s,
                Err(e) => return fail(MoesimStatus::Invalid, e.to_string()),
            }
        };
        let completion_s = result
            .trace
            .token_times()
            .last()
            .copied()
            .unwrap_or_else(|| result.trace.last_time());
        unsafe {
            *out_summary = MoesimDecodeSummary {
                tokens_generated: result.tokens.len() as u64,
                iterations: result.iterations as u64,
                tokens_per_s,
                stall_s: result.trace.total_stall(),
                mispredictions: result.trace.mispredict_count(),
                completion_s,
            };
        }
        if out_tokens.is_null() {
            MoesimStatus::Ok
        } else {
            copy_tokens(&result.tokens, out_tokens, out_cap, out_count)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    fn toy(seed: u64) -> *mut MoesimModel {
        let mut out = ptr::null_mut();
        assert_eq!(moesim_model_toy_default(seed, &mut out), MoesimStatus::Ok);
        assert!(!out.is_null());
        out
    }

    fn last_error_string() -> String {
        let needed = moesim_last_error(ptr::null_mut(), 0);
        let mut buf = vec![0i8 as c_char; needed + 1];
        moesim_last_error(buf.as_mut_ptr(), buf.len());
        unsafe { CStr::from_ptr(buf.as_ptr()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn version_is_static_nul_terminated() {
        let v = unsafe { CStr::from_ptr(moesim_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_rejected_with_message() {
        let mut out = ptr::null_mut();
        assert_eq!(
            moesim_model_create(ptr::null(), &mut out),
            MoesimStatus::NullArgument
        );
        assert!(last_error_string().contains("non-null"));
        assert!(out.is_null());
    }

    #[test]
    fn invalid_shapes_are_rejected_with_message() {
        let desc = MoesimModelDesc {
            num_layers: 0,
            num_experts: 8,
            top_k: 2,
            hidden_dim: 64,
            vocab_size: 256,
            seed: 1,
        };
        let mut out = ptr::null_mut();
        assert_eq!(moesim_model_create(&desc, &mut out), MoesimStatus::Invalid);
        assert!(!last_error_string().is_empty());
    }

    #[test]
    fn desc_roundtrips_the_toy_default() {
        let model = toy(7);
        let mut desc = MoesimModelDesc {
            num_layers: 0,
            num_experts: 0,
            top_k: 0,
            hidden_dim: 0,
            vocab_size: 0,
            seed: 0,
        };
        assert_eq!(moesim_model_desc(model, &mut desc), MoesimStatus::Ok);
        assert_eq!(
            (desc.num_layers, desc.num_experts, desc.top_k, desc.hidden_dim, desc.vocab_size, desc.seed),
            (8, 8, 2, 64, 256, 7)
        );
        moesim_model_free(model);
    }

    #[test]
    fn quantized_requires_supported_width() {
        let model = toy(3);
        let mut q = ptr::null_mut();
        assert_eq!(moesim_model_quantized(model, 1, &mut q), MoesimStatus::Invalid);
        assert_eq!(moesim_model_quantized(model, 8, &mut q), MoesimStatus::Ok);
        moesim_model_free(q);
        moesim_model_free(model);
    }

    #[test]
    fn decode_matches_the_library_numerics() {
        let model = toy(11);
        let prompt: Vec<u32> = (1..=16).collect();
        let mut tokens = vec![0u32; 17];
        let mut count = 0usize;
        assert_eq!(
            moesim_decode(model, prompt.as_ptr(), prompt.len(), 16, tokens.as_mut_ptr(), tokens.len(), &mut count),
            MoesimStatus::Ok
        );
        assert!(count >= 1);

        let lib = ToyMoeModel::init(ModelConfig::toy_default(11)).unwrap();
        let (mut state, _) = prefill(&lib, &prompt).unwrap();
        for _ in 1..=16 {
            if state.pending_token() == EOS_TOKEN {
                break;
            }
            forward_token(&lib, &mut state, None).unwrap();
        }
        assert_eq!(&tokens[..count], &state.token_ids()[prompt.len()..]);
        moesim_model_free(model);
    }

    #[test]
    fn small_output_buffer_reports_needed_size() {
        let model = toy(11);
        let prompt: Vec<u32> = (1..=8).collect();
        let mut tokens = vec![0u32; 1];
        let mut count = 0usize;
        let status = moesim_decode(
            model,
            prompt.as_ptr(),
            prompt.len(),
            16,
            tokens.as_mut_ptr(),
            tokens.len(),
            &mut count,
        );
        assert_eq!(status, MoesimStatus::BufferTooSmall);
        assert!(last_error_string().contains("out_cap"));
        moesim_model_free(model);
    }

    #[test]
    fn simulate_rejects_mismatched_group_size() {
        let model = toy(5);
        let cluster = MoesimClusterDesc { num_workers: 9, group_size: 3, worker_memory_experts: 2 };
        let staging = MoesimStagingDesc {
            kind: MoesimStagingKind::OnDemand,
            shadow_bits: 0,
            token_period: 0,
            kv_period: 0,
            seed: 0,
        };
        let prompt: Vec<u32> = (1..=8).collect();
        let mut summary = MoesimDecodeSummary {
            tokens_generated: 0,
            iterations: 0,
            tokens_per_s: 0.0,
            stall_s: 0.0,
            mispredictions: 0,
            completion_s: 0.0,
        };
        let status = moesim_simulate_decode(
            model,
            &cluster,
            ptr::null(),
            &staging,
            prompt.as_ptr(),
            prompt.len(),
            8,
            &mut summary,
            ptr::null_mut(),
            0,
            ptr::null_mut(),
        );
        assert_eq!(status, MoesimStatus::Invalid);
        assert!(!last_error_string().is_empty());
        moesim_model_free(model);
    }

    #[test]
    fn simulated_tokens_match_decode_and_alignment_pays_off() {
        let model = toy(9);
        let prompt: Vec<u32> = (10..26).collect();
        let max_new = 32usize;

        let mut reference = vec![0u32; max_new + 1];
        let mut ref_count = 0usize;
        assert_eq!(
            moesim_decode(model, prompt.as_ptr(), prompt.len(), max_new, reference.as_mut_ptr(), reference.len(), &mut ref_count),
            MoesimStatus::Ok
        );

        let cluster = MoesimClusterDesc { num_workers: 8, group_size: 2, worker_memory_experts: 2 };
        let run = |staging: &MoesimStagingDesc| {
            let mut summary = MoesimDecodeSummary {
                tokens_generated: 0,
                iterations: 0,
                tokens_per_s: 0.0,
                stall_s: 0.0,
                mispredictions: 0,
                completion_s: 0.0,
            };
            let mut tokens = vec![0u32; max_new + 1];
            let mut count = 0usize;
            assert_eq!(
                moesim_simulate_decode(
                    model,
                    &cluster,
                    ptr::null(),
                    staging,
                    prompt.as_ptr(),
                    prompt.len(),
                    max_new,
                    &mut summary,
                    tokens.as_mut_ptr(),
                    tokens.len(),
                    &mut count,
                ),
                MoesimStatus::Ok
            );
            assert_eq!(&tokens[..count], &reference[..ref_count]);
            assert_eq!(summary.tokens_generated as usize, count);
            assert_eq!(summary.iterations as usize, count - 1);
            assert!(summary.completion_s > 0.0);
            summary
        };

        let aligned = run(&MoesimStagingDesc {
            kind: MoesimStagingKind::Shadow,
            shadow_bits: 4,
            token_period: 1,
            kv_period: 1,
            seed: 0,
        });
        let unaligned = run(&MoesimStagingDesc {
            kind: MoesimStagingKind::Shadow,
            shadow_bits: 4,
            token_period: 0,
            kv_period: 0,
            seed: 0,
        });
        assert!(aligned.tokens_per_s > unaligned.tokens_per_s);
        assert!(unaligned.mispredictions > aligned.mispredictions);
        moesim_model_free(model);
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/moesim.h"),
        )
        .expect("build script writes include/moesim.h");
        for symbol in [
            "MOESIM_H",
            "typedef struct MoesimModel MoesimModel;",
            "moesim_version",
            "moesim_last_error",
            "moesim_model_create",
            "moesim_model_toy_default",
            "moesim_model_quantized",
            "moesim_model_desc",
            "moesim_model_free",
            "moesim_cost_default",
            "moesim_decode",
            "moesim_simulate_decode",
            "MOESIM_STATUS_OK",
            "MOESIM_STAGING_KIND_SHADOW",
        ] {
            assert!(header.contains(symbol), "header lost {symbol}");
        }
    }
}
