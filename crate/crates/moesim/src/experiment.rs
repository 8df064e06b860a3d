//! Experiment specs and the batch runner behind the CLI.
//!
//! A spec is one TOML file whose sections mirror the library's configuration
//! types. The runner expands it into independent (configuration, seed,
//! prompt) simulations, executes them in parallel, and writes deterministic
//! artifacts into the output directory:
//!
//! * `summary.csv` — the shared schema from [`crate::metrics`], prefixed
//!   with kind-specific key columns; ensemble kinds write one averaged row
//!   per configuration and list the per-member rows in `members.csv`.
//! * a kind-specific auxiliary CSV where the summary schema is too narrow
//!   (recall curves, bottleneck budgets, prefill completions).
//! * `traces/*.jsonl` — event traces, controlled by `[experiment] traces`.
//! * `manifest.json` — spec echo, seeds, config hash, artifact version, and
//!   a failure marker when a run died after producing partial output.
//!
//! Output bytes depend only on the spec and the flags, never on thread
//! interleaving: jobs are indexed up front, results are collected back into
//! job order, and aggregation sums in that order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{plan_prefill, ClusterConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    bottleneck_report, effective_main_time, speed_report, write_summary_csv,
    BudgetInterpretation, SummaryRow,
};
use crate::model::{prefill, ModelConfig, ToyMoeModel};
use crate::rng::SplitMix64;
use crate::sep::{compute_recall, AlignmentPolicy, RecallReport};
use crate::sim::{
    run_decode_sim, run_prefill_sim, write_trace_jsonl, AblationCase, CostModel, EventTrace,
    PrefetchMode,
};
use crate::MAX_PROMPT_LEN;

/// What a spec file runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Prediction recall per token position as decoding advances.
    RecallCurve,
    /// Grid over token/KV alignment periods.
    AlignmentSweep,
    /// The six expert-staging configurations, averaged per case.
    Ablation,
    /// Steady-state stalls across per-expert load times around the budget.
    BottleneckSweep,
    /// Chunked versus single-batch prompt processing.
    PrefillPipeline,
    /// Prefill composed with decoding, end to end.
    FullPipeline,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::RecallCurve,
        ExperimentKind::AlignmentSweep,
        ExperimentKind::Ablation,
        ExperimentKind::BottleneckSweep,
        ExperimentKind::PrefillPipeline,
        ExperimentKind::FullPipeline,
    ];

    /// The spec-file spelling of this kind.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RecallCurve => "recall-curve",
            ExperimentKind::AlignmentSweep => "alignment-sweep",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::BottleneckSweep => "bottleneck-sweep",
            ExperimentKind::PrefillPipeline => "prefill-pipeline",
            ExperimentKind::FullPipeline => "full-pipeline",
        }
    }

    /// One-line description for `list-experiments`.
    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::RecallCurve => {
                "prediction recall per token position; writes recall_curve.csv"
            }
            ExperimentKind::AlignmentSweep => {
                "ensemble means over a token-period x kv-period alignment grid"
            }
            ExperimentKind::Ablation => {
                "the six staging/alignment cases, one averaged row per case"
            }
            ExperimentKind::BottleneckSweep => {
                "per-expert load time swept around the budget; writes bottleneck.csv"
            }
            ExperimentKind::PrefillPipeline => {
                "chunked vs single-batch prompt processing; writes prefill.csv"
            }
            ExperimentKind::FullPipeline => {
                "prefill composed with decoding end to end; writes pipeline.csv"
            }
        }
    }
}

/// Which runs keep their JSONL event trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    All,
    #[default]
    First,
    None,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// `[experiment]`: the kind, the ensemble seeds, and trace retention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// One simulation family per seed: the seed picks the model weights, the
    /// prompt set, and the random-staging stream.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub traces: TraceMode,
}

/// `[model]`: shape of the toy transformer (the seed comes from
/// `[experiment] seeds`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { num_layers: 8, num_experts: 8, top_k: 2, hidden_dim: 64, vocab_size: 256 }
    }
}

impl ModelSection {
    pub fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_experts: self.num_experts,
            top_k: self.top_k,
            hidden_dim: self.hidden_dim,
            vocab_size: self.vocab_size,
            seed,
        }
    }
}

/// `[cluster]`: worker pool shape. Memory is expressed in whole experts so
/// specs stay valid when the model width changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub num_workers: usize,
    pub group_size: usize,
    /// How many experts fit in one worker's memory (the engines need 2:
    /// one computing or parked, one loading).
    pub worker_memory_experts: u64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection { num_workers: 8, group_size: 2, worker_memory_experts: 2 }
    }
}

impl ClusterSection {
    pub fn config(&self, expert_param_bytes: u64) -> ClusterConfig {
        ClusterConfig {
            num_workers: self.num_workers,
            group_size: self.group_size,
            worker_memory_bytes: self.worker_memory_experts * expert_param_bytes,
            expert_param_bytes,
        }
    }
}

/// `[shadow]`: the predictor's precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSection {
    /// Quantization bit-width; 0 runs the shadow at full precision.
    pub bits: u8,
}

impl Default for ShadowSection {
    fn default() -> Self {
        ShadowSection { bits: 8 }
    }
}

impl ShadowSection {
    pub fn bits_option(&self) -> Option<u8> {
        if self.bits == 0 {
            None
        } else {
            Some(self.bits)
        }
    }
}

fn default_period_grid() -> Vec<u64> {
    vec![1, 2, 4, 8, 16]
}

/// `[policy]`: alignment cadence. Periods of 0 disable that alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub token_period: u64,
    pub kv_period: u64,
    /// Alignment-sweep grid; omitted means {1, 2, 4, 8, 16}.
    pub token_periods: Option<Vec<u64>>,
    pub kv_periods: Option<Vec<u64>>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection { token_period: 1, kv_period: 1, token_periods: None, kv_periods: None }
    }
}

fn finite_period(period: u64) -> Option<u64> {
    if period == 0 {
        None
    } else {
        Some(period)
    }
}

impl PolicySection {
    pub fn policy(&self) -> AlignmentPolicy {
        AlignmentPolicy::new(finite_period(self.token_period), finite_period(self.kv_period))
            .expect("zero periods map to disabled alignments")
    }

    pub fn token_grid(&self) -> Vec<u64> {
        self.token_periods.clone().unwrap_or_else(default_period_grid)
    }

    pub fn kv_grid(&self) -> Vec<u64> {
        self.kv_periods.clone().unwrap_or_else(default_period_grid)
    }
}

/// `[prompts]`: the synthetic request set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    pub count: usize,
    /// Cycled: prompt `i` has `lengths[i % lengths.len()]` tokens.
    pub lengths: Vec<usize>,
    pub max_new_tokens: usize,
    /// Prefill chunk size for the pipeline kinds.
    pub mini_batch_size: usize,
}

impl Default for PromptsSection {
    fn default() -> Self {
        PromptsSection { count: 4, lengths: vec![16], max_new_tokens: 64, mini_batch_size: 4 }
    }
}

/// `[sweep]`: bottleneck-sweep coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Per-expert load time as a multiple of the load budget.
    pub load_factors: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { load_factors: vec![0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.5] }
    }
}

/// A parsed, validated spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub shadow: ShadowSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub prompts: PromptsSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::input(format!("spec does not parse: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural checks a spec must pass before any simulation starts.
    /// Per-run invariants (worker memory, expert counts vs. workers) stay
    /// with the library constructors and surface as runtime failures.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::input("[experiment] seeds must not be empty"));
        }
        let mut deduped = self.experiment.seeds.clone();
        deduped.sort_unstable();
        deduped.dedup();
        if deduped.len() != self.experiment.seeds.len() {
            return Err(Error::input(
                "[experiment] seeds contains duplicates, which would double-weight ensemble means",
            ));
        }
        self.model.config(0).validate()?;
        self.cost.validate()?;
        if self.cluster.group_size != self.model.top_k {
            return Err(Error::input(format!(
                "[cluster] group_size {} must equal [model] top_k {} (one worker per active expert)",
                self.cluster.group_size, self.model.top_k
            )));
        }
        if self.cluster.num_workers == 0
            || self.cluster.num_workers % self.cluster.group_size != 0
        {
            return Err(Error::input(format!(
                "[cluster] num_workers {} must be a positive multiple of group_size {}",
                self.cluster.num_workers, self.cluster.group_size
            )));
        }
        let bits = self.shadow.bits;
        if bits != 0 && !(2..=16).contains(&bits) {
            return Err(Error::input(
                "[shadow] bits must be 0 (full precision) or in 2..=16",
            ));
        }
        if self.prompts.count == 0 {
            return Err(Error::input("[prompts] count must be at least 1"));
        }
        if self.prompts.lengths.is_empty() {
            return Err(Error::input("[prompts] lengths must not be empty"));
        }
        if self.prompts.lengths.iter().any(|&l| l == 0 || l > MAX_PROMPT_LEN) {
            return Err(Error::input(format!(
                "[prompts] lengths must be in 1..={MAX_PROMPT_LEN}"
            )));
        }
        if self.prompts.max_new_tokens == 0 {
            return Err(Error::input("[prompts] max_new_tokens must be at least 1"));
        }
        if self.prompts.mini_batch_size == 0 {
            return Err(Error::input("[prompts] mini_batch_size must be at least 1"));
        }
        if self.sweep.load_factors.is_empty() {
            return Err(Error::input("[sweep] load_factors must not be empty"));
        }
        if self.sweep.load_factors.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::input("[sweep] load_factors must be finite and positive"));
        }
        Ok(())
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind
    }
}

/// Inputs to [`generate_prompts`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSpec {
    pub count: usize,
    /// Cycled: prompt `i` has `lengths[i % lengths.len()]` tokens.
    pub lengths: Vec<usize>,
    pub vocab_size: usize,
    pub seed: u64,
}

/// Deterministic stand-in for a text prompt set: seeded uniform tokens that
/// are never the end-of-sequence id.
pub fn generate_prompts(spec: &PromptSpec) -> Result<Vec<Vec<u32>>> {
    if spec.count == 0 {
        return Err(Error::input("prompt count must be at least 1"));
    }
    if spec.lengths.is_empty() || spec.lengths.iter().any(|&l| l == 0) {
        return Err(Error::input("prompt lengths must be non-empty and positive"));
    }
    if spec.vocab_size < 2 {
        return Err(Error::input("vocab_size must be at least 2 to avoid end-of-sequence"));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let non_eos = spec.vocab_size as u64 - 1;
    Ok((0..spec.count)
        .map(|i| {
            let len = spec.lengths[i % spec.lengths.len()];
            (0..len).map(|_| 1 + (rng.next_u64() % non_eos) as u32).collect()
        })
        .collect())
}

/// The prompt stream must differ from the weight stream of the same seed,
/// or prompts would echo structure already baked into the model.
fn prompt_stream_seed(member_seed: u64) -> u64 {
    SplitMix64::new(member_seed ^ 0x70_52_6f_6d_70_74_73_21).next_u64()
}

/// Random-staging stream for the ablation's case 5, one per (seed, prompt).
fn staging_seed(member_seed: u64, prompt_index: usize) -> u64 {
    let mut rng = SplitMix64::new(member_seed ^ 0x52_61_6e_64_50_72_65_66);
    let base = rng.next_u64();
    SplitMix64::new(base ^ prompt_index as u64).next_u64()
}

/// How a batch run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the process-wide default.
    pub parallelism: Option<usize>,
    pub interpretation: BudgetInterpretation,
}

/// What [`run`] produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// Data rows in `summary.csv`.
    pub rows: usize,
    pub out_dir: PathBuf,
    /// Every file under the output directory, `manifest.json` included.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    kind: ExperimentKind,
    /// SHA-256 of the resolved spec's canonical JSON; rows from different
    /// configurations can never be confused for one another.
    config_hash: String,
    budget_interpretation: BudgetInterpretation,
    seeds: &'a [u64],
    rows: usize,
    outputs: Vec<String>,
    failed: bool,
    error: Option<String>,
    spec: &'a ExperimentSpec,
}

pub fn config_hash(spec: &ExperimentSpec) -> Result<String> {
    let canonical = serde_json::to_vec(spec)
        .map_err(|e| Error::internal(format!("spec serialization: {e}")))?;
    let digest = Sha256::digest(&canonical);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Run a spec and write its artifacts. On failure the partial outputs stay
/// on disk and `manifest.json` records the error.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunSummary> {
    spec.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    if spec.experiment.traces != TraceMode::None {
        fs::create_dir_all(opts.out_dir.join("traces"))?;
    }
    let outcome = match opts.parallelism {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::input(format!("cannot build a {threads}-thread pool: {e}")))?;
            pool.install(|| dispatch(spec, opts))
        }
        None => dispatch(spec, opts),
    };
    match outcome {
        Ok(rows) => {
            let files = write_manifest(spec, opts, rows, None)?;
            Ok(RunSummary { rows, out_dir: opts.out_dir.clone(), files })
        }
        Err(e) => {
            // Best effort: the marker matters more than a second error.
            let _ = write_manifest(spec, opts, 0, Some(e.to_string()));
            Err(e)
        }
    }
}

fn dispatch(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    match spec.experiment.kind {
        ExperimentKind::RecallCurve => run_recall_curve(spec, opts),
        ExperimentKind::AlignmentSweep => run_alignment_sweep(spec, opts),
        ExperimentKind::Ablation => run_ablation_experiment(spec, opts),
        ExperimentKind::BottleneckSweep => run_bottleneck_sweep(spec, opts),
        ExperimentKind::PrefillPipeline => run_prefill_pipeline(spec, opts),
        ExperimentKind::FullPipeline => run_full_pipeline(spec, opts),
    }
}

fn write_manifest(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    rows: usize,
    error: Option<String>,
) -> Result<Vec<String>> {
    let outputs = list_outputs(&opts.out_dir)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        kind: spec.experiment.kind,
        config_hash: config_hash(spec)?,
        budget_interpretation: opts.interpretation,
        seeds: &spec.experiment.seeds,
        rows,
        outputs: outputs.clone(),
        failed: error.is_some(),
        error,
        spec,
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::internal(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(opts.out_dir.join("manifest.json"), text)?;
    let mut files = outputs;
    files.push("manifest.json".to_string());
    files.sort();
    Ok(files)
}

/// Every artifact file under `out_dir` except the manifest itself, as
/// sorted relative paths.
fn list_outputs(out_dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(out_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name != "manifest.json" {
            files.push(name);
        } else if entry.file_type()?.is_dir() && name == "traces" {
            for trace in fs::read_dir(entry.path())? {
                let trace = trace?;
                if trace.file_type()?.is_file() {
                    files.push(format!("traces/{}", trace.file_name().to_string_lossy()));
                }
            }
        }
    }
    files.sort();
    Ok(files)
}

fn write_file(out_dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::write(out_dir.join(name), bytes)?;
    Ok(())
}

fn write_summary_file(
    out_dir: &Path,
    name: &str,
    key_columns: &[&str],
    rows: &[(Vec<String>, SummaryRow)],
) -> Result<()> {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, key_columns, rows)?;
    write_file(out_dir, name, &buf)
}

/// One simulation the runner will execute.
struct DecodeJob {
    /// Key fields identifying this member in `members.csv` (or directly in
    /// `summary.csv` for per-member kinds).
    keys: Vec<String>,
    /// Which summary row this member averages into.
    group: usize,
    model_seed: u64,
    prompt: Vec<u32>,
    prompt_index: usize,
    max_new: usize,
    cost: CostModel,
    prefetch: PrefetchMode,
    /// File name under `traces/`, already gated by the trace mode.
    trace_name: Option<String>,
    /// Chunk size when the run starts with a simulated prefill; the decode
    /// then begins when the last prefill result lands on the main node.
    prefill_chunk: Option<usize>,
}

struct DecodeOutcome {
    keys: Vec<String>,
    group: usize,
    row: SummaryRow,
    recall: RecallReport,
    steady_stall_s: f64,
    warmup_stall_s: f64,
    completion_s: Option<f64>,
    pipeline_end_s: Option<f64>,
}

fn execute_jobs(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    jobs: Vec<DecodeJob>,
) -> Result<Vec<DecodeOutcome>> {
    let traces_dir = opts.out_dir.join("traces");
    jobs.into_par_iter()
        .map(|job| -> Result<DecodeOutcome> {
            let model = ToyMoeModel::init(spec.model.config(job.model_seed))?;
            let cluster = spec.cluster.config(model.expert_param_bytes());
            let mut completion_s = None;
            let mut pipeline_end_s = None;
            let mut prefill_trace: Option<EventTrace> = None;
            let start_time = if let Some(chunk) = job.prefill_chunk {
                let (_, routing) = prefill(&model, &job.prompt)?;
                let plan = plan_prefill(&routing, chunk, model.config().num_experts, &cluster)?;
                let pre = run_prefill_sim(&model, &job.prompt, &plan, &job.cost)?;
                completion_s = Some(pre.completion_s);
                pipeline_end_s = Some(pre.pipeline_end_s);
                let end = pre.pipeline_end_s;
                prefill_trace = Some(pre.trace);
                end
            } else {
                0.0
            };
            let decoded = run_decode_sim(
                &model,
                &job.prompt,
                job.max_new,
                &cluster,
                &job.cost,
                &job.prefetch,
                job.prompt_index,
                start_time,
            )?;
            let trace = match prefill_trace {
                Some(mut merged) => {
                    merged.extend(decoded.trace);
                    merged
                }
                None => decoded.trace,
            };
            let speed = speed_report(&trace)?;
            let recall =
                compute_recall(&decoded.records, model.config().top_k, model.config().num_layers)?;
            if let Some(name) = &job.trace_name {
                let file = fs::File::create(traces_dir.join(name))?;
                let mut out = std::io::BufWriter::new(file);
                write_trace_jsonl(&trace, &mut out)?;
                out.flush()?;
            }
            Ok(DecodeOutcome {
                keys: job.keys,
                group: job.group,
                row: SummaryRow::from_parts(&speed, &recall),
                recall,
                steady_stall_s: speed.steady_stall_s(),
                warmup_stall_s: speed.warmup_stall_s(),
                completion_s,
                pipeline_end_s,
            })
        })
        .collect()
}

fn trace_name(mode: TraceMode, job_index: usize, name: String) -> Option<String> {
    match mode {
        TraceMode::All => Some(name),
        TraceMode::First if job_index == 0 => Some(name),
        _ => None,
    }
}

fn member_prompts(spec: &ExperimentSpec, member_seed: u64) -> Result<Vec<Vec<u32>>> {
    generate_prompts(&PromptSpec {
        count: spec.prompts.count,
        lengths: spec.prompts.lengths.clone(),
        vocab_size: spec.model.vocab_size,
        seed: prompt_stream_seed(member_seed),
    })
}

/// Arithmetic mean over members, summed in member order.
fn mean_summary(rows: &[&SummaryRow]) -> SummaryRow {
    let n = rows.len() as f64;
    let mut acc = SummaryRow {
        tokens_per_s_decode: 0.0,
        ttft_s: 0.0,
        total_stall_s: 0.0,
        mispredict_count: 0.0,
        recall_overall: 0.0,
    };
    for row in rows {
        acc.tokens_per_s_decode += row.tokens_per_s_decode;
        acc.ttft_s += row.ttft_s;
        acc.total_stall_s += row.total_stall_s;
        acc.mispredict_count += row.mispredict_count;
        acc.recall_overall += row.recall_overall;
    }
    acc.tokens_per_s_decode /= n;
    acc.ttft_s /= n;
    acc.total_stall_s /= n;
    acc.mispredict_count /= n;
    acc.recall_overall /= n;
    acc
}

fn grouped_means(
    outcomes: &[DecodeOutcome],
    group_keys: &[Vec<String>],
) -> Vec<(Vec<String>, SummaryRow)> {
    group_keys
        .iter()
        .enumerate()
        .map(|(g, keys)| {
            let members: Vec<&SummaryRow> =
                outcomes.iter().filter(|o| o.group == g).map(|o| &o.row).collect();
            (keys.clone(), mean_summary(&members))
        })
        .collect()
}

fn member_rows(outcomes: &[DecodeOutcome]) -> Vec<(Vec<String>, SummaryRow)> {
    outcomes.iter().map(|o| (o.keys.clone(), o.row.clone())).collect()
}

fn run_recall_curve(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let policy = spec.policy.policy();
    let bits = spec.shadow.bits_option();
    let mut jobs = Vec::new();
    for &seed in &spec.experiment.seeds {
        for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
            let index = jobs.len();
            jobs.push(DecodeJob {
                keys: vec![seed.to_string(), qi.to_string()],
                group: index,
                model_seed: seed,
                prompt,
                prompt_index: qi,
                max_new: spec.prompts.max_new_tokens,
                cost: spec.cost.clone(),
                prefetch: PrefetchMode::Shadow { bits, policy },
                trace_name: trace_name(
                    spec.experiment.traces,
                    index,
                    format!("seed{seed}_prompt{qi}.jsonl"),
                ),
                prefill_chunk: None,
            });
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = member_rows(&outcomes);
    write_summary_file(&opts.out_dir, "summary.csv", &["seed", "prompt"], &rows)?;

    // Pool hits and opportunities across the whole ensemble per token index.
    let horizon = outcomes.iter().map(|o| o.recall.per_token.len()).max().unwrap_or(0);
    let mut correct = vec![0u64; horizon];
    let mut active = vec![0u64; horizon];
    for outcome in &outcomes {
        for (i, &c) in outcome.recall.correct_per_token.iter().enumerate() {
            correct[i] += c;
        }
        for (i, &a) in outcome.recall.active_per_token.iter().enumerate() {
            active[i] += a;
        }
    }
    let per_position = (spec.model.top_k * spec.model.num_layers) as u64;
    let mut curve = String::from("token_index,recall,prompts\n");
    for i in 0..horizon {
        let denom = active[i] * per_position;
        let recall = if denom == 0 { 0.0 } else { correct[i] as f64 / denom as f64 };
        curve.push_str(&format!("{},{},{}\n", i + 1, recall, active[i]));
    }
    write_file(&opts.out_dir, "recall_curve.csv", curve.as_bytes())?;
    Ok(rows.len())
}

fn run_alignment_sweep(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let bits = spec.shadow.bits_option();
    let mut group_keys = Vec::new();
    let mut jobs = Vec::new();
    for &tp in &spec.policy.token_grid() {
        for &kp in &spec.policy.kv_grid() {
            let group = group_keys.len();
            group_keys.push(vec![tp.to_string(), kp.to_string()]);
            let policy = AlignmentPolicy::new(finite_period(tp), finite_period(kp))
                .expect("zero periods map to disabled alignments");
            for &seed in &spec.experiment.seeds {
                for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
                    let index = jobs.len();
                    jobs.push(DecodeJob {
                        keys: vec![
                            tp.to_string(),
                            kp.to_string(),
                            seed.to_string(),
                            qi.to_string(),
                        ],
                        group,
                        model_seed: seed,
                        prompt,
                        prompt_index: qi,
                        max_new: spec.prompts.max_new_tokens,
                        cost: spec.cost.clone(),
                        prefetch: PrefetchMode::Shadow { bits, policy },
                        trace_name: trace_name(
                            spec.experiment.traces,
                            index,
                            format!("t{tp}_kv{kp}_seed{seed}_prompt{qi}.jsonl"),
                        ),
                        prefill_chunk: None,
                    });
                }
            }
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = grouped_means(&outcomes, &group_keys);
    write_summary_file(&opts.out_dir, "summary.csv", &["token_period", "kv_period"], &rows)?;
    write_summary_file(
        &opts.out_dir,
        "members.csv",
        &["token_period", "kv_period", "seed", "prompt"],
        &member_rows(&outcomes),
    )?;
    Ok(rows.len())
}

fn run_ablation_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let bits = spec.shadow.bits_option();
    let mut group_keys = Vec::new();
    let mut jobs = Vec::new();
    for case in AblationCase::ALL {
        let group = group_keys.len();
        group_keys.push(vec![case.index().to_string(), case.label().to_string()]);
        for &seed in &spec.experiment.seeds {
            for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
                let index = jobs.len();
                jobs.push(DecodeJob {
                    keys: vec![
                        case.index().to_string(),
                        case.label().to_string(),
                        seed.to_string(),
                        qi.to_string(),
                    ],
                    group,
                    model_seed: seed,
                    prompt,
                    prompt_index: qi,
                    max_new: spec.prompts.max_new_tokens,
                    cost: spec.cost.clone(),
                    prefetch: case.prefetch(bits, staging_seed(seed, qi)),
                    trace_name: trace_name(
                        spec.experiment.traces,
                        index,
                        format!("case{}_seed{seed}_prompt{qi}.jsonl", case.index()),
                    ),
                    prefill_chunk: None,
                });
            }
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = grouped_means(&outcomes, &group_keys);
    write_summary_file(&opts.out_dir, "summary.csv", &["case", "label"], &rows)?;
    write_summary_file(
        &opts.out_dir,
        "members.csv",
        &["case", "label", "seed", "prompt"],
        &member_rows(&outcomes),
    )?;
    Ok(rows.len())
}

fn run_bottleneck_sweep(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let model_config = spec.model.config(0);
    let expert_bytes = model_config.expert_param_bytes();
    let cluster = spec.cluster.config(expert_bytes);
    let scale = match opts.interpretation {
        BudgetInterpretation::NumGroups => cluster.num_groups(),
        BudgetInterpretation::GroupSize => cluster.group_size,
    };
    let budget = crate::cluster::max_load_budget(
        effective_main_time(&spec.cost, spec.model.hidden_dim),
        spec.cost.t_w,
        scale,
    )?;

    let mut group_keys = Vec::new();
    let mut jobs = Vec::new();
    for &factor in &spec.sweep.load_factors {
        let group = group_keys.len();
        group_keys.push(vec![factor.to_string()]);
        let mut cost = spec.cost.clone();
        cost.cpu_gpu_bandwidth = expert_bytes as f64 / (factor * budget);
        for &seed in &spec.experiment.seeds {
            for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
                let index = jobs.len();
                jobs.push(DecodeJob {
                    keys: vec![factor.to_string(), seed.to_string(), qi.to_string()],
                    group,
                    model_seed: seed,
                    prompt,
                    prompt_index: qi,
                    max_new: spec.prompts.max_new_tokens,
                    cost: cost.clone(),
                    // Full-precision, never-aligned shadow: predictions are
                    // always right and ahead, so any steady-state stall is
                    // attributable to the load budget alone.
                    prefetch: PrefetchMode::Shadow {
                        bits: None,
                        policy: AlignmentPolicy::never(),
                    },
                    trace_name: trace_name(
                        spec.experiment.traces,
                        index,
                        format!("factor{factor}_seed{seed}_prompt{qi}.jsonl"),
                    ),
                    prefill_chunk: None,
                });
            }
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = grouped_means(&outcomes, &group_keys);
    write_summary_file(&opts.out_dir, "summary.csv", &["load_factor"], &rows)?;
    write_summary_file(
        &opts.out_dir,
        "members.csv",
        &["load_factor", "seed", "prompt"],
        &member_rows(&outcomes),
    )?;

    let mut aux = String::from(
        "load_factor,budget_s,required_s,bottlenecked,steady_stall_s,warmup_stall_s\n",
    );
    for (g, &factor) in spec.sweep.load_factors.iter().enumerate() {
        let mut cost = spec.cost.clone();
        cost.cpu_gpu_bandwidth = expert_bytes as f64 / (factor * budget);
        let report = bottleneck_report(&cluster, &cost, &model_config, opts.interpretation)?;
        let members: Vec<&DecodeOutcome> = outcomes.iter().filter(|o| o.group == g).collect();
        let n = members.len() as f64;
        let steady: f64 = members.iter().map(|o| o.steady_stall_s).sum::<f64>() / n;
        let warmup: f64 = members.iter().map(|o| o.warmup_stall_s).sum::<f64>() / n;
        aux.push_str(&format!(
            "{factor},{},{},{},{steady},{warmup}\n",
            report.budget_s, report.required_s, report.bottlenecked
        ));
    }
    write_file(&opts.out_dir, "bottleneck.csv", aux.as_bytes())?;
    Ok(rows.len())
}

fn run_prefill_pipeline(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let policy = spec.policy.policy();
    let bits = spec.shadow.bits_option();
    let mut jobs = Vec::new();
    for &seed in &spec.experiment.seeds {
        for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
            // "single" processes the whole prompt as one mini-batch.
            let plans = [("chunked", spec.prompts.mini_batch_size), ("single", prompt.len())];
            for (plan_name, chunk) in plans {
                let index = jobs.len();
                jobs.push(DecodeJob {
                    keys: vec![seed.to_string(), qi.to_string(), plan_name.to_string()],
                    group: index,
                    model_seed: seed,
                    prompt: prompt.clone(),
                    prompt_index: qi,
                    // One decode iteration finalizes the prompt's pending
                    // token, so the row's ttft_s is prefill plus one
                    // iteration.
                    max_new: 1,
                    cost: spec.cost.clone(),
                    prefetch: PrefetchMode::Shadow { bits, policy },
                    trace_name: trace_name(
                        spec.experiment.traces,
                        index,
                        format!("seed{seed}_prompt{qi}_{plan_name}.jsonl"),
                    ),
                    prefill_chunk: Some(chunk),
                });
            }
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = member_rows(&outcomes);
    write_summary_file(&opts.out_dir, "summary.csv", &["seed", "prompt", "plan"], &rows)?;

    let mut aux = String::from("seed,prompt,plan,completion_s,pipeline_end_s,ttft_s\n");
    for outcome in &outcomes {
        aux.push_str(&format!(
            "{},{},{},{},{},{}\n",
            outcome.keys[0],
            outcome.keys[1],
            outcome.keys[2],
            outcome.completion_s.unwrap_or(f64::NAN),
            outcome.pipeline_end_s.unwrap_or(f64::NAN),
            outcome.row.ttft_s
        ));
    }
    write_file(&opts.out_dir, "prefill.csv", aux.as_bytes())?;
    Ok(rows.len())
}

fn run_full_pipeline(spec: &ExperimentSpec, opts: &RunOptions) -> Result<usize> {
    let policy = spec.policy.policy();
    let bits = spec.shadow.bits_option();
    let mut jobs = Vec::new();
    for &seed in &spec.experiment.seeds {
        for (qi, prompt) in member_prompts(spec, seed)?.into_iter().enumerate() {
            let index = jobs.len();
            jobs.push(DecodeJob {
                keys: vec![seed.to_string(), qi.to_string()],
                group: index,
                model_seed: seed,
                prompt,
                prompt_index: qi,
                max_new: spec.prompts.max_new_tokens,
                cost: spec.cost.clone(),
                prefetch: PrefetchMode::Shadow { bits, policy },
                trace_name: trace_name(
                    spec.experiment.traces,
                    index,
                    format!("seed{seed}_prompt{qi}.jsonl"),
                ),
                prefill_chunk: Some(spec.prompts.mini_batch_size),
            });
        }
    }
    let outcomes = execute_jobs(spec, opts, jobs)?;
    let rows = member_rows(&outcomes);
    write_summary_file(&opts.out_dir, "summary.csv", &["seed", "prompt"], &rows)?;

    let mut aux = String::from("seed,prompt,completion_s,pipeline_end_s,ttft_s\n");
    for outcome in &outcomes {
        aux.push_str(&format!(
            "{},{},{},{},{}\n",
            outcome.keys[0],
            outcome.keys[1],
            outcome.completion_s.unwrap_or(f64::NAN),
            outcome.pipeline_end_s.unwrap_or(f64::NAN),
            outcome.row.ttft_s
        ));
    }
    write_file(&opts.out_dir, "pipeline.csv", aux.as_bytes())?;
    Ok(rows.len())
}
