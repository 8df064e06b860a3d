//! Evaluation quantities derived from event traces and routing records:
//! decoding throughput, time-to-first-token, stall breakdowns, and the
//! load-budget bottleneck report. Everything here is a pure function of its
//! inputs; the simulation engines never call back into this module.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::cluster::{max_load_budget, ClusterConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sep::RecallReport;
use crate::sim::{CostModel, EventTrace};

/// Decoding rate over a trace's emitted tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodeThroughput {
    pub tokens_per_s: f64,
    /// A single emitted token has no measurable rate; the value above is
    /// reported as zero and this flag is set instead.
    pub single_token: bool,
}

/// Average tokens generated per second during decoding, measured between the
/// first and last token emissions so prefill time never leaks in.
pub fn decode_throughput(trace: &EventTrace, n: usize) -> Result<DecodeThroughput> {
    let times = trace.token_times();
    if times.is_empty() {
        return Err(Error::input("trace contains no emitted tokens"));
    }
    if times.len() != n {
        return Err(Error::input(format!(
            "expected {} emitted tokens but the trace has {}",
            n,
            times.len()
        )));
    }
    if n == 1 {
        return Ok(DecodeThroughput { tokens_per_s: 0.0, single_token: true });
    }
    let span = times[n - 1] - times[0];
    Ok(DecodeThroughput { tokens_per_s: (n as f64 - 1.0) / span, single_token: false })
}

/// Time-to-first-token: seconds from request start (virtual time zero) to
/// the first token emission.
pub fn ttft(trace: &EventTrace) -> Result<f64> {
    trace
        .token_times()
        .first()
        .copied()
        .ok_or_else(|| Error::input("trace contains no emitted tokens"))
}

/// Stalled seconds a layer accumulated, split by pipeline phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StallBreakdown {
    /// First visits after a cold start or an alignment release.
    pub warmup_s: f64,
    /// Everything else; nonzero here means the load budget is exceeded.
    pub steady_s: f64,
}

impl StallBreakdown {
    pub fn total(&self) -> f64 {
        self.warmup_s + self.steady_s
    }
}

/// Speed summary for one simulated request (prefill + decode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedReport {
    /// (N-1) / (last emission - first emission); zero when `single_token`.
    pub decode_tokens_per_s: f64,
    /// Set when only one token was emitted, making the rate undefined.
    pub single_token: bool,
    /// First token emission relative to request start.
    pub ttft_s: f64,
    /// N / (last emission - request start): the end-to-end rate, which
    /// charges prefill and warm-up against the tokens produced.
    pub output_tokens_per_s: f64,
    pub tokens_decoded: usize,
    pub total_stall_s: f64,
    pub stall_by_layer: BTreeMap<usize, StallBreakdown>,
    pub mispredict_count: u64,
}

impl SpeedReport {
    pub fn steady_stall_s(&self) -> f64 {
        self.stall_by_layer.values().map(|s| s.steady_s).sum()
    }

    pub fn warmup_stall_s(&self) -> f64 {
        self.stall_by_layer.values().map(|s| s.warmup_s).sum()
    }
}

/// Derive the speed summary from a finished trace. The trace's time origin
/// is the request start, so a decode trace that was started at the prefill
/// pipeline's end time yields an end-to-end report.
pub fn speed_report(trace: &EventTrace) -> Result<SpeedReport> {
    let times = trace.token_times();
    if times.is_empty() {
        return Err(Error::input("trace contains no emitted tokens"));
    }
    let n = times.len();
    let throughput = decode_throughput(trace, n)?;
    let last = times[n - 1];
    let output_tokens_per_s = if throughput.single_token { 0.0 } else { n as f64 / last };
    let stall_by_layer = trace
        .stall_by_layer()
        .into_iter()
        .map(|(layer, (warmup_s, steady_s))| (layer, StallBreakdown { warmup_s, steady_s }))
        .collect();
    Ok(SpeedReport {
        decode_tokens_per_s: throughput.tokens_per_s,
        single_token: throughput.single_token,
        ttft_s: times[0],
        output_tokens_per_s,
        tokens_decoded: n,
        total_stall_s: trace.total_stall(),
        stall_by_layer,
        mispredict_count: trace.mispredict_count(),
    })
}

/// Which cluster count sets the number of turns between a group's
/// consecutive visits in the load budget.
///
/// With layers dealt round-robin over groups, the time a group has to load
/// its next experts spans one main slot per *group*, so `NumGroups` is the
/// default. `GroupSize` is exposed for comparison: the two readings coincide
/// only when the worker count is the square of the group size (e.g. 4
/// workers in groups of 2) and otherwise move every budget boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetInterpretation {
    #[default]
    NumGroups,
    GroupSize,
}

/// Outcome of comparing the per-expert load time against the overlap budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BottleneckReport {
    /// Longest load the schedule can hide: see [`max_load_budget`].
    pub budget_s: f64,
    /// Time to copy one expert host-to-accelerator at the configured rate.
    pub required_s: f64,
    /// True when `required_s` exceeds `budget_s`. Hitting the budget exactly
    /// still counts as fitting: the budget is the maximum allowable time.
    pub bottlenecked: bool,
    /// Main-node time per layer visit as a worker group experiences it:
    /// the gate/attention slot plus the embedding send and result return.
    pub effective_main_s: f64,
    /// Worker compute time per layer visit.
    pub effective_worker_s: f64,
}

/// Main-node wall time per layer from a worker group's point of view. The
/// group's next turn cannot start until the embedding has crossed the LAN,
/// and its previous result must cross back before the main node resumes, so
/// both transfers extend the window in which loads can hide.
pub fn effective_main_time(cost: &CostModel, hidden_dim: usize) -> f64 {
    cost.t_m + 2.0 * cost.lan_time(hidden_dim as u64 * 8)
}

/// Would on-demand loading stall this configuration in steady state?
///
/// This is a what-if calculator: it accepts expert sizes the memory check in
/// [`ClusterConfig::validate`] would reject (zero-size experts are never a
/// bottleneck) and only needs the cluster's shape to be coherent.
pub fn bottleneck_report(
    cluster: &ClusterConfig,
    cost: &CostModel,
    model: &ModelConfig,
    interpretation: BudgetInterpretation,
) -> Result<BottleneckReport> {
    cost.validate()?;
    model.validate()?;
    if cluster.num_workers == 0 || cluster.group_size == 0 {
        return Err(Error::config("num_workers and group_size must be >= 1"));
    }
    if cluster.num_workers % cluster.group_size != 0 {
        return Err(Error::config(format!(
            "num_workers {} not divisible by group_size {}",
            cluster.num_workers, cluster.group_size
        )));
    }
    let scale = match interpretation {
        BudgetInterpretation::NumGroups => cluster.num_groups(),
        BudgetInterpretation::GroupSize => cluster.group_size,
    };
    let effective_main_s = effective_main_time(cost, model.hidden_dim);
    let effective_worker_s = cost.t_w;
    let budget_s = max_load_budget(effective_main_s, effective_worker_s, scale)?;
    let required_s = cost.load_time(cluster.expert_param_bytes);
    Ok(BottleneckReport {
        budget_s,
        required_s,
        bottlenecked: required_s > budget_s,
        effective_main_s,
        effective_worker_s,
    })
}

/// Column names of the summary CSV, in order, after any key columns.
pub const SUMMARY_COLUMNS: [&str; 5] =
    ["tokens_per_s_decode", "ttft_s", "total_stall_s", "mispredict_count", "recall_overall"];

/// One row of the summary CSV shared by every experiment kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub tokens_per_s_decode: f64,
    pub ttft_s: f64,
    pub total_stall_s: f64,
    /// `f64` so ensemble rows can carry exact means; single-run rows hold
    /// whole numbers and print without a decimal point.
    pub mispredict_count: f64,
    pub recall_overall: f64,
}

impl SummaryRow {
    pub fn from_parts(speed: &SpeedReport, recall: &RecallReport) -> SummaryRow {
        SummaryRow {
            tokens_per_s_decode: speed.decode_tokens_per_s,
            ttft_s: speed.ttft_s,
            total_stall_s: speed.total_stall_s,
            mispredict_count: speed.mispredict_count as f64,
            recall_overall: recall.overall,
        }
    }

    fn fields(&self) -> [String; 5] {
        [
            format_float(self.tokens_per_s_decode),
            format_float(self.ttft_s),
            format_float(self.total_stall_s),
            format_float(self.mispredict_count),
            format_float(self.recall_overall),
        ]
    }
}

/// Shortest representation that parses back to the identical f64, so equal
/// simulations always print equal bytes.
fn format_float(v: f64) -> String {
    format!("{v}")
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write the shared summary schema: caller-provided key columns (case id,
/// sweep coordinates, ...) followed by [`SUMMARY_COLUMNS`]. Rows are written
/// in the order given; callers sort before writing so output never depends
/// on execution interleaving.
pub fn write_summary_csv<W: Write>(
    out: &mut W,
    key_columns: &[&str],
    rows: &[(Vec<String>, SummaryRow)],
) -> Result<()> {
    let header: Vec<&str> = key_columns.iter().copied().chain(SUMMARY_COLUMNS).collect();
    writeln!(out, "{}", header.join(","))?;
    for (keys, row) in rows {
        if keys.len() != key_columns.len() {
            return Err(Error::input(format!(
                "summary row has {} key fields, header has {}",
                keys.len(),
                key_columns.len()
            )));
        }
        let mut fields: Vec<String> = keys.iter().map(|k| csv_escape(k)).collect();
        fields.extend(row.fields());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterConfig;
    use crate::model::{ModelConfig, ToyMoeModel};
    use crate::rng::SplitMix64;
    use crate::sep::compute_recall;
    use crate::sim::{
        run_decode_sim, CostModel, EventKind, EventTrace, Payload, PrefetchMode, Subject,
    };

    fn trace_with_tokens(times: &[f64]) -> EventTrace {
        let mut trace = EventTrace::default();
        for (i, &t) in times.iter().enumerate() {
            let mut p = Payload::at(i as u64 + 1, 0);
            p.token = Some(7);
            trace.push(t, EventKind::TokenEmitted, Subject::Main, p);
        }
        trace.finish();
        trace
    }

    #[test]
    fn throughput_counts_gaps_not_tokens() {
        let trace = trace_with_tokens(&[0.0, 1.0, 2.0, 3.0]);
        let t = decode_throughput(&trace, 4).unwrap();
        assert_eq!(t.tokens_per_s, 1.0);
        assert!(!t.single_token);

        let trace = trace_with_tokens(&[0.5, 0.8, 1.7]);
        let t = decode_throughput(&trace, 3).unwrap();
        assert!((t.tokens_per_s - 2.0 / 1.2).abs() < 1e-15);
    }

    #[test]
    fn single_token_is_flagged_zero() {
        let trace = trace_with_tokens(&[1.34]);
        let t = decode_throughput(&trace, 1).unwrap();
        assert_eq!(t.tokens_per_s, 0.0);
        assert!(t.single_token);
        assert_eq!(ttft(&trace).unwrap(), 1.34);
    }

    #[test]
    fn empty_or_mismatched_traces_are_input_errors() {
        let empty = EventTrace::default();
        assert!(matches!(decode_throughput(&empty, 0), Err(Error::Input(_))));
        assert!(matches!(ttft(&empty), Err(Error::Input(_))));
        let trace = trace_with_tokens(&[0.0, 1.0]);
        assert!(matches!(decode_throughput(&trace, 3), Err(Error::Input(_))));
    }

    fn sim_fixture() -> (ToyMoeModel, ClusterConfig, CostModel) {
        let model = ToyMoeModel::init(ModelConfig {
            num_layers: 4,
            num_experts: 4,
            top_k: 2,
            hidden_dim: 16,
            vocab_size: 64,
            seed: 3,
        })
        .unwrap();
        let cluster = ClusterConfig {
            num_workers: 4,
            group_size: 2,
            worker_memory_bytes: 16 * model.expert_param_bytes(),
            expert_param_bytes: model.expert_param_bytes(),
        };
        (model, cluster, CostModel::default())
    }

    #[test]
    fn speed_report_is_consistent_with_its_trace() {
        let (model, cluster, cost) = sim_fixture();
        let result = run_decode_sim(
            &model,
            &[5, 9, 2],
            6,
            &cluster,
            &cost,
            &PrefetchMode::Shadow { bits: Some(8), policy: crate::sep::AlignmentPolicy::every_iteration() },
            0,
            0.125,
        )
        .unwrap();
        let report = speed_report(&result.trace).unwrap();
        // Emitted tokens are the generated stream minus the final pending one.
        assert_eq!(report.tokens_decoded, result.tokens.len() - 1);
        assert_eq!(report.tokens_decoded as u64, result.iterations);
        assert!(report.ttft_s > 0.125, "ttft includes the start offset");
        assert!(report.decode_tokens_per_s > 0.0);
        assert!(report.output_tokens_per_s <= report.decode_tokens_per_s);
        assert!(report.total_stall_s >= 0.0);
        let rebuilt: f64 = report.stall_by_layer.values().map(|s| s.total()).sum();
        assert!((rebuilt - report.total_stall_s).abs() < 1e-12);
        assert_eq!(report.mispredict_count, result.trace.mispredict_count());
    }

    fn dyadic_cost(expert_bytes: u64, num_groups: usize, factor: f64) -> CostModel {
        // Power-of-two slot times and an infinite LAN make the budget and the
        // load time exact in f64, so boundary cases are really boundaries.
        let t_m = (2.0f64).powi(-10);
        let t_w = (2.0f64).powi(-8);
        let budget = num_groups as f64 * t_m + (num_groups as f64 - 1.0) * t_w;
        CostModel {
            t_m,
            t_w,
            cpu_gpu_bandwidth: expert_bytes as f64 / (factor * budget),
            lan_bandwidth: f64::INFINITY,
            lan_latency: 0.0,
            serialize_overhead: 0.0,
            ..CostModel::default()
        }
    }

    #[test]
    fn budget_boundary_is_inclusive() {
        let model = ModelConfig { num_layers: 4, num_experts: 4, top_k: 2, hidden_dim: 16, vocab_size: 64, seed: 1 };
        let bytes = 2 * 4 * 16 * 16 * 8u64; // power of two
        let cluster = ClusterConfig {
            num_workers: 4,
            group_size: 2,
            worker_memory_bytes: 4 * bytes,
            expert_param_bytes: bytes,
        };
        let at = bottleneck_report(&cluster, &dyadic_cost(bytes, 2, 1.0), &model, BudgetInterpretation::NumGroups)
            .unwrap();
        assert_eq!(at.required_s, at.budget_s, "dyadic setup must be exact");
        assert!(!at.bottlenecked, "hitting the budget exactly still fits");
        let over = bottleneck_report(&cluster, &dyadic_cost(bytes, 2, 1.1), &model, BudgetInterpretation::NumGroups)
            .unwrap();
        assert!(over.bottlenecked);
        assert!(over.required_s > over.budget_s);
    }

    #[test]
    fn zero_size_experts_never_bottleneck() {
        let model = ModelConfig { num_layers: 4, num_experts: 4, top_k: 2, hidden_dim: 16, vocab_size: 64, seed: 1 };
        let cluster = ClusterConfig {
            num_workers: 4,
            group_size: 2,
            worker_memory_bytes: 0,
            expert_param_bytes: 0,
        };
        let report =
            bottleneck_report(&cluster, &CostModel::default(), &model, BudgetInterpretation::NumGroups).unwrap();
        assert_eq!(report.required_s, 0.0);
        assert!(!report.bottlenecked);
    }

    #[test]
    fn interpretations_scale_different_counts() {
        let model = ModelConfig { num_layers: 8, num_experts: 8, top_k: 2, hidden_dim: 16, vocab_size: 64, seed: 1 };
        let cluster = ClusterConfig {
            num_workers: 8,
            group_size: 2,
            worker_memory_bytes: 1 << 20,
            expert_param_bytes: 1 << 14,
        };
        let cost = CostModel::default();
        let by_groups =
            bottleneck_report(&cluster, &cost, &model, BudgetInterpretation::NumGroups).unwrap();
        let by_size =
            bottleneck_report(&cluster, &cost, &model, BudgetInterpretation::GroupSize).unwrap();
        // Four groups of two: the round-robin return period spans four main
        // slots, the printed-formula reading only two.
        assert!(by_groups.budget_s > by_size.budget_s);
        let t_m_eff = effective_main_time(&cost, 16);
        assert!((by_groups.budget_s - (4.0 * t_m_eff + 3.0 * cost.t_w)).abs() < 1e-15);
        assert!((by_size.budget_s - (2.0 * t_m_eff + 1.0 * cost.t_w)).abs() < 1e-15);
    }

    /// The report's verdict must match what the simulator actually does: a
    /// randomized sweep of cost models stalls in steady state exactly when
    /// the report says the configuration is bottlenecked.
    #[test]
    fn bottleneck_verdict_agrees_with_simulation() {
        let config = ModelConfig {
            num_layers: 4,
            num_experts: 4,
            top_k: 2,
            hidden_dim: 16,
            vocab_size: 64,
            seed: 77,
        };
        let model = ToyMoeModel::init(config).unwrap();
        let bytes = model.expert_param_bytes();
        let cluster = ClusterConfig {
            num_workers: 4,
            group_size: 2,
            worker_memory_bytes: 16 * bytes,
            expert_param_bytes: bytes,
        };
        let mut rng = SplitMix64::new(0xb0771e_5eed);
        let mut bottlenecked_seen = 0usize;
        for round in 0..120 {
            let t_m = 0.5e-3 + 4.5e-3 * rng.next_f64();
            let t_w = 0.5e-3 + 4.5e-3 * rng.next_f64();
            let lan_bandwidth = 1e7 * 10f64.powf(2.0 * rng.next_f64());
            let lan_latency = 1e-3 * rng.next_f64();
            let serialize_overhead = 1e-4 * rng.next_f64();
            // Stay off the knife edge: exactly-at-budget is covered by the
            // dyadic test above, where f64 arithmetic is exact.
            let factor = if rng.next_f64() < 0.5 {
                0.3 + 0.65 * rng.next_f64()
            } else {
                1.05 + 0.65 * rng.next_f64()
            };
            let mut cost = CostModel {
                t_m,
                t_w,
                cpu_gpu_bandwidth: 1.0, // placeholder until the budget is known
                lan_bandwidth,
                lan_latency,
                serialize_overhead,
                shadow_layer_time: 0.1 * t_m,
                prefill_alpha: 0.2,
            };
            let budget =
                max_load_budget(effective_main_time(&cost, 16), t_w, cluster.num_groups()).unwrap();
            cost.cpu_gpu_bandwidth = bytes as f64 / (factor * budget);

            let report =
                bottleneck_report(&cluster, &cost, &config, BudgetInterpretation::NumGroups)
                    .unwrap();
            assert_eq!(report.bottlenecked, factor > 1.0, "round {round}");

            let result = run_decode_sim(
                &model,
                &[9, 4, 21],
                6,
                &cluster,
                &cost,
                &PrefetchMode::Shadow { bits: None, policy: crate::sep::AlignmentPolicy::never() },
                0,
                0.0,
            )
            .unwrap();
            let steady: f64 =
                result.trace.stall_by_layer().values().map(|(_, steady)| steady).sum();
            assert_eq!(
                steady > 0.0,
                report.bottlenecked,
                "round {round}: steady stall {steady} vs report {report:?}"
            );
            if report.bottlenecked {
                bottlenecked_seen += 1;
            }
        }
        assert!(bottlenecked_seen >= 30, "sweep should exercise both verdicts");
    }

    #[test]
    fn summary_csv_is_stable_and_escapes_keys() {
        let row_a = SummaryRow {
            tokens_per_s_decode: 16.75,
            ttft_s: 0.033203125,
            total_stall_s: 0.0,
            mispredict_count: 0.0,
            recall_overall: 1.0,
        };
        let row_b = SummaryRow {
            tokens_per_s_decode: 15.5,
            ttft_s: 0.04,
            total_stall_s: 0.001953125,
            mispredict_count: 3.0,
            recall_overall: 0.875,
        };
        let rows = vec![
            (vec!["1".to_string(), "a,b".to_string()], row_a),
            (vec!["2".to_string(), "plain".to_string()], row_b),
        ];
        let mut first = Vec::new();
        write_summary_csv(&mut first, &["case", "label"], &rows).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "case,label,tokens_per_s_decode,ttft_s,total_stall_s,mispredict_count,recall_overall"
        );
        assert_eq!(lines.next().unwrap(), "1,\"a,b\",16.75,0.033203125,0,0,1");
        assert_eq!(lines.next().unwrap(), "2,plain,15.5,0.04,0.001953125,3,0.875");
        let mut second = Vec::new();
        write_summary_csv(&mut second, &["case", "label"], &rows).unwrap();
        assert_eq!(first, second, "identical inputs must print identical bytes");

        let bad = vec![(vec!["only-one".to_string()], rows[0].1.clone())];
        assert!(write_summary_csv(&mut Vec::new(), &["case", "label"], &bad).is_err());
    }

    #[test]
    fn summary_row_pulls_from_speed_and_recall() {
        let (model, cluster, cost) = sim_fixture();
        let result = run_decode_sim(
            &model,
            &[5, 9, 2],
            5,
            &cluster,
            &cost,
            &PrefetchMode::Shadow { bits: None, policy: crate::sep::AlignmentPolicy::never() },
            0,
            0.0,
        )
        .unwrap();
        let speed = speed_report(&result.trace).unwrap();
        let recall = compute_recall(&result.records, 2, 4).unwrap();
        let row = SummaryRow::from_parts(&speed, &recall);
        assert_eq!(row.tokens_per_s_decode, speed.decode_tokens_per_s);
        assert_eq!(row.ttft_s, speed.ttft_s);
        assert_eq!(row.recall_overall, recall.overall);
    }
}
