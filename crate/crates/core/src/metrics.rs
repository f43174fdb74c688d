//! Aggregation of repeated runs into the protocol figures of merit:
//! normalized estimation RMSE per round, normalized initial-round length,
//! and throughput.

use thiserror::Error;

use crate::protocol::ProtocolTrace;
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("trace {index} has population {found}, batch expects {expected}")]
    MixedBatch {
        index: usize,
        found: u32,
        expected: u32,
    },
    #[error("no trace in the batch resolved all users")]
    NoCompletedTraces,
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
}

/// Traces from independent repeats of one parameter cell.
#[derive(Debug, Clone)]
pub struct RunBatch {
    n_true: u32,
    master_seed: u64,
    traces: Vec<ProtocolTrace>,
}

impl RunBatch {
    pub fn new(
        n_true: u32,
        master_seed: u64,
        traces: Vec<ProtocolTrace>,
    ) -> Result<Self, MetricsError> {
        if traces.is_empty() {
            return Err(MetricsError::EmptyBatch);
        }
        for (index, trace) in traces.iter().enumerate() {
            if trace.true_n != n_true {
                return Err(MetricsError::MixedBatch {
                    index,
                    found: trace.true_n,
                    expected: n_true,
                });
            }
        }
        Ok(Self {
            n_true,
            master_seed,
            traces,
        })
    }

    pub fn n_true(&self) -> u32 {
        self.n_true
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn traces(&self) -> &[ProtocolTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Total slot counts of the traces that resolved every user; only
    /// these enter the throughput, the rest surface in `unresolved_rate`.
    fn completed_slot_counts(&self) -> Vec<f64> {
        self.traces
            .iter()
            .filter(|t| t.unresolved_at_end == 0)
            .map(|t| t.total_slots as f64)
            .collect()
    }
}

/// Throughput `T = N / mean(total slots)` over the traces that resolved
/// every user. Traces with leftover users are excluded here and counted
/// by [`unresolved_rate`].
pub fn throughput(batch: &RunBatch) -> Result<f64, MetricsError> {
    let slots = batch.completed_slot_counts();
    if slots.is_empty() {
        return Err(MetricsError::NoCompletedTraces);
    }
    let mean = slots.iter().sum::<f64>() / slots.len() as f64;
    Ok(batch.n_true as f64 / mean)
}

/// Number of traces excluded from the throughput for ending with
/// unresolved users.
pub fn excluded_trace_count(batch: &RunBatch) -> usize {
    batch
        .traces
        .iter()
        .filter(|t| t.unresolved_at_end > 0)
        .count()
}

/// Fraction of traces that ended with unresolved users.
pub fn unresolved_rate(batch: &RunBatch) -> f64 {
    excluded_trace_count(batch) as f64 / batch.len() as f64
}

/// Normalized estimation RMSE per round index (1-based): for every round
/// present in at least 90% of the traces,
/// `sqrt(mean((estimate_r - N)^2)) / N` over the traces that have it.
pub fn rmse_by_round(batch: &RunBatch) -> Vec<f64> {
    let n = batch.n_true as f64;
    let threshold = (0.9 * batch.len() as f64).ceil() as usize;
    let mut out = Vec::new();
    for round in 0.. {
        let errors: Vec<f64> = batch
            .traces
            .iter()
            .filter_map(|t| t.rounds.get(round))
            .map(|r| (r.estimate_at_end - n) / n)
            .collect();
        if errors.len() < threshold.max(1) {
            break;
        }
        let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
        out.push(mean_sq.sqrt());
    }
    out
}

/// Mean initial-round length in slots, normalized by the population size.
pub fn mean_initial_round_slots_over_n(batch: &RunBatch) -> f64 {
    let total: f64 = batch
        .traces
        .iter()
        .map(|t| t.rounds[0].slots_used as f64)
        .sum();
    total / (batch.len() as f64 * batch.n_true as f64)
}

/// Mean estimate after the initial round.
pub fn initial_estimate_mean(batch: &RunBatch) -> f64 {
    let total: f64 = batch
        .traces
        .iter()
        .map(|t| t.rounds[0].estimate_at_end)
        .sum();
    total / batch.len() as f64
}

/// Percentile pair from a sorted sample: the (2.5%, 97.5%) order
/// statistics by index truncation.
fn percentile_95(mut samples: Vec<f64>) -> (f64, f64) {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN bootstrap samples"));
    let n = samples.len();
    let lo = samples[((0.025 * n as f64) as usize).min(n - 1)];
    let hi = samples[((0.975 * n as f64) as usize).min(n - 1)];
    (lo, hi)
}

/// Bootstrap 95% confidence interval for the throughput: traces are
/// resampled with replacement `resamples` times with a seeded stream, so
/// the interval is deterministic for a given batch and seed.
pub fn bootstrap_throughput_ci(
    batch: &RunBatch,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), MetricsError> {
    let slots = batch.completed_slot_counts();
    if slots.is_empty() {
        return Err(MetricsError::NoCompletedTraces);
    }
    let mut rng = RngStream::new(seed);
    let n = batch.n_true as f64;
    let stats = (0..resamples)
        .map(|_| {
            let mean = (0..slots.len())
                .map(|_| slots[rng.below(slots.len() as u64) as usize])
                .sum::<f64>()
                / slots.len() as f64;
            n / mean
        })
        .collect();
    Ok(percentile_95(stats))
}

/// Bootstrap 95% confidence interval for the normalized RMSE of one round
/// (1-based index), over the traces that reached it.
pub fn bootstrap_rmse_ci(
    batch: &RunBatch,
    round: u32,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), MetricsError> {
    let n = batch.n_true as f64;
    let errors: Vec<f64> = batch
        .traces
        .iter()
        .filter_map(|t| t.rounds.get(round as usize - 1))
        .map(|r| (r.estimate_at_end - n) / n)
        .collect();
    if errors.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut rng = RngStream::new(seed);
    let stats = (0..resamples)
        .map(|_| {
            let mean_sq = (0..errors.len())
                .map(|_| {
                    let e = errors[rng.below(errors.len() as u64) as usize];
                    e * e
                })
                .sum::<f64>()
                / errors.len() as f64;
            mean_sq.sqrt()
        })
        .collect();
    Ok(percentile_95(stats))
}

/// Bootstrap 95% confidence interval for the throughput difference
/// `T(a) - T(b)` between two batches run on paired seeds. Pairs are
/// resampled jointly; pairs where either trace left users unresolved are
/// dropped.
pub fn paired_throughput_diff_ci(
    a: &RunBatch,
    b: &RunBatch,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::MixedBatch {
            index: 0,
            found: b.len() as u32,
            expected: a.len() as u32,
        });
    }
    let pairs: Vec<(f64, f64)> = a
        .traces
        .iter()
        .zip(&b.traces)
        .filter(|(ta, tb)| ta.unresolved_at_end == 0 && tb.unresolved_at_end == 0)
        .map(|(ta, tb)| (ta.total_slots as f64, tb.total_slots as f64))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::NoCompletedTraces);
    }
    let mut rng = RngStream::new(seed);
    let n_a = a.n_true as f64;
    let n_b = b.n_true as f64;
    let stats = (0..resamples)
        .map(|_| {
            let (mut sum_a, mut sum_b) = (0.0, 0.0);
            for _ in 0..pairs.len() {
                let (sa, sb) = pairs[rng.below(pairs.len() as u64) as usize];
                sum_a += sa;
                sum_b += sb;
            }
            let count = pairs.len() as f64;
            n_a / (sum_a / count) - n_b / (sum_b / count)
        })
        .collect();
    Ok(percentile_95(stats))
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Fixed CSV schema; one row per round index of `rmse_norm`, scalar
/// columns repeated on every row.
pub const CSV_HEADER: &str =
    "n_true,repeats,round,rmse_norm,mean_m1_over_n,throughput,throughput_ci_lo,throughput_ci_hi,unresolved_rate";

/// Formats with 9 significant digits; the canonical float form in every
/// emitted report.
fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rounds to the canonical 9-significant-digit form, so emitting and
/// re-parsing a report is lossless.
fn canon9(x: f64) -> f64 {
    fmt_sig9(x).parse().expect("canonical float form re-parses")
}

/// Aggregated figures of merit for one batch. All floats are stored in
/// canonical 9-significant-digit form and must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub n_true: u32,
    pub repeats: u32,
    pub rmse_by_round: Vec<f64>,
    pub mean_m1_over_n: f64,
    pub throughput: f64,
    pub throughput_ci_lo: f64,
    pub throughput_ci_hi: f64,
    pub unresolved_rate: f64,
    pub estimate_mean: f64,
}

impl MetricReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_true: u32,
        repeats: u32,
        rmse: Vec<f64>,
        mean_m1_over_n: f64,
        throughput: f64,
        throughput_ci_lo: f64,
        throughput_ci_hi: f64,
        unresolved_rate: f64,
        estimate_mean: f64,
    ) -> Result<Self, MetricsError> {
        let check = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(MetricsError::NonFinite(name))
            }
        };
        for &v in &rmse {
            check("rmse_norm", v)?;
        }
        Ok(Self {
            n_true,
            repeats,
            rmse_by_round: rmse.into_iter().map(canon9).collect(),
            mean_m1_over_n: canon9(check("mean_m1_over_n", mean_m1_over_n)?),
            throughput: canon9(check("throughput", throughput)?),
            throughput_ci_lo: canon9(check("throughput_ci_lo", throughput_ci_lo)?),
            throughput_ci_hi: canon9(check("throughput_ci_hi", throughput_ci_hi)?),
            unresolved_rate: canon9(check("unresolved_rate", unresolved_rate)?),
            estimate_mean: canon9(check("estimate_mean", estimate_mean)?),
        })
    }

    /// Builds the full report for a batch, including the bootstrap
    /// throughput interval (seeded deterministically by `ci_seed`).
    pub fn from_batch(
        batch: &RunBatch,
        bootstrap_resamples: usize,
        ci_seed: u64,
    ) -> Result<Self, MetricsError> {
        let t = throughput(batch)?;
        let (lo, hi) = bootstrap_throughput_ci(batch, bootstrap_resamples, ci_seed)?;
        Self::new(
            batch.n_true(),
            batch.len() as u32,
            rmse_by_round(batch),
            mean_initial_round_slots_over_n(batch),
            t,
            lo,
            hi,
            unresolved_rate(batch),
            initial_estimate_mean(batch),
        )
    }
}

/// Serializes a report. Field ordering, float formatting, and line
/// endings are fixed, so equal reports produce identical bytes.
pub fn emit_report(report: &MetricReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str(CSV_HEADER);
            out.push('\n');
            for (i, rmse) in report.rmse_by_round.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    report.n_true,
                    report.repeats,
                    i + 1,
                    fmt_sig9(*rmse),
                    fmt_sig9(report.mean_m1_over_n),
                    fmt_sig9(report.throughput),
                    fmt_sig9(report.throughput_ci_lo),
                    fmt_sig9(report.throughput_ci_hi),
                    fmt_sig9(report.unresolved_rate),
                ));
            }
            out.into_bytes()
        }
        ReportFormat::Json => {
            let rmse = report
                .rmse_by_round
                .iter()
                .map(|v| fmt_sig9(*v))
                .collect::<Vec<_>>()
                .join(",");
            format!(
                concat!(
                    "{{\"n_true\":{},\"repeats\":{},\"rmse_norm\":[{}],",
                    "\"mean_m1_over_n\":{},\"throughput\":{},",
                    "\"throughput_ci_lo\":{},\"throughput_ci_hi\":{},",
                    "\"unresolved_rate\":{},\"estimate_mean\":{}}}\n"
                ),
                report.n_true,
                report.repeats,
                rmse,
                fmt_sig9(report.mean_m1_over_n),
                fmt_sig9(report.throughput),
                fmt_sig9(report.throughput_ci_lo),
                fmt_sig9(report.throughput_ci_hi),
                fmt_sig9(report.unresolved_rate),
                fmt_sig9(report.estimate_mean),
            )
            .into_bytes()
        }
    }
}

/// Parses a JSON report emitted by [`emit_report`] back into an equal
/// [`MetricReport`].
pub fn parse_report_json(bytes: &[u8]) -> Result<MetricReport, MetricsError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|_| MetricsError::NonFinite("json"))?;
    let get = |name: &'static str| -> Result<f64, MetricsError> {
        value
            .get(name)
            .and_then(|v| v.as_f64())
            .ok_or(MetricsError::NonFinite(name))
    };
    let rmse = value
        .get("rmse_norm")
        .and_then(|v| v.as_array())
        .ok_or(MetricsError::NonFinite("rmse_norm"))?
        .iter()
        .map(|v| v.as_f64().ok_or(MetricsError::NonFinite("rmse_norm")))
        .collect::<Result<Vec<_>, _>>()?;
    MetricReport::new(
        get("n_true")? as u32,
        get("repeats")? as u32,
        rmse,
        get("mean_m1_over_n")?,
        get("throughput")?,
        get("throughput_ci_lo")?,
        get("throughput_ci_hi")?,
        get("unresolved_rate")?,
        get("estimate_mean")?,
    )
}
