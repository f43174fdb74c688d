//! Python bindings: protocol parameters, single runs, seeded batches, and
//! the estimator primitives, exposed as an in-process extension module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use frameless_aloha::channel::{classify, SlotClass, SlotRecord};
use frameless_aloha::cli::run_cell;
use frameless_aloha::estimator::{
    grid_argmax_oracle, mle_estimate, EstimateBounds, MleStatus, Observation, ObservationLog,
};
use frameless_aloha::metrics::{
    emit_report, rmse_by_round, throughput, unresolved_rate, MetricReport, ReportFormat, RunBatch,
};
use frameless_aloha::protocol::{
    run_protocol as core_run_protocol, ProtocolParams, ProtocolTrace, UpdatePolicy,
};
use frameless_aloha::rng::derive_seed as core_derive_seed;
use frameless_aloha::schedule::{
    collision_floor_p0 as core_collision_floor_p0, initial_round_prob, subsequent_round_prob,
    ScheduleParams,
};
use frameless_aloha::sic::{ContentionGraph, SicMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_class(name: &str) -> PyResult<SlotClass> {
    match name {
        "idle" => Ok(SlotClass::Idle),
        "singleton" => Ok(SlotClass::Singleton),
        "collision" => Ok(SlotClass::Collision),
        other => Err(value_err(format!(
            "unknown slot class '{other}' (expected idle|singleton|collision)"
        ))),
    }
}

fn parse_policy(name: &str) -> PyResult<UpdatePolicy> {
    match name {
        "per-round" => Ok(UpdatePolicy::PerRound),
        "mid-round" => Ok(UpdatePolicy::MidRound),
        "per-slot" => Ok(UpdatePolicy::PerSlot),
        other => Err(value_err(format!(
            "unknown update policy '{other}' (expected per-round|mid-round|per-slot)"
        ))),
    }
}

fn parse_mode(name: &str) -> PyResult<SicMode> {
    match name {
        "backtrack" => Ok(SicMode::Backtrack),
        "no-backtrack" => Ok(SicMode::NoBacktrack),
        other => Err(value_err(format!(
            "unknown SIC mode '{other}' (expected backtrack|no-backtrack)"
        ))),
    }
}

fn build_log(observations: Vec<(String, f64, u32)>) -> PyResult<ObservationLog> {
    let mut log = ObservationLog::new();
    for (class, p, resolved_before) in observations {
        if !(p > 0.0) {
            return Err(value_err(format!("access probability {p} must be positive")));
        }
        log.push(Observation {
            class: parse_class(&class)?,
            access_prob: p,
            resolved_before,
        });
    }
    Ok(log)
}

/// Protocol tunables with the reference operating point as defaults.
#[pyclass(name = "Params")]
#[derive(Clone)]
struct PyParams {
    inner: ProtocolParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (
        p0 = 0.047,
        alpha = 1.02,
        beta = 2.9,
        n_min = 100,
        target_collision_prob = 0.95,
        k_idle = 6,
        gamma = 0.8,
        update_policy = "mid-round",
        sic_mode = "backtrack",
        degree_cap = 10,
        n_max_bound = 10_000,
        round_slot_cap_factor = 2.0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        p0: f64,
        alpha: f64,
        beta: f64,
        n_min: u32,
        target_collision_prob: f64,
        k_idle: u32,
        gamma: f64,
        update_policy: &str,
        sic_mode: &str,
        degree_cap: u32,
        n_max_bound: u32,
        round_slot_cap_factor: f64,
    ) -> PyResult<Self> {
        let schedule = ScheduleParams::new(p0, alpha, beta, n_min, target_collision_prob)
            .map_err(value_err)?;
        let inner = ProtocolParams::new(
            schedule,
            k_idle,
            gamma,
            parse_policy(update_policy)?,
            parse_mode(sic_mode)?,
            degree_cap,
            n_max_bound,
            round_slot_cap_factor,
        )
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Access probability for slot j (1-based) of the initial round.
    fn initial_round_prob(&self, j: u32) -> PyResult<f64> {
        if j < 1 {
            return Err(value_err("slot index is 1-based"));
        }
        Ok(initial_round_prob(j, &self.inner.schedule))
    }

    /// Constant access probability for a round with the given estimated
    /// contender count.
    fn subsequent_round_prob(&self, n_hat_contending: f64) -> PyResult<f64> {
        subsequent_round_prob(n_hat_contending, &self.inner.schedule).map_err(value_err)
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.inner.schedule.p0
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.schedule.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.schedule.beta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn k_idle(&self) -> u32 {
        self.inner.k_idle
    }

    #[getter]
    fn degree_cap(&self) -> u32 {
        self.inner.degree_cap
    }

    #[getter]
    fn update_policy(&self) -> &'static str {
        self.inner.update_policy.as_str()
    }

    #[getter]
    fn sic_mode(&self) -> &'static str {
        self.inner.sic_mode.as_str()
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(p0={}, alpha={}, beta={}, gamma={}, k_idle={}, update_policy='{}', sic_mode='{}')",
            self.p0(),
            self.alpha(),
            self.beta(),
            self.gamma(),
            self.k_idle(),
            self.update_policy(),
            self.sic_mode()
        )
    }
}

/// Immutable record of one protocol run.
#[pyclass(name = "Trace")]
struct PyTrace {
    inner: ProtocolTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn true_n(&self) -> u32 {
        self.inner.true_n
    }

    #[getter]
    fn total_slots(&self) -> u64 {
        self.inner.total_slots
    }

    #[getter]
    fn final_estimate(&self) -> f64 {
        self.inner.final_estimate
    }

    #[getter]
    fn unresolved(&self) -> u32 {
        self.inner.unresolved_at_end
    }

    #[getter]
    fn safety_cap_hit(&self) -> bool {
        self.inner.safety_cap_hit
    }

    /// Per-round tuples
    /// (round_index, slots_used, resolved_in_round, estimate, reason).
    fn rounds(&self) -> Vec<(u32, u64, u32, f64, &'static str)> {
        self.inner
            .rounds
            .iter()
            .map(|r| {
                (
                    r.round_index,
                    r.slots_used,
                    r.resolved_in_round,
                    r.estimate_at_end,
                    r.termination_reason.as_str(),
                )
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(true_n={}, rounds={}, total_slots={}, unresolved={})",
            self.inner.true_n,
            self.inner.rounds.len(),
            self.inner.total_slots,
            self.inner.unresolved_at_end
        )
    }
}

/// Aggregated traces of one parameter cell.
#[pyclass(name = "Batch")]
struct PyBatch {
    inner: RunBatch,
}

#[pymethods]
impl PyBatch {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Throughput over the traces that resolved every user.
    fn throughput(&self) -> PyResult<f64> {
        throughput(&self.inner).map_err(value_err)
    }

    fn rmse_by_round(&self) -> Vec<f64> {
        rmse_by_round(&self.inner)
    }

    fn unresolved_rate(&self) -> f64 {
        unresolved_rate(&self.inner)
    }

    #[pyo3(signature = (format = "json", bootstrap_resamples = 1000, ci_seed = 0))]
    fn report(&self, format: &str, bootstrap_resamples: usize, ci_seed: u64) -> PyResult<String> {
        let fmt = match format {
            "csv" => ReportFormat::Csv,
            "json" => ReportFormat::Json,
            other => return Err(value_err(format!("unknown format '{other}'"))),
        };
        let report = MetricReport::from_batch(&self.inner, bootstrap_resamples, ci_seed)
            .map_err(value_err)?;
        Ok(String::from_utf8(emit_report(&report, fmt)).expect("reports are utf-8"))
    }
}

/// User-slot contention graph running successive interference
/// cancellation as peeling.
#[pyclass(name = "Graph")]
struct PyGraph {
    inner: ContentionGraph,
    slot_serial: u32,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (n_users, degree_cap = 10))]
    fn new(n_users: u32, degree_cap: u32) -> Self {
        Self {
            inner: ContentionGraph::new(n_users, degree_cap),
            slot_serial: 0,
        }
    }

    /// Adds a slot with the given contributing users and peels to the
    /// fixed point; returns the users resolved by this call.
    fn add_slot(&mut self, contributors: Vec<u32>) -> PyResult<Vec<u32>> {
        self.slot_serial += 1;
        let record = SlotRecord {
            round_index: 0,
            slot_index: self.slot_serial,
            access_prob: 0.5,
            observation: classify(contributors.len()),
            contributors,
        };
        self.inner.add_slot(&record).map_err(value_err)?;
        Ok(self.inner.peel())
    }

    fn peel(&mut self) -> Vec<u32> {
        self.inner.peel()
    }

    fn reset_for_round(&mut self, mode: &str) -> PyResult<()> {
        self.inner.reset_for_round(parse_mode(mode)?);
        Ok(())
    }

    #[getter]
    fn resolved_count(&self) -> u32 {
        self.inner.resolved_count()
    }

    fn is_resolved(&self, user: u32) -> bool {
        self.inner.is_resolved(user)
    }
}

/// Smallest first-round access probability whose collision probability at
/// `n_min` contenders reaches `target_collision_prob`.
#[pyfunction]
fn collision_floor_p0(n_min: u32, target_collision_prob: f64) -> PyResult<f64> {
    core_collision_floor_p0(n_min, target_collision_prob).map_err(value_err)
}

/// Deterministic per-repeat seed derivation from a master seed.
#[pyfunction]
fn derive_seed(master_seed: u64, n: u64, alpha_index: u64, repeat_index: u64) -> u64 {
    core_derive_seed(master_seed, n, alpha_index, repeat_index)
}

/// Log-probability of a slot class at access probability `p` with
/// `n_contending` contenders.
#[pyfunction]
fn slot_log_pmf(class: &str, p: f64, n_contending: f64) -> PyResult<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(value_err(format!("p {p} must lie in (0, 1)")));
    }
    Ok(frameless_aloha::estimator::slot_log_pmf(
        parse_class(class)?,
        p,
        n_contending,
    ))
}

/// Derivative of the slot log-pmf in the population size.
#[pyfunction]
fn score_term(class: &str, p: f64, n_contending: f64) -> PyResult<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(value_err(format!("p {p} must lie in (0, 1)")));
    }
    frameless_aloha::estimator::score_term(parse_class(class)?, p, n_contending).map_err(value_err)
}

/// Maximum-likelihood population estimate from observation triples
/// (class, access_prob, resolved_before). Returns (estimate, status) with
/// status one of "root", "saturated-low", "saturated-high".
#[pyfunction]
fn mle_estimate_from_observations(
    observations: Vec<(String, f64, u32)>,
    n_lower: f64,
    n_upper: f64,
) -> PyResult<(f64, &'static str)> {
    let log = build_log(observations)?;
    let bounds = EstimateBounds::new(n_lower, n_upper).map_err(value_err)?;
    let est = mle_estimate(&log, &bounds).map_err(value_err)?;
    let status = match est.status {
        MleStatus::Root => "root",
        MleStatus::SaturatedLow => "saturated-low",
        MleStatus::SaturatedHigh => "saturated-high",
    };
    Ok((est.value, status))
}

/// Integer-grid argmax of the summed log-likelihood over [n_lo, n_hi].
#[pyfunction]
fn grid_argmax(observations: Vec<(String, f64, u32)>, n_lo: i64, n_hi: i64) -> PyResult<i64> {
    if n_lo >= n_hi {
        return Err(value_err("need n_lo < n_hi"));
    }
    let log = build_log(observations)?;
    Ok(grid_argmax_oracle(&log, n_lo, n_hi))
}

/// Runs the whole protocol once.
#[pyfunction]
fn run_protocol(true_n: u32, params: &PyParams, seed: u64) -> PyResult<PyTrace> {
    if true_n < 1 || true_n > params.inner.n_max_bound {
        return Err(value_err(format!(
            "true_n {true_n} outside [1, {}]",
            params.inner.n_max_bound
        )));
    }
    Ok(PyTrace {
        inner: core_run_protocol(true_n, &params.inner, seed),
    })
}

/// Runs independent repeats with the given seeds and returns the batch.
#[pyfunction]
#[pyo3(signature = (true_n, params, seeds, jobs = 1))]
fn run_batch(true_n: u32, params: &PyParams, seeds: Vec<u64>, jobs: usize) -> PyResult<PyBatch> {
    if true_n < 1 || true_n > params.inner.n_max_bound {
        return Err(value_err(format!(
            "true_n {true_n} outside [1, {}]",
            params.inner.n_max_bound
        )));
    }
    if seeds.is_empty() {
        return Err(value_err("need at least one seed"));
    }
    let traces = run_cell(true_n, &params.inner, &seeds, jobs.max(1));
    let batch = RunBatch::new(true_n, seeds[0], traces).map_err(value_err)?;
    Ok(PyBatch { inner: batch })
}

#[pymodule]
fn frameless_aloha_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyBatch>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(collision_floor_p0, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(slot_log_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(score_term, m)?)?;
    m.add_function(wrap_pyfunction!(mle_estimate_from_observations, m)?)?;
    m.add_function(wrap_pyfunction!(grid_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    Ok(())
}
