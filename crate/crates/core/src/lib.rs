//! Frameless slotted ALOHA with joint estimation of the contending user
//! count and successive-interference-cancellation contention resolution.
//!
//! The protocol runs in rounds of slots. Users transmit probabilistically;
//! the base station only observes whether each slot was idle, a singleton,
//! or a collision. An initial round sweeps the access probability down a
//! geometric ramp to expose the collision-to-idle transient from which the
//! population size is estimated by maximum likelihood; subsequent rounds
//! hold the probability at a fixed expected slot degree and resolve users
//! by peeling the user-slot contention graph, refining the estimate as
//! they go. Round lengths are adaptive and the protocol ends once the
//! estimate agrees with the resolved count.
//!
//! The crate ships the protocol library, a Monte-Carlo batch runner with
//! reproducible seeding, and metric aggregation (normalized estimation
//! RMSE, initial-round length, throughput).

pub mod channel;
pub mod cli;
pub mod estimator;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod schedule;
pub mod sic;

pub use channel::{classify, simulate_slot, SlotClass, SlotRecord, UserPopulation};
pub use estimator::{
    grid_argmax_oracle, mle_estimate, mle_estimate_tol, score_term, slot_log_pmf, total_score,
    EstimateBounds, EstimatorError, MleEstimate, MleStatus, Observation, ObservationLog,
};
pub use metrics::{
    bootstrap_rmse_ci, bootstrap_throughput_ci, emit_report, mean_initial_round_slots_over_n,
    paired_throughput_diff_ci, parse_report_json, rmse_by_round, throughput, unresolved_rate,
    MetricReport, MetricsError, ReportFormat, RunBatch, CSV_HEADER,
};
pub use protocol::{
    check_final_designation, run_initial_round, run_protocol, run_protocol_traced,
    run_subsequent_round, ProtocolParams, ProtocolTrace, RoundOutcome, SlotTraceRecorder,
    TerminationReason, UpdatePolicy, MAX_ROUNDS,
};
pub use rng::{derive_seed, RngStream};
pub use schedule::{
    collision_floor_p0, collision_prob, initial_round_prob, subsequent_round_prob, ScheduleError,
    ScheduleParams,
};
pub use sic::{ContentionGraph, GraphError, SicMode};
