//! Gradient descent with the increasing schedule, the constant-step baseline,
//! Adaptive SGD and its block-doubling variant.

mod block;
mod gd;
mod sgd;
mod stats;
mod trace;

pub use block::{block_length, make_block_plan, run_block_sgd, Block, BlockOptions, BlockPlan, BlockRun, EvalPolicy};
pub use gd::{run_gd_constant, run_gd_schedule, GdRun, DIVERGENCE_LOSS, INVARIANT_SLACK, MONOTONE_SLACK};
pub use sgd::{
    default_cap, montecarlo_sgd, run_adaptive_sgd, run_adaptive_sgd_observed, sgd_expectation_bound,
    DriftAudit, DriftReport, MonteCarloRun, NoObserver, SgdObserver, SgdOptions, SgdRun, SgdStep,
    PATHWISE_SLACK,
};
pub use stats::{HitTime, HittingRow, HittingStats};
pub use trace::{read_trace_csv, RunTrace, TraceRecord};
