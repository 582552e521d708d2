//! Discrete-event engine, metrics and capacity search.

mod capacity;
mod engine;
mod report;

pub use capacity::{
    capacity_search, gpus_required, CapacityBounds, CapacityPlan, CapacityResult, Probe,
};
pub use engine::{
    run, simulate, simulate_bounded, Bounded, Deployment, Dispatch, RawRun, SiloGroup, SimConfig,
    TraceSource,
};
pub use report::{
    compute_report, judge, long_prompt_threshold, nearest_rank, GroupStats, Percentiles,
    RequestRecord, SimReport, Summary, ViolationKind,
};
