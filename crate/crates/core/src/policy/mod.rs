//! Deadlines and request prioritisation.
//!
//! Every policy maps a queued request to a [`PriorityKey`]; the prefill
//! selector serves keys in ascending order. Baselines use a single term
//! (arrival, deadline, prompt length, remaining prompt); the hybrid policy
//! adds `alpha` times the predicted remaining work to the SLO deadline, which
//! reduces to EDF at `alpha = 0` and approaches SRPF as `alpha` grows.

mod deadline;
mod history;
mod priority;

pub use deadline::{completion_deadline, first_token_deadline, slo_deadline, token_deadline};
pub use history::{DecodeHistory, HistoryPrior, DEFAULT_MIN_SAMPLES};
pub use priority::{
    baseline_priority, estimate_decode_rem, estimate_decode_tokens, hybrid_priority,
    prefill_rem_time, remaining_work, srpf_alpha_threshold, JobProgress, Policy, PriorityKey,
};
