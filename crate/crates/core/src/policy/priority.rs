use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::deadline::slo_deadline;
use super::history::DecodeHistory;
use crate::cost_model::CostProfile;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::workload::{RequestId, RequestInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Fcfs,
    Edf,
    Sjf,
    Srpf,
    Niyama,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Fcfs,
        Policy::Edf,
        Policy::Sjf,
        Policy::Srpf,
        Policy::Niyama,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Fcfs => "fcfs",
            Policy::Edf => "edf",
            Policy::Sjf => "sjf",
            Policy::Srpf => "srpf",
            Policy::Niyama => "niyama",
        }
    }

    /// Whether keys move as prefill progresses or history accumulates.
    pub fn is_dynamic(self) -> bool {
        matches!(self, Policy::Srpf | Policy::Niyama)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown policy `{s}` (expected fcfs|edf|sjf|srpf|niyama)"
                ))
            })
    }
}

/// How far a request has progressed; the only mutable input to a key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JobProgress {
    pub prefill_done: u32,
    pub decoded: u32,
}

impl JobProgress {
    pub fn prefill_remaining<S>(&self, req: &RequestInfo<S>) -> u32 {
        req.prompt_tokens.saturating_sub(self.prefill_done)
    }
}

/// Lower is more urgent; ties break on arrival, then id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityKey<S = f64> {
    pub value: S,
    pub t_arrival: S,
    pub id: RequestId,
}

impl<S: Scalar> PriorityKey<S> {
    fn of(req: &RequestInfo<S>, value: S) -> Self {
        PriorityKey {
            value,
            t_arrival: req.t_arrival,
            id: req.id,
        }
    }
}

impl<S: Scalar> Eq for PriorityKey<S> {}

impl<S: Scalar> Ord for PriorityKey<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_order(&other.value)
            .then_with(|| self.t_arrival.total_order(&other.t_arrival))
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl<S: Scalar> PartialOrd for PriorityKey<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Predicted time to prefill what is left of the prompt on an idle replica.
pub fn prefill_rem_time<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    profile: &CostProfile<S>,
) -> S {
    profile.prefill_time_alone(progress.prefill_remaining(req))
}

/// Remaining decode tokens, over-approximated as `mean + 2 std` of the
/// application's history minus what has been produced, floored at zero.
pub fn estimate_decode_tokens<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    history: &DecodeHistory<S>,
) -> S {
    let (mean, std) = history.estimate(req.app_id);
    (mean + S::lit(2.0) * std - S::tokens(progress.decoded as u64)).max(S::zero())
}

/// [`estimate_decode_tokens`] converted to time at the lone decode-step rate.
pub fn estimate_decode_rem<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    history: &DecodeHistory<S>,
    profile: &CostProfile<S>,
) -> S {
    let tokens = estimate_decode_tokens(req, progress, history);
    tokens * profile.decode_token_time(req.prompt_tokens + progress.decoded)
}

/// The work term the hybrid key scales by `alpha`: remaining prefill for
/// interactive requests, remaining prefill plus estimated decode otherwise.
pub fn remaining_work<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    history: &DecodeHistory<S>,
    profile: &CostProfile<S>,
) -> S {
    let prefill = prefill_rem_time(req, progress, profile);
    if req.qos.is_interactive() {
        prefill
    } else {
        prefill + estimate_decode_rem(req, progress, history, profile)
    }
}

/// `deadline + alpha * remaining_work`.
pub fn hybrid_priority<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    alpha: S,
    history: &DecodeHistory<S>,
    profile: &CostProfile<S>,
) -> Result<PriorityKey<S>> {
    if !(alpha >= S::zero()) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let value = if alpha == S::zero() {
        slo_deadline(req)
    } else {
        slo_deadline(req) + alpha * remaining_work(req, progress, history, profile)
    };
    Ok(PriorityKey::of(req, value))
}

pub fn baseline_priority<S: Scalar>(
    req: &RequestInfo<S>,
    progress: JobProgress,
    policy: Policy,
) -> Result<PriorityKey<S>> {
    let value = match policy {
        Policy::Fcfs => req.t_arrival,
        Policy::Edf => slo_deadline(req),
        Policy::Sjf => S::tokens(req.prompt_tokens as u64),
        Policy::Srpf => S::tokens(progress.prefill_remaining(req) as u64),
        Policy::Niyama => return Err(Error::Config("niyama is not a baseline policy".into())),
    };
    Ok(PriorityKey::of(req, value))
}

/// Smallest `alpha` above which hybrid ordering is ordering by remaining
/// work: the largest deadline spread over the smallest positive work gap.
/// `None` when fewer than two distinct work values exist.
pub fn srpf_alpha_threshold<S: Scalar>(deadline_and_work: &[(S, S)]) -> Option<S> {
    let mut works: Vec<S> = deadline_and_work.iter().map(|&(_, w)| w).collect();
    works.sort_by(|a, b| a.total_order(b));
    let min_gap = works
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > S::zero())
        .min_by(|a, b| a.total_order(b))?;
    let lo = deadline_and_work
        .iter()
        .map(|p| p.0)
        .min_by(|a, b| a.total_order(b))?;
    let hi = deadline_and_work
        .iter()
        .map(|p| p.0)
        .max_by(|a, b| a.total_order(b))?;
    Some((hi - lo) / min_gap)
}
