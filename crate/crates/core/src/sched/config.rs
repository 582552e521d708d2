use serde::{Deserialize, Serialize};

use crate::cost_model::CostProfile;
use crate::error::{Error, Result};
use crate::policy::{HistoryPrior, Policy};

/// Load-triggered switch between the nominal `alpha` and `alpha_high`.
///
/// The trigger compares the work offered over the trailing window, measured
/// in seconds of replica time at the largest chunk, with the window length.
/// With `capacity_qps` set, the request arrival rate is compared with that
/// figure instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveAlpha {
    pub alpha_high: f64,
    pub window_s: f64,
    pub capacity_qps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub alpha: f64,
    pub adaptive_alpha: Option<AdaptiveAlpha>,
    pub relegation_enabled: bool,
    pub preemption_enabled: bool,
    /// Token budget per iteration, decodes included. `None` sizes the
    /// prefill chunk from decode slack every iteration.
    pub fixed_chunk: Option<u32>,
    pub profile: CostProfile,
    pub history_prior: HistoryPrior,
}

pub const SHARED_BASELINE_CHUNK: u32 = 256;
pub const BATCH_SILO_CHUNK: u32 = 2048;
pub const DEFAULT_ALPHA_HIGH: f64 = 100.0;
pub const DEFAULT_ALPHA_WINDOW_S: f64 = 60.0;

impl SchedulerConfig {
    /// Chunked-prefill baseline with a fixed token budget.
    pub fn sarathi(policy: Policy, chunk: u32, profile: CostProfile) -> Self {
        SchedulerConfig {
            policy,
            alpha: 0.0,
            adaptive_alpha: None,
            relegation_enabled: false,
            preemption_enabled: true,
            fixed_chunk: Some(chunk),
            profile,
            history_prior: HistoryPrior::default(),
        }
    }

    /// Dynamic chunking, eager relegation, selective preemption and the
    /// hybrid key with load-adaptive alpha.
    pub fn niyama(profile: CostProfile) -> Self {
        SchedulerConfig {
            policy: Policy::Niyama,
            alpha: 0.0,
            adaptive_alpha: Some(AdaptiveAlpha {
                alpha_high: DEFAULT_ALPHA_HIGH,
                window_s: DEFAULT_ALPHA_WINDOW_S,
                capacity_qps: None,
            }),
            relegation_enabled: true,
            preemption_enabled: true,
            fixed_chunk: None,
            profile,
            history_prior: HistoryPrior::default(),
        }
    }

    /// The canonical configuration for a policy name: baselines run at the
    /// shared 256-token budget, `niyama` gets the full feature set.
    pub fn for_policy(policy: Policy, profile: CostProfile) -> Self {
        match policy {
            Policy::Niyama => Self::niyama(profile),
            p => Self::sarathi(p, SHARED_BASELINE_CHUNK, profile),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if let Some(a) = &self.adaptive_alpha {
            if !(a.alpha_high >= 0.0 && a.alpha_high.is_finite()) {
                return Err(Error::Config(format!(
                    "alpha_high must be >= 0, got {}",
                    a.alpha_high
                )));
            }
            if !(a.window_s > 0.0) {
                return Err(Error::Config(format!(
                    "alpha_window_s must be > 0, got {}",
                    a.window_s
                )));
            }
            if matches!(a.capacity_qps, Some(c) if !(c > 0.0)) {
                return Err(Error::Config("alpha_capacity_qps must be > 0".into()));
            }
        }
        match self.fixed_chunk {
            Some(0) => return Err(Error::Config("fixed_chunk must be >= 1".into())),
            Some(c) if c > self.profile.max_chunk => {
                return Err(Error::Config(format!(
                    "fixed_chunk {c} exceeds max_chunk {}",
                    self.profile.max_chunk
                )))
            }
            None if self.policy != Policy::Niyama => {
                return Err(Error::Config(format!(
                    "baseline policy `{}` requires fixed_chunk",
                    self.policy
                )))
            }
            _ => {}
        }
        let p = &self.history_prior;
        if !(p.mean >= 0.0 && p.std >= 0.0) {
            return Err(Error::Config("history prior mean/std must be >= 0".into()));
        }
        Ok(())
    }
}
