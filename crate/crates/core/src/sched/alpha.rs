use std::collections::VecDeque;

use crate::cost_model::CostProfile;
use crate::policy::DecodeHistory;
use crate::sched::AdaptiveAlpha;
use crate::workload::RequestInfo;

/// Tracks recently offered work and picks the alpha for the next iteration.
#[derive(Debug, Clone)]
pub(crate) struct AlphaController {
    base: f64,
    adaptive: Option<AdaptiveAlpha>,
    window: VecDeque<(f64, f64)>,
    total: f64,
}

impl AlphaController {
    pub fn new(base: f64, adaptive: Option<AdaptiveAlpha>) -> Self {
        AlphaController {
            base,
            adaptive,
            window: VecDeque::new(),
            total: 0.0,
        }
    }

    pub fn observe(&mut self, req: &RequestInfo, history: &DecodeHistory, profile: &CostProfile) {
        let Some(a) = self.adaptive else { return };
        let work = match a.capacity_qps {
            Some(_) => 1.0,
            None => {
                let (mean, _) = history.estimate(req.app_id);
                let ctx = req.prompt_tokens as f64 + 0.5 * mean;
                profile.prefill_time_alone(req.prompt_tokens)
                    + mean * (profile.c1 + profile.c2 * ctx)
            }
        };
        self.window.push_back((req.t_arrival, work));
        self.total += work;
    }

    /// Offered load over the trailing window, 1.0 meaning saturation.
    pub fn load(&mut self, now: f64) -> f64 {
        let Some(a) = self.adaptive else { return 0.0 };
        while let Some(&(t, w)) = self.window.front() {
            if t >= now - a.window_s {
                break;
            }
            self.total -= w;
            self.window.pop_front();
        }
        if self.window.is_empty() {
            self.total = 0.0;
        }
        let denom = a.window_s * a.capacity_qps.unwrap_or(1.0);
        self.total / denom
    }

    pub fn current(&mut self, now: f64) -> f64 {
        let Some(a) = self.adaptive else {
            return self.base;
        };
        if self.load(now) > 1.0 {
            a.alpha_high
        } else {
            self.base
        }
    }
}
