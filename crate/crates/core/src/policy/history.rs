use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::workload::AppId;

pub const DEFAULT_MIN_SAMPLES: u32 = 30;

/// Decode-length belief used before an application has enough history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPrior<S = f64> {
    pub mean: S,
    pub std: S,
    pub min_samples: u32,
}

impl Default for HistoryPrior<f64> {
    fn default() -> Self {
        HistoryPrior {
            mean: 256.0,
            std: 128.0,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Welford<S> {
    count: u64,
    mean: S,
    m2: S,
}

/// Running mean and variance of completed decode lengths, per application.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHistory<S = f64> {
    prior: HistoryPrior<S>,
    apps: BTreeMap<AppId, Welford<S>>,
}

impl<S: Scalar> DecodeHistory<S> {
    pub fn new(prior: HistoryPrior<S>) -> Self {
        DecodeHistory {
            prior,
            apps: BTreeMap::new(),
        }
    }

    pub fn prior(&self) -> HistoryPrior<S> {
        self.prior
    }

    /// Folds in the decode length of a request that has finished.
    pub fn record(&mut self, app: AppId, decode_tokens: u32) {
        let w = self.apps.entry(app).or_insert(Welford {
            count: 0,
            mean: S::zero(),
            m2: S::zero(),
        });
        let x = S::tokens(decode_tokens as u64);
        w.count += 1;
        let delta = x - w.mean;
        w.mean = w.mean + delta / S::tokens(w.count);
        w.m2 = w.m2 + delta * (x - w.mean);
    }

    pub fn samples(&self, app: AppId) -> u64 {
        self.apps.get(&app).map_or(0, |w| w.count)
    }

    /// `(mean, std)` for `app`, falling back to the prior below
    /// `min_samples` observations.
    pub fn estimate(&self, app: AppId) -> (S, S) {
        match self.apps.get(&app) {
            Some(w) if w.count >= self.prior.min_samples as u64 && w.count >= 2 => {
                let var = (w.m2 / S::tokens(w.count - 1)).max(S::zero());
                (w.mean, var.sqrt())
            }
            _ => (self.prior.mean, self.prior.std),
        }
    }
}
