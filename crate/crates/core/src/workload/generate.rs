use serde::{Deserialize, Serialize};

use super::dataset::DatasetStats;
use super::request::{AppId, AppPriority, QosSpec, Request, RequestInfo};
use super::rng::{streams, PortableRng};
use crate::error::{Error, Result};

/// Offered load: a constant rate or a piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalRate {
    Constant(f64),
    /// `(start_time_s, qps)` steps; each step covers `[start, next_start)`.
    Schedule(Vec<(f64, f64)>),
}

impl ArrivalRate {
    fn steps(&self, duration: f64) -> Vec<(f64, f64, f64)> {
        match self {
            ArrivalRate::Constant(q) => vec![(0.0, duration, *q)],
            ArrivalRate::Schedule(s) => s
                .iter()
                .enumerate()
                .map(|(i, &(start, q))| {
                    let end = s.get(i + 1).map_or(duration, |n| n.0).min(duration);
                    (start, end, q)
                })
                .filter(|&(start, end, _)| start < end)
                .collect(),
        }
    }

    /// Mean rate over `[0, duration)`.
    pub fn mean_qps(&self, duration: f64) -> f64 {
        if duration <= 0.0 {
            return 0.0;
        }
        self.steps(duration)
            .iter()
            .map(|(a, b, q)| (b - a) * q)
            .sum::<f64>()
            / duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketShare {
    pub qos: QosSpec<f64>,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub duration: f64,
    pub arrivals: ArrivalRate,
    pub dataset: DatasetStats,
    pub bucket_mix: Vec<BucketShare>,
    pub low_priority_fraction: f64,
    pub seed: u64,
}

impl TraceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTraceSpec(m));
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!(
                "duration must be finite and >= 0, got {}",
                self.duration
            ));
        }
        match &self.arrivals {
            ArrivalRate::Constant(q) => {
                if !(*q > 0.0 && q.is_finite()) {
                    return bad(format!("qps must be > 0, got {q}"));
                }
            }
            ArrivalRate::Schedule(steps) => {
                if steps.is_empty() {
                    return bad("qps_schedule is empty".into());
                }
                let mut prev = f64::NEG_INFINITY;
                for &(start, q) in steps {
                    if !(q > 0.0 && q.is_finite()) {
                        return bad(format!(
                            "qps must be > 0 in every step, got {q} at t={start}"
                        ));
                    }
                    if !(start >= 0.0) || start <= prev {
                        return bad(format!(
                            "schedule step starts must be >= 0 and increasing (t={start})"
                        ));
                    }
                    prev = start;
                }
            }
        }
        self.dataset.validate()?;
        if self.bucket_mix.is_empty() {
            return bad("bucket_mix is empty".into());
        }
        let total: f64 = self.bucket_mix.iter().map(|b| b.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("bucket fractions sum to {total}, expected 1"));
        }
        if self.bucket_mix.iter().any(|b| !(b.fraction >= 0.0)) {
            return bad("bucket fractions must be >= 0".into());
        }
        let mut ids: Vec<_> = self.bucket_mix.iter().map(|b| b.qos.bucket_id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate bucket id in bucket_mix".into());
        }
        if !(0.0..=1.0).contains(&self.low_priority_fraction) {
            return bad(format!(
                "low_priority_fraction must lie in [0, 1], got {}",
                self.low_priority_fraction
            ));
        }
        Ok(())
    }
}

/// Synthesises a trace: Poisson arrivals per schedule step, lognormal token
/// counts fitted to the dataset percentiles, categorical bucket assignment and
/// Bernoulli low-priority marking.
///
/// Arrivals, token counts, buckets and priorities use separate random streams,
/// so request `k` has the same lengths, bucket and priority at every load.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<Request<f64>>> {
    spec.validate()?;
    let prompt = spec.dataset.prompt_fit()?;
    let decode = spec.dataset.decode_fit()?;

    let mut arrivals_rng = PortableRng::new(spec.seed, streams::ARRIVALS);
    let mut tokens_rng = PortableRng::new(spec.seed, streams::TOKENS);
    let mut bucket_rng = PortableRng::new(spec.seed, streams::BUCKETS);
    let mut prio_rng = PortableRng::new(spec.seed, streams::PRIORITY);

    let mut out = Vec::new();
    for (start, end, qps) in spec.arrivals.steps(spec.duration) {
        let mut t = start;
        loop {
            t += arrivals_rng.exponential(qps);
            if t >= end {
                break;
            }
            let id = out.len() as u64;
            let prompt_tokens = round_tokens(tokens_rng.lognormal(prompt.mu, prompt.sigma));
            let decode_tokens = round_tokens(tokens_rng.lognormal(decode.mu, decode.sigma));
            let qos = pick_bucket(&spec.bucket_mix, bucket_rng.open01());
            let app_priority = if prio_rng.bernoulli(spec.low_priority_fraction) {
                AppPriority::Low
            } else {
                AppPriority::High
            };
            let info = RequestInfo {
                id,
                t_arrival: t,
                prompt_tokens,
                qos,
                app_priority,
                app_id: AppId(qos.bucket_id() as u32),
            };
            out.push(Request::new(info, decode_tokens)?);
        }
    }
    Ok(out)
}

fn round_tokens(x: f64) -> u32 {
    x.round().clamp(1.0, u32::MAX as f64) as u32
}

fn pick_bucket(mix: &[BucketShare], u: f64) -> QosSpec<f64> {
    let mut acc = 0.0;
    for b in mix {
        acc += b.fraction;
        if u < acc {
            return b.qos;
        }
    }
    mix.last().expect("non-empty mix").qos
}
