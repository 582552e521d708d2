use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{completion_deadline, first_token_deadline};
use crate::sched::{Counters, Job};
use crate::sim::engine::RawRun;
use crate::workload::{AppPriority, BucketId, QosClass, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Ttft,
    Tbt,
    Ttlt,
    /// Met its own deadlines but was relegated on the way.
    Relegated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub bucket_id: BucketId,
    pub class: QosClass,
    pub app_priority: AppPriority,
    pub replica: usize,
    pub t_arrival: f64,
    pub prompt_tokens: u32,
    pub decode_tokens: u32,
    pub long_prompt: bool,
    pub ttft: f64,
    pub ttlt: f64,
    pub tbt: Vec<f64>,
    pub tbt_token_violations: u32,
    pub relegated: bool,
    pub violated: bool,
    pub violated_metric: Option<ViolationKind>,
}

/// Nearest-rank percentiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
}

impl Percentiles {
    pub fn of(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        Percentiles {
            count: xs.len(),
            p50: nearest_rank(&xs, 50.0),
            p95: nearest_rank(&xs, 95.0),
            p99: nearest_rank(&xs, 99.0),
        }
    }
}

/// Smallest value with at least `p` percent of the sorted sample at or below it.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Latency and violation figures for one slice of the requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub requests: usize,
    pub violated: usize,
    pub violation_pct: f64,
    pub ttft_violations: usize,
    pub tbt_violations: usize,
    pub ttlt_violations: usize,
    pub relegated: usize,
    pub ttft: Percentiles,
    pub tbt: Percentiles,
    pub ttlt: Percentiles,
}

impl GroupStats {
    fn of<'a>(label: impl Into<String>, recs: impl Iterator<Item = &'a RequestRecord>) -> Self {
        let mut g = GroupStats {
            label: label.into(),
            requests: 0,
            violated: 0,
            violation_pct: 0.0,
            ttft_violations: 0,
            tbt_violations: 0,
            ttlt_violations: 0,
            relegated: 0,
            ttft: Percentiles::default(),
            tbt: Percentiles::default(),
            ttlt: Percentiles::default(),
        };
        let (mut ttft, mut tbt, mut ttlt) = (Vec::new(), Vec::new(), Vec::new());
        for r in recs {
            g.requests += 1;
            g.violated += r.violated as usize;
            g.relegated += r.relegated as usize;
            match r.violated_metric {
                Some(ViolationKind::Ttft) => g.ttft_violations += 1,
                Some(ViolationKind::Tbt) => g.tbt_violations += 1,
                Some(ViolationKind::Ttlt) => g.ttlt_violations += 1,
                _ => {}
            }
            if r.class == QosClass::Interactive {
                ttft.push(r.ttft);
                tbt.extend_from_slice(&r.tbt);
            }
            ttlt.push(r.ttlt);
        }
        g.violation_pct = pct(g.violated, g.requests);
        g.ttft = Percentiles::of(ttft);
        g.tbt = Percentiles::of(tbt);
        g.ttlt = Percentiles::of(ttlt);
        g
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub requests: usize,
    pub violated: usize,
    pub violation_pct: f64,
    pub relegated: usize,
    pub relegated_pct: f64,
    pub duration_s: f64,
    pub makespan_s: f64,
    pub offered_qps: f64,
    pub goodput_qps: f64,
    /// Prompts at or above this length count as long.
    pub long_prompt_threshold: u32,
    pub tbt_tokens: u64,
    pub tbt_token_violations: u64,
    pub tbt_token_violation_pct: f64,
    pub counters: Counters,
    pub overall: GroupStats,
    pub buckets: Vec<GroupStats>,
    pub long: GroupStats,
    pub short: GroupStats,
    pub high_priority: GroupStats,
    pub low_priority: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub summary: Summary,
    pub requests: Vec<RequestRecord>,
}

impl SimReport {
    pub fn record(&self, id: RequestId) -> Option<&RequestRecord> {
        self.requests
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.requests[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Judge one finished request against its deadlines. Token `n >= 2` misses
/// when it lands later than both its own deadline and one TBT after token
/// `n - 1`; the request-level TBT verdict is the first such miss.
pub fn judge(job: &Job, replica: usize, long_threshold: u32) -> Result<RequestRecord> {
    let info = &job.info;
    let times = &job.token_times;
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return Err(Error::Invariant(format!(
            "request {} finished without tokens",
            info.id
        )));
    };
    if times.len() != job.decode_tokens as usize {
        return Err(Error::Invariant(format!(
            "request {} emitted {} of {} tokens",
            info.id,
            times.len(),
            job.decode_tokens
        )));
    }
    let tbt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut tbt_misses = 0u32;
    let kind = match info.qos.slo_tbt() {
        Some(slo_tbt) => {
            let d1 = first_token_deadline(info)?;
            for (i, w) in times.windows(2).enumerate() {
                let n = (i + 2) as f64;
                let due = (d1 + (n - 1.0) * slo_tbt).max(w[0] + slo_tbt);
                tbt_misses += (w[1] > due) as u32;
            }
            if first > d1 {
                Some(ViolationKind::Ttft)
            } else if tbt_misses > 0 {
                Some(ViolationKind::Tbt)
            } else {
                None
            }
        }
        None => (last > completion_deadline(info)?).then_some(ViolationKind::Ttlt),
    };
    let kind = kind.or(job.relegated.then_some(ViolationKind::Relegated));
    Ok(RequestRecord {
        id: info.id,
        bucket_id: info.qos.bucket_id(),
        class: info.qos.class(),
        app_priority: info.app_priority,
        replica,
        t_arrival: info.t_arrival,
        prompt_tokens: info.prompt_tokens,
        decode_tokens: job.decode_tokens,
        long_prompt: info.prompt_tokens >= long_threshold,
        ttft: first - info.t_arrival,
        ttlt: last - info.t_arrival,
        tbt,
        tbt_token_violations: tbt_misses,
        relegated: job.relegated,
        violated: kind.is_some(),
        violated_metric: kind,
    })
}

/// Empirical nearest-rank 90th percentile of prompt lengths.
pub fn long_prompt_threshold(prompts: &mut [u32]) -> u32 {
    prompts.sort_unstable();
    if prompts.is_empty() {
        return u32::MAX;
    }
    let rank = (0.9 * prompts.len() as f64).ceil() as usize;
    prompts[rank.clamp(1, prompts.len()) - 1]
}

pub fn compute_report(raw: RawRun) -> Result<SimReport> {
    if raw.jobs.len() != raw.admitted {
        return Err(Error::Invariant(format!(
            "{} requests admitted, {} finished",
            raw.admitted,
            raw.jobs.len()
        )));
    }
    if raw.jobs.windows(2).any(|w| w[0].1.id() == w[1].1.id()) {
        return Err(Error::Invariant("request reported twice".into()));
    }
    let mut prompts: Vec<u32> = raw.jobs.iter().map(|(_, j)| j.info.prompt_tokens).collect();
    let threshold = long_prompt_threshold(&mut prompts);
    let requests = raw
        .jobs
        .iter()
        .map(|(replica, job)| judge(job, *replica, threshold))
        .collect::<Result<Vec<_>>>()?;

    let mut bucket_ids: Vec<BucketId> = requests.iter().map(|r| r.bucket_id).collect();
    bucket_ids.sort_unstable();
    bucket_ids.dedup();
    let buckets = bucket_ids
        .iter()
        .map(|&b| GroupStats::of(b.to_string(), requests.iter().filter(|r| r.bucket_id == b)))
        .collect();
    let overall = GroupStats::of("all", requests.iter());
    let n = requests.len();
    let ok = n - overall.violated;
    let tbt_tokens: u64 = requests
        .iter()
        .filter(|r| r.class == QosClass::Interactive)
        .map(|r| r.tbt.len() as u64)
        .sum();
    let tbt_token_violations: u64 = requests.iter().map(|r| r.tbt_token_violations as u64).sum();
    let per_second = |k: usize| {
        if raw.duration > 0.0 {
            k as f64 / raw.duration
        } else {
            0.0
        }
    };
    let summary = Summary {
        requests: n,
        violated: overall.violated,
        violation_pct: overall.violation_pct,
        relegated: overall.relegated,
        relegated_pct: pct(overall.relegated, n),
        duration_s: raw.duration,
        makespan_s: raw.makespan,
        offered_qps: per_second(n),
        goodput_qps: per_second(ok),
        long_prompt_threshold: threshold,
        tbt_tokens,
        tbt_token_violations,
        tbt_token_violation_pct: if tbt_tokens == 0 {
            0.0
        } else {
            100.0 * tbt_token_violations as f64 / tbt_tokens as f64
        },
        counters: raw.counters,
        long: GroupStats::of("long", requests.iter().filter(|r| r.long_prompt)),
        short: GroupStats::of("short", requests.iter().filter(|r| !r.long_prompt)),
        high_priority: GroupStats::of(
            "high",
            requests
                .iter()
                .filter(|r| r.app_priority == AppPriority::High),
        ),
        low_priority: GroupStats::of(
            "low",
            requests
                .iter()
                .filter(|r| r.app_priority == AppPriority::Low),
        ),
        overall,
        buckets,
    };
    Ok(SimReport { summary, requests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{AppId, QosSpec, Request, RequestInfo};

    fn job(qos: QosSpec, times: &[f64]) -> Job {
        let info = RequestInfo {
            id: 1,
            t_arrival: 0.0,
            prompt_tokens: 10,
            qos,
            app_priority: AppPriority::High,
            app_id: AppId(0),
        };
        let mut j = Job::new(Request::new(info, times.len() as u32).unwrap());
        j.token_times = times.to_vec();
        j
    }

    fn q1() -> QosSpec {
        QosSpec::interactive(0, 6.0, 0.05).unwrap()
    }

    #[test]
    fn definition_arithmetic() {
        let r = judge(&job(q1(), &[6.0, 6.05, 6.10]), 0, 100).unwrap();
        assert_eq!(r.ttft, 6.0);
        assert!((r.ttlt - 6.10).abs() < 1e-12);
        assert_eq!(r.tbt.len(), 2);
        assert!(r.tbt.iter().all(|g| (g - 0.05).abs() < 1e-9));
        assert!(!r.violated);
    }

    #[test]
    fn deadline_is_inclusive() {
        assert!(!judge(&job(q1(), &[6.0]), 0, 100).unwrap().violated);
        let r = judge(&job(q1(), &[6.0 + 1e-9]), 0, 100).unwrap();
        assert_eq!(r.violated_metric, Some(ViolationKind::Ttft));
        let nonint = QosSpec::non_interactive(1, 600.0).unwrap();
        assert!(!judge(&job(nonint, &[1.0, 600.0]), 0, 100).unwrap().violated);
        let r = judge(&job(nonint, &[1.0, 600.5]), 0, 100).unwrap();
        assert_eq!(r.violated_metric, Some(ViolationKind::Ttlt));
    }

    #[test]
    fn tbt_misses_counted_against_pacing() {
        // Token 2 is late; token 3 keeps pace after it and is not charged.
        let r = judge(&job(q1(), &[1.0, 6.2, 6.25]), 0, 100).unwrap();
        assert_eq!(r.violated_metric, Some(ViolationKind::Tbt));
        assert_eq!(r.tbt_token_violations, 1);
        // Ahead of schedule a long gap is still within the deadline.
        let r = judge(&job(q1(), &[1.0, 6.05]), 0, 100).unwrap();
        assert!(!r.violated);
    }

    #[test]
    fn relegated_counts_as_violation() {
        let mut j = job(q1(), &[1.0]);
        j.relegated = true;
        let r = judge(&j, 0, 100).unwrap();
        assert!(r.violated);
        assert_eq!(r.violated_metric, Some(ViolationKind::Relegated));
    }

    #[test]
    fn missing_tokens_is_an_invariant_error() {
        let mut j = job(q1(), &[1.0, 2.0]);
        j.token_times.pop();
        assert!(matches!(judge(&j, 0, 100), Err(Error::Invariant(_))));
        j.token_times.clear();
        assert!(matches!(judge(&j, 0, 100), Err(Error::Invariant(_))));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 50.0), Some(50.0));
        assert_eq!(nearest_rank(&xs, 99.0), Some(99.0));
        assert_eq!(nearest_rank(&[3.0], 99.0), Some(3.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
        let mut p: Vec<u32> = (1..=10).collect();
        assert_eq!(long_prompt_threshold(&mut p), 9);
    }
}
