use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sched::{BatchPlan, Counters, Job, ReplicaState, SchedulerConfig};
use crate::sim::report::{compute_report, judge, SimReport};
use crate::workload::{generate_trace, load_trace, BucketId, BucketTable, Request, TraceSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    RoundRobin,
    /// Fewest queued prefill tokens, lowest index on ties.
    #[default]
    JoinShortestQueue,
}

/// A replica group dedicated to some buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiloGroup {
    pub buckets: Vec<BucketId>,
    pub replicas: usize,
    /// Overrides the shared scheduler for this group.
    pub scheduler: Option<SchedulerConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deployment {
    #[default]
    Shared,
    Siloed(Vec<SiloGroup>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// Synthesised from the spec, with the run's seed.
    Generated(TraceSpec),
    File {
        path: PathBuf,
        buckets: BucketTable,
    },
    Inline(Vec<Request>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trace: TraceSource,
    pub scheduler: SchedulerConfig,
    pub replicas: usize,
    pub dispatch: Dispatch,
    pub deployment: Deployment,
    pub seed: u64,
}

impl SimConfig {
    pub fn single(trace: TraceSpec, scheduler: SchedulerConfig) -> Self {
        let seed = trace.seed;
        SimConfig {
            trace: TraceSource::Generated(trace),
            scheduler,
            replicas: 1,
            dispatch: Dispatch::default(),
            deployment: Deployment::Shared,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be >= 1".into()));
        }
        self.scheduler.validate()?;
        if let TraceSource::Generated(spec) = &self.trace {
            spec.validate()?;
        }
        if let Deployment::Siloed(groups) = &self.deployment {
            let total: usize = groups.iter().map(|g| g.replicas).sum();
            if total != self.replicas {
                return Err(Error::Config(format!(
                    "silo groups hold {total} replicas, expected {}",
                    self.replicas
                )));
            }
            let mut seen = BTreeSet::new();
            for g in groups {
                if g.replicas == 0 {
                    return Err(Error::Config("every silo group needs >= 1 replica".into()));
                }
                if let Some(s) = &g.scheduler {
                    s.validate()?;
                }
                for b in &g.buckets {
                    if !seen.insert(*b) {
                        return Err(Error::Config(format!(
                            "bucket {b} mapped to more than one silo"
                        )));
                    }
                }
            }
            if let Some(missing) = self.bucket_ids().into_iter().find(|b| !seen.contains(b)) {
                return Err(Error::Config(format!(
                    "bucket {missing} is not mapped to any silo"
                )));
            }
        }
        Ok(())
    }

    fn bucket_ids(&self) -> BTreeSet<BucketId> {
        match &self.trace {
            TraceSource::Generated(spec) => {
                spec.bucket_mix.iter().map(|b| b.qos.bucket_id()).collect()
            }
            TraceSource::File { buckets, .. } => buckets.keys().copied().collect(),
            TraceSource::Inline(reqs) => reqs.iter().map(|r| r.qos().bucket_id()).collect(),
        }
    }

    /// The request stream this run replays, sorted by arrival.
    pub fn materialize(&self) -> Result<Vec<Request>> {
        let mut reqs = match &self.trace {
            TraceSource::Generated(spec) => generate_trace(&TraceSpec {
                seed: self.seed,
                ..spec.clone()
            })?,
            TraceSource::File { path, buckets } => load_trace(path, buckets)?,
            TraceSource::Inline(r) => r.clone(),
        };
        reqs.sort_by(|a, b| {
            a.t_arrival()
                .total_cmp(&b.t_arrival())
                .then(a.id().cmp(&b.id()))
        });
        Ok(reqs)
    }

    /// Nominal span the offered load is spread over.
    pub fn duration(&self, reqs: &[Request]) -> f64 {
        match &self.trace {
            TraceSource::Generated(spec) => spec.duration,
            _ => reqs.last().map_or(0.0, |r| r.t_arrival()),
        }
    }
}

/// Everything a run produced before aggregation.
#[derive(Debug, Clone)]
pub struct RawRun {
    pub jobs: Vec<(usize, Job)>,
    pub counters: Counters,
    pub admitted: usize,
    pub duration: f64,
    pub makespan: f64,
}

struct Replica {
    state: ReplicaState,
    busy: Option<(BatchPlan, f64)>,
    /// Finished jobs already checked against the violation limit.
    judged: usize,
}

/// Drive the trace through the replicas until every request completes.
///
/// At each instant, iteration completions are applied first (replica index
/// order), then arrivals (trace order), then every idle replica with work
/// starts its next batch.
pub fn simulate(config: &SimConfig) -> Result<RawRun> {
    match simulate_bounded(config, None)? {
        Bounded::Complete(raw) => Ok(raw),
        Bounded::Exceeded { .. } => unreachable!("unbounded run completes"),
    }
}

/// Outcome of [`simulate_bounded`].
#[derive(Debug)]
pub enum Bounded {
    Complete(RawRun),
    /// Stopped once `doomed` of `admitted` requests were certain misses.
    Exceeded {
        admitted: usize,
        doomed: usize,
    },
}

impl Bounded {
    /// Exact violation percentage, or a lower bound on it when stopped early.
    pub fn violation_pct(self) -> Result<f64> {
        match self {
            Bounded::Complete(raw) => Ok(compute_report(raw)?.summary.violation_pct),
            Bounded::Exceeded { admitted, doomed } => Ok(100.0 * doomed as f64 / admitted as f64),
        }
    }
}

/// [`simulate`], abandoned as soon as more than `budget_pct` percent
/// of the admitted requests are certain to be judged violated: relegated, or
/// finished late. A run that completes is identical to an unbounded one.
pub fn simulate_bounded(config: &SimConfig, budget_pct: Option<f64>) -> Result<Bounded> {
    config.validate()?;
    let reqs = config.materialize()?;
    let duration = config.duration(&reqs);
    let admitted = reqs.len();
    let limit = budget_pct.map(|b| (b / 100.0 * admitted as f64).floor() as usize);
    let mut doomed = 0usize;

    let mut replicas = Vec::with_capacity(config.replicas);
    let mut route: BTreeMap<BucketId, Vec<usize>> = BTreeMap::new();
    match &config.deployment {
        Deployment::Shared => {
            for _ in 0..config.replicas {
                replicas.push(ReplicaState::new(config.scheduler.clone())?);
            }
        }
        Deployment::Siloed(groups) => {
            for g in groups {
                let members: Vec<usize> = (replicas.len()..replicas.len() + g.replicas).collect();
                for _ in 0..g.replicas {
                    replicas.push(ReplicaState::new(
                        g.scheduler
                            .clone()
                            .unwrap_or_else(|| config.scheduler.clone()),
                    )?);
                }
                for b in &g.buckets {
                    route.insert(*b, members.clone());
                }
            }
        }
    }
    let all: Vec<usize> = (0..replicas.len()).collect();
    let mut replicas: Vec<Replica> = replicas
        .into_iter()
        .map(|state| Replica {
            state,
            busy: None,
            judged: 0,
        })
        .collect();
    let mut rr: BTreeMap<BucketId, usize> = BTreeMap::new();

    let mut next = 0usize;
    let mut now = 0.0f64;
    let mut reqs = reqs.into_iter().peekable();
    loop {
        let t_arr = reqs.peek().map_or(f64::INFINITY, |r| r.t_arrival());
        let t_done = replicas
            .iter()
            .filter_map(|r| r.busy.as_ref().map(|b| b.1))
            .fold(f64::INFINITY, f64::min);
        let t = t_arr.min(t_done);
        if t == f64::INFINITY {
            break;
        }
        if t < now {
            return Err(Error::Invariant(format!(
                "clock moved backwards: {t} < {now}"
            )));
        }
        now = t;

        for (i, r) in replicas.iter_mut().enumerate() {
            if r.busy.as_ref().is_some_and(|b| b.1 == now) {
                let (plan, t_end) = r.busy.take().expect("busy");
                r.state.on_iteration_complete(&plan, t_end);
                if limit.is_some() {
                    for job in &r.state.finished()[r.judged..] {
                        doomed += (!job.relegated && judge(job, i, 0)?.violated) as usize;
                    }
                    r.judged = r.state.finished().len();
                }
            }
        }
        while reqs.peek().is_some_and(|r| r.t_arrival() == now) {
            let req = reqs.next().expect("peeked");
            let group = match &config.deployment {
                Deployment::Shared => &all,
                Deployment::Siloed(_) => route.get(&req.qos().bucket_id()).ok_or_else(|| {
                    Error::Config(format!("bucket {} has no silo", req.qos().bucket_id()))
                })?,
            };
            let target = match config.dispatch {
                Dispatch::RoundRobin => {
                    let c = rr.entry(req.qos().bucket_id()).or_insert(0);
                    let key = if matches!(config.deployment, Deployment::Shared) {
                        next
                    } else {
                        *c
                    };
                    let pick = group[key % group.len()];
                    next += 1;
                    *c += 1;
                    pick
                }
                Dispatch::JoinShortestQueue => *group
                    .iter()
                    .min_by_key(|&&i| (replicas[i].state.queued_prefill_tokens(), i))
                    .expect("nonempty group"),
            };
            replicas[target].state.admit(req);
        }
        for r in replicas.iter_mut().filter(|r| r.busy.is_none()) {
            if let Some(plan) = r.state.assemble_batch(now) {
                doomed += plan.relegated.len();
                let t_end = now + plan.predicted_latency;
                if !(t_end > now) {
                    return Err(Error::Invariant(format!(
                        "iteration of non-positive length at t={now}"
                    )));
                }
                r.busy = Some((plan, t_end));
            }
        }
        if limit.is_some_and(|l| doomed > l) {
            return Ok(Bounded::Exceeded { admitted, doomed });
        }
    }

    let mut jobs = Vec::with_capacity(admitted);
    let mut counters = Counters::default();
    for (i, r) in replicas.iter_mut().enumerate() {
        if !r.state.is_idle() {
            return Err(Error::Invariant(format!(
                "replica {i} finished with queued work"
            )));
        }
        let c = r.state.counters();
        counters.iterations += c.iterations;
        counters.decode_iterations += c.decode_iterations;
        counters.safety_exceptions += c.safety_exceptions;
        counters.infeasible_iterations += c.infeasible_iterations;
        counters.relegations += c.relegations;
        counters.protective_relegations += c.protective_relegations;
        counters.preemptions += c.preemptions;
        counters.high_alpha_iterations += c.high_alpha_iterations;
        counters.prefill_tokens += c.prefill_tokens;
        counters.saturated_iterations += c.saturated_iterations;
        counters.saturated_budget_tokens += c.saturated_budget_tokens;
        jobs.extend(r.state.take_finished().into_iter().map(|j| (i, j)));
    }
    jobs.sort_by_key(|(_, j)| j.id());
    Ok(Bounded::Complete(RawRun {
        jobs,
        counters,
        admitted,
        duration,
        makespan: now,
    }))
}

/// Simulate and aggregate.
pub fn run(config: &SimConfig) -> Result<SimReport> {
    compute_report(simulate(config)?)
}
