use serde::{Deserialize, Serialize};

use crate::cost_model::{DecodeLoad, LatencyModel};
use crate::error::Result;
use crate::policy::{
    baseline_priority, completion_deadline, estimate_decode_tokens, hybrid_priority, slo_deadline,
    token_deadline, DecodeHistory, Policy,
};
use crate::sched::alpha::AlphaController;
use crate::sched::{Job, SchedulerConfig};
use crate::workload::{AppPriority, Request, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Ok,
    WillViolate,
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillSlice {
    pub id: RequestId,
    pub tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub t_start: f64,
    pub decode_ids: Vec<RequestId>,
    pub prefill_slices: Vec<PrefillSlice>,
    pub chunk_budget: u32,
    pub predicted_latency: f64,
    pub min_slack: f64,
    /// The decode set alone already overran the slack.
    pub infeasible: bool,
    pub relegated: Vec<RequestId>,
    pub from_relegated_queue: bool,
    pub alpha: f64,
}

impl BatchPlan {
    pub fn prefill_tokens(&self) -> u32 {
        self.prefill_slices.iter().map(|s| s.tokens).sum()
    }
}

/// Per-iteration quantities every check in one assembly shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationContext {
    pub now: f64,
    pub load: DecodeLoad,
    pub min_slack: f64,
    pub budget: u32,
    pub infeasible: bool,
    /// Predicted latency of an iteration carrying the full budget.
    pub iter_latency: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub iterations: u64,
    pub decode_iterations: u64,
    pub safety_exceptions: u64,
    pub infeasible_iterations: u64,
    pub relegations: u64,
    pub protective_relegations: u64,
    pub preemptions: u64,
    pub high_alpha_iterations: u64,
    pub prefill_tokens: u64,
    /// Iterations whose prefill filled the whole budget.
    pub saturated_iterations: u64,
    pub saturated_budget_tokens: u64,
}

/// What one iteration changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationOutcome {
    pub tokens_emitted: usize,
    pub prefills_completed: Vec<RequestId>,
    pub completed: Vec<RequestId>,
}

/// One serving replica: three queues, decode history and the clock.
#[derive(Debug, Clone)]
pub struct ReplicaState {
    config: SchedulerConfig,
    now: f64,
    history: DecodeHistory,
    prefill_queue: Vec<Job>,
    decode_queue: Vec<Job>,
    relegated_queue: Vec<Job>,
    finished: Vec<Job>,
    in_flight: Option<RequestId>,
    alpha: AlphaController,
    counters: Counters,
}

impl ReplicaState {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(ReplicaState {
            history: DecodeHistory::new(config.history_prior),
            alpha: AlphaController::new(config.alpha, config.adaptive_alpha),
            config,
            now: 0.0,
            prefill_queue: Vec::new(),
            decode_queue: Vec::new(),
            relegated_queue: Vec::new(),
            finished: Vec::new(),
            in_flight: None,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn history(&self) -> &DecodeHistory {
        &self.history
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn prefill_queue(&self) -> &[Job] {
        &self.prefill_queue
    }

    pub fn decode_queue(&self) -> &[Job] {
        &self.decode_queue
    }

    pub fn relegated_queue(&self) -> &[Job] {
        &self.relegated_queue
    }

    pub fn finished(&self) -> &[Job] {
        &self.finished
    }

    pub fn take_finished(&mut self) -> Vec<Job> {
        std::mem::take(&mut self.finished)
    }

    pub fn is_idle(&self) -> bool {
        self.prefill_queue.is_empty()
            && self.decode_queue.is_empty()
            && self.relegated_queue.is_empty()
    }

    /// Prompt tokens still waiting for prefill, relegated work included.
    pub fn queued_prefill_tokens(&self) -> u64 {
        self.prefill_queue
            .iter()
            .chain(&self.relegated_queue)
            .map(|j| j.prefill_remaining() as u64)
            .sum()
    }

    pub fn admit(&mut self, req: Request) {
        let mut job = Job::new(req);
        self.now = self.now.max(job.info.t_arrival);
        self.alpha
            .observe(&job.info, &self.history, &self.config.profile);
        job.key = self.key_for(&job, self.config.alpha);
        self.prefill_queue.push(job);
    }

    /// Place a job straight into the decode queue, as if its prefill had just
    /// finished at `now`.
    pub fn insert_decoding(&mut self, mut job: Job, now: f64) {
        job.progress.prefill_done = job.info.prompt_tokens;
        job.t_prefill_done.get_or_insert(now);
        self.now = self.now.max(now);
        self.decode_queue.push(job);
    }

    fn key_for(&self, job: &Job, alpha: f64) -> crate::policy::PriorityKey {
        match self.config.policy {
            Policy::Niyama => hybrid_priority(
                &job.info,
                job.progress,
                alpha,
                &self.history,
                &self.config.profile,
            )
            .expect("alpha validated non-negative"),
            p => baseline_priority(&job.info, job.progress, p).expect("baseline policy"),
        }
    }

    fn refresh_keys(&mut self, alpha: f64) {
        if self.config.policy.is_dynamic() {
            for i in 0..self.prefill_queue.len() {
                let key = self.key_for(&self.prefill_queue[i], alpha);
                self.prefill_queue[i].key = key;
            }
        }
        self.prefill_queue.sort_by_key(|e| e.key);
    }

    fn decode_load(&self) -> DecodeLoad {
        self.decode_queue
            .iter()
            .fold(DecodeLoad::default(), |l, j| l.with(j.kv_context_len()))
    }

    /// Tightest per-iteration latency the decode set tolerates.
    ///
    /// An interactive decode may take until its next token's deadline, but
    /// never less than one TBT after its previous token: a request already
    /// behind schedule is paced, not squeezed. Non-interactive decodes spread
    /// what is left of their completion deadline over their estimated
    /// remaining tokens; those past the deadline, or that cannot make it
    /// even at decode-only pace, stop constraining the batch.
    pub fn compute_min_slack(&self) -> f64 {
        let load = self.decode_load();
        let decode_only = self.config.profile.latency(0, load);
        let mut slack = f64::INFINITY;
        for job in &self.decode_queue {
            let s = match job.info.qos.slo_tbt() {
                Some(tbt) => {
                    let n = job.progress.decoded + 1;
                    let due = token_deadline(&job.info, n).expect("interactive, n >= 1");
                    let prev = job.last_token_time().unwrap_or(self.now);
                    due.max(prev + tbt) - self.now
                }
                None => {
                    let due = completion_deadline(&job.info).expect("non-interactive");
                    if due <= self.now {
                        continue;
                    }
                    let est =
                        estimate_decode_tokens(&job.info, job.progress, &self.history).max(1.0);
                    let bound = (due - self.now) / est;
                    if bound < decode_only {
                        continue;
                    }
                    bound
                }
            };
            slack = slack.min(s);
        }
        slack
    }

    pub fn iteration_context(&self) -> IterationContext {
        let load = self.decode_load();
        let min_slack = self.compute_min_slack();
        let profile = &self.config.profile;
        let (budget, infeasible) = match self.config.fixed_chunk {
            Some(c) => (c, false),
            None => {
                let d = profile.max_feasible_chunk(load, min_slack);
                (d.tokens, d.infeasible)
            }
        };
        IterationContext {
            now: self.now,
            load,
            min_slack,
            budget,
            infeasible,
            iter_latency: profile.latency(budget, load),
        }
    }

    /// Predicted time at which `job` meets its SLO-bearing milestone (first
    /// token, or last token for non-interactive requests) if `ahead` prompt
    /// tokens are prefilled before its own.
    fn finish_estimate(&self, job: &Job, ctx: &IterationContext, ahead: u64) -> f64 {
        let profile = &self.config.profile;
        let rem = job.prefill_remaining() as u64 + ahead;
        let iters = rem.div_ceil(ctx.budget.max(1) as u64);
        let prefill = iters as f64 * ctx.iter_latency;
        let load = ctx.load.with(job.kv_context_len());
        // Decodes of a non-interactive request ride along with full chunks.
        let tail = if job.info.qos.is_interactive() {
            profile.latency(0, load)
        } else {
            estimate_decode_tokens(&job.info, job.progress, &self.history)
                * profile.latency(ctx.budget, load)
        };
        ctx.now + prefill + tail
    }

    /// TTFT/TTLT outlook of a queued prefill at the current budget. With a
    /// zero budget nothing can be projected and only past deadlines count.
    pub fn check_violation(&self, job: &Job, ctx: &IterationContext) -> Status {
        let deadline = slo_deadline(&job.info);
        if deadline < ctx.now {
            Status::Violated
        } else if ctx.budget == 0 || deadline >= self.finish_estimate(job, ctx, 0) {
            Status::Ok
        } else {
            Status::WillViolate
        }
    }

    /// Whether `displaced` still makes its deadline after sitting out one
    /// iteration. Decoding requests are never displaced.
    pub fn maybe_preempt(&self, displaced: &Job, ctx: &IterationContext) -> bool {
        if displaced.progress.prefill_done >= displaced.info.prompt_tokens
            || displaced.t_prefill_done.is_some()
        {
            return false;
        }
        let deadline = slo_deadline(&displaced.info);
        deadline >= ctx.now
            && ctx.budget > 0
            && deadline >= self.finish_estimate(displaced, ctx, 0) + ctx.iter_latency
    }

    /// Move doomed prefills out of the primary queue, Low priority first.
    ///
    /// Low-priority requests that are not OK go immediately. Low-priority
    /// requests queued ahead of a still-savable High request are shed, nearest
    /// first, until the High request's projection, counting the prefill
    /// queued ahead of it, fits its deadline. High-priority requests that are
    /// not OK go only in iterations with no Low violator.
    pub fn eager_relegate(&mut self, ctx: &IterationContext) -> Vec<RequestId> {
        let n = self.prefill_queue.len();
        let status: Vec<Status> = self
            .prefill_queue
            .iter()
            .map(|j| self.check_violation(j, ctx))
            .collect();
        let mut out = vec![false; n];
        let mut low_violator = false;
        for (i, job) in self.prefill_queue.iter().enumerate() {
            if job.info.app_priority == AppPriority::Low && status[i] != Status::Ok {
                out[i] = true;
                low_violator = true;
            }
        }
        let mut protective = 0;
        if ctx.budget > 0 {
            let mut ahead = 0u64;
            let mut lows: Vec<usize> = Vec::new();
            for (i, job) in self.prefill_queue.iter().enumerate() {
                if out[i] {
                    continue;
                }
                match job.info.app_priority {
                    AppPriority::High if status[i] == Status::Ok => {
                        let deadline = slo_deadline(&job.info);
                        while deadline < self.finish_estimate(job, ctx, ahead) {
                            let Some(j) = lows.pop() else { break };
                            out[j] = true;
                            protective += 1;
                            ahead -= self.prefill_queue[j].prefill_remaining() as u64;
                        }
                    }
                    AppPriority::Low => lows.push(i),
                    AppPriority::High => {}
                }
                ahead += job.prefill_remaining() as u64;
            }
        }
        if !low_violator {
            for (i, job) in self.prefill_queue.iter().enumerate() {
                if job.info.app_priority == AppPriority::High && status[i] != Status::Ok {
                    out[i] = true;
                }
            }
        }
        if !out.contains(&true) {
            return Vec::new();
        }
        let mut ids = Vec::new();
        let mut keep = Vec::with_capacity(n);
        for (job, gone) in std::mem::take(&mut self.prefill_queue).into_iter().zip(out) {
            if gone {
                ids.push(job.id());
                self.push_relegated(job);
            } else {
                keep.push(job);
            }
        }
        self.prefill_queue = keep;
        self.counters.relegations += ids.len() as u64;
        self.counters.protective_relegations += protective;
        if self.in_flight.is_some_and(|id| ids.contains(&id)) {
            self.in_flight = None;
        }
        ids
    }

    fn push_relegated(&mut self, mut job: Job) {
        job.relegated = true;
        let d = slo_deadline(&job.info);
        let at = self.relegated_queue.partition_point(|r| {
            let rd = slo_deadline(&r.info);
            (rd, r.info.t_arrival, r.id()) < (d, job.info.t_arrival, job.id())
        });
        self.relegated_queue.insert(at, job);
    }

    /// Surviving primary candidates in service order. The partially
    /// prefilled in-flight request keeps the head unless preemption is
    /// allowed, and for the hybrid policy only if it can afford to wait.
    pub fn select_prefill(&mut self, ctx: &IterationContext) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.prefill_queue.len()).collect();
        let Some(id) = self.in_flight else {
            return order;
        };
        let Some(pos) = self.prefill_queue.iter().position(|j| j.id() == id) else {
            self.in_flight = None;
            return order;
        };
        if pos == 0 {
            return order;
        }
        let keep_head = !self.config.preemption_enabled
            || (self.config.policy == Policy::Niyama
                && !self.maybe_preempt(&self.prefill_queue[pos], ctx));
        if keep_head {
            order.remove(pos);
            order.insert(0, pos);
        } else {
            self.counters.preemptions += 1;
        }
        order
    }

    /// Next relegated request to serve, when the primary queue is empty.
    pub fn serve_relegated(&self) -> Option<RequestId> {
        if self.prefill_queue.is_empty() {
            self.relegated_queue.first().map(Job::id)
        } else {
            None
        }
    }

    /// Build the next iteration at time `now`; `None` when idle.
    pub fn assemble_batch(&mut self, now: f64) -> Option<BatchPlan> {
        self.now = self.now.max(now);
        if self.is_idle() {
            return None;
        }
        let alpha = self.alpha.current(self.now);
        if alpha != self.config.alpha {
            self.counters.high_alpha_iterations += 1;
        }
        self.refresh_keys(alpha);
        let ctx = self.iteration_context();
        let relegated = if self.config.relegation_enabled && !self.prefill_queue.is_empty() {
            self.eager_relegate(&ctx)
        } else {
            Vec::new()
        };

        let mut slices = Vec::new();
        let mut left = ctx.budget;
        let from_relegated_queue = self.prefill_queue.is_empty();
        if from_relegated_queue {
            for job in &self.relegated_queue {
                if left == 0 {
                    break;
                }
                let t = job.prefill_remaining().min(left);
                slices.push(PrefillSlice {
                    id: job.id(),
                    tokens: t,
                });
                left -= t;
            }
            self.in_flight = None;
        } else {
            let order = self.select_prefill(&ctx);
            for i in order {
                if left == 0 {
                    break;
                }
                let job = &self.prefill_queue[i];
                let t = job.prefill_remaining().min(left);
                slices.push(PrefillSlice {
                    id: job.id(),
                    tokens: t,
                });
                left -= t;
            }
            self.in_flight = match slices.last() {
                Some(s) if left == 0 => {
                    let j = self
                        .prefill_queue
                        .iter()
                        .find(|j| j.id() == s.id)
                        .expect("slice from queue");
                    (j.prefill_remaining() > s.tokens).then_some(s.id)
                }
                _ => None,
            };
        }

        if slices.is_empty() && self.decode_queue.is_empty() {
            return None;
        }
        let prefill_tokens: u32 = slices.iter().map(|s| s.tokens).sum();
        let predicted = self.config.profile.latency(prefill_tokens, ctx.load);
        self.counters.iterations += 1;
        self.counters.prefill_tokens += prefill_tokens as u64;
        if prefill_tokens == ctx.budget && ctx.budget > 0 {
            self.counters.saturated_iterations += 1;
            self.counters.saturated_budget_tokens += ctx.budget as u64;
        }
        if !self.decode_queue.is_empty() {
            self.counters.decode_iterations += 1;
            if predicted > ctx.min_slack {
                self.counters.safety_exceptions += 1;
            }
            if ctx.infeasible {
                self.counters.infeasible_iterations += 1;
            }
        }
        Some(BatchPlan {
            t_start: self.now,
            decode_ids: self.decode_queue.iter().map(Job::id).collect(),
            prefill_slices: slices,
            chunk_budget: ctx.budget,
            predicted_latency: predicted,
            min_slack: ctx.min_slack,
            infeasible: ctx.infeasible,
            relegated,
            from_relegated_queue,
            alpha,
        })
    }

    /// Apply an executed plan ending at `t_end`: every decode emits one token
    /// stamped `t_end`, and prefills that finish move to the decode queue.
    pub fn on_iteration_complete(&mut self, plan: &BatchPlan, t_end: f64) -> IterationOutcome {
        debug_assert!(t_end >= self.now);
        debug_assert_eq!(plan.decode_ids.len(), self.decode_queue.len());
        self.now = t_end;
        let mut out = IterationOutcome {
            tokens_emitted: self.decode_queue.len(),
            ..Default::default()
        };

        for job in &mut self.decode_queue {
            job.progress.decoded += 1;
            job.token_times.push(t_end);
        }
        let mut i = 0;
        while i < self.decode_queue.len() {
            if self.decode_queue[i].is_complete() {
                let job = self.decode_queue.remove(i);
                self.history.record(job.info.app_id, job.decode_tokens);
                out.completed.push(job.id());
                self.finished.push(job);
            } else {
                i += 1;
            }
        }

        for s in &plan.prefill_slices {
            let queue = if plan.from_relegated_queue {
                &mut self.relegated_queue
            } else {
                &mut self.prefill_queue
            };
            let pos = queue
                .iter()
                .position(|j| j.id() == s.id)
                .expect("planned job still queued");
            let job = &mut queue[pos];
            job.progress.prefill_done += s.tokens;
            if job.prefill_remaining() == 0 {
                let mut job = queue.remove(pos);
                job.t_prefill_done = Some(t_end);
                out.prefills_completed.push(job.id());
                self.decode_queue.push(job);
            }
        }
        out
    }
}
