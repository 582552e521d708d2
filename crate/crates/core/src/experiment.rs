//! Experiments: a base configuration, named variants and sweep axes.
//!
//! An experiment file is a run configuration plus an `[experiment]` table and
//! any number of `[[variant]]` tables. Each variant carries a `name` and
//! partial sections that are deep-merged over the base before resolving.
//! Axes left out of `[experiment]` keep each variant's own value.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, merge_tables, parse_table, read_table, resolve_table};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sched::SchedulerConfig;
use crate::sim::{
    capacity_search, gpus_required, run, simulate_bounded, Bounded, CapacityBounds, CapacityPlan,
    CapacityResult, Deployment, GroupStats, SimConfig, Summary, TraceSource,
};
use crate::workload::{ArrivalRate, BucketId, TraceSpec};

/// Presets compiled into the binary, by name.
pub const PRESETS: [(&str, &str); 5] = [
    (
        "uniform-load",
        include_str!("../configs/presets/uniform-load.toml"),
    ),
    (
        "overload-diurnal",
        include_str!("../configs/presets/overload-diurnal.toml"),
    ),
    (
        "alpha-sweep",
        include_str!("../configs/presets/alpha-sweep.toml"),
    ),
    (
        "capacity-50qps",
        include_str!("../configs/presets/capacity-50qps.toml"),
    ),
    ("ablation", include_str!("../configs/presets/ablation.toml")),
];

pub const DEFAULT_PROBE_DURATION_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySpec {
    pub qps_lo: f64,
    pub qps_hi: f64,
    pub tol: f64,
    #[serde(default = "default_budget")]
    pub violation_budget_pct: f64,
    #[serde(default = "default_target")]
    pub target_qps: f64,
    #[serde(default = "default_probe")]
    pub probe_duration_s: f64,
}

fn default_budget() -> f64 {
    1.0
}

fn default_target() -> f64 {
    50.0
}

fn default_probe() -> f64 {
    DEFAULT_PROBE_DURATION_S
}

impl CapacitySpec {
    pub fn bounds(&self) -> CapacityBounds {
        CapacityBounds {
            qps_lo: self.qps_lo,
            qps_hi: self.qps_hi,
            tol: self.tol,
            violation_budget_pct: self.violation_budget_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub variants: Vec<Variant>,
    /// `None` keeps the variant's configured arrivals.
    pub qps: Vec<Option<f64>>,
    /// `None` keeps the variant's alpha; a value pins it and turns off the
    /// load-adaptive switch.
    pub alpha: Vec<Option<f64>>,
    /// `None` keeps the variant's scheduler; a value substitutes the canonical
    /// configuration for that policy.
    pub policies: Vec<Option<Policy>>,
    pub capacity: Option<CapacitySpec>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    qps: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
    policies: Option<Vec<String>>,
    out: Option<PathBuf>,
    capacity: Option<CapacitySpec>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn axis<T: Copy>(name: &str, values: Option<Vec<T>>) -> Result<Vec<Option<T>>> {
    match values {
        None => Ok(vec![None]),
        Some(v) if v.is_empty() => Err(cfg_err(format!("experiment axis `{name}` is empty"))),
        Some(v) => Ok(v.into_iter().map(Some).collect()),
    }
}

impl ExperimentSpec {
    pub fn from_table(mut table: toml::Table, base_dir: &Path, seed: Option<u64>) -> Result<Self> {
        let header = table
            .remove("experiment")
            .ok_or_else(|| cfg_err("missing [experiment] section"))?;
        let header: Header = header
            .try_into()
            .map_err(|e| cfg_err(format!("[experiment]: {e}")))?;
        let overlays = match table.remove("variant") {
            None => Vec::new(),
            Some(toml::Value::Array(a)) => a,
            Some(_) => {
                return Err(cfg_err(
                    "`variant` must be an array of tables ([[variant]])",
                ))
            }
        };

        let mut variants = Vec::new();
        if overlays.is_empty() {
            variants.push(Variant {
                name: header.name.clone(),
                config: resolve_table(&table, base_dir, seed)?,
            });
        }
        for o in overlays {
            let toml::Value::Table(mut o) = o else {
                return Err(cfg_err("every [[variant]] must be a table"));
            };
            let name = match o.remove("name") {
                Some(toml::Value::String(s)) => s,
                _ => return Err(cfg_err("every [[variant]] needs a string `name`")),
            };
            if variants.iter().any(|v: &Variant| v.name == name) {
                return Err(cfg_err(format!("duplicate variant name `{name}`")));
            }
            let mut merged = table.clone();
            merge_tables(&mut merged, &o);
            let config = resolve_table(&merged, base_dir, seed)
                .map_err(|e| cfg_err(format!("variant `{name}`: {e}")))?;
            variants.push(Variant { name, config });
        }

        let policies = match header.policies {
            None => vec![None],
            Some(p) if p.is_empty() => return Err(cfg_err("experiment axis `policies` is empty")),
            Some(p) => p
                .iter()
                .map(|s| s.parse().map(Some))
                .collect::<Result<Vec<_>>>()?,
        };
        if let Some(c) = &header.capacity {
            c.bounds().validate()?;
            if !(c.target_qps > 0.0 && c.probe_duration_s > 0.0) {
                return Err(cfg_err(
                    "capacity target_qps and probe_duration_s must be > 0",
                ));
            }
        }
        let spec = ExperimentSpec {
            name: header.name,
            variants,
            qps: axis("qps", header.qps)?,
            alpha: axis("alpha", header.alpha)?,
            policies,
            capacity: header.capacity,
            out: header.out,
        };
        spec.points()?;
        Ok(spec)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        Self::from_table(
            read_table(path)?,
            path.parent().unwrap_or(Path::new(".")),
            seed,
        )
    }

    pub fn preset(name: &str, seed: Option<u64>) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            cfg_err(format!(
                "unknown preset `{name}` (expected one of {})",
                names.join(", ")
            ))
        })?;
        Self::from_table(parse_table(text, Path::new(name))?, Path::new("."), seed)
    }

    /// A file path if one exists, else a preset name.
    pub fn load_or_preset(arg: &str, seed: Option<u64>) -> Result<Self> {
        let path = Path::new(arg);
        if path.exists() || PRESETS.iter().all(|(n, _)| *n != arg) {
            Self::load(path, seed)
        } else {
            Self::preset(arg, seed)
        }
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// The cartesian product variant x policy x qps x alpha, in that nesting
    /// order.
    pub fn points(&self) -> Result<Vec<Point>> {
        let mut out = Vec::new();
        for v in &self.variants {
            for &p in &self.policies {
                for &q in &self.qps {
                    for &a in &self.alpha {
                        let config = apply_axes(&v.config, p, q, a)
                            .map_err(|e| cfg_err(format!("variant `{}`: {e}", v.name)))?;
                        out.push(Point::new(&v.name, config));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Apply one value of each axis to a configuration.
pub fn apply_axes(
    base: &SimConfig,
    policy: Option<Policy>,
    qps: Option<f64>,
    alpha: Option<f64>,
) -> Result<SimConfig> {
    let mut c = base.clone();
    if let Some(p) = policy {
        if !matches!(c.deployment, Deployment::Shared) {
            return Err(cfg_err(
                "the policies axis applies to shared deployments only",
            ));
        }
        let prior = c.scheduler.history_prior;
        c.scheduler = crate::sched::SchedulerConfig::for_policy(p, c.scheduler.profile);
        c.scheduler.history_prior = prior;
    }
    if let Some(q) = qps {
        set_constant_rate(&mut c, q)?;
    }
    if let Some(a) = alpha {
        let pin = |s: &mut crate::sched::SchedulerConfig| {
            s.alpha = a;
            s.adaptive_alpha = None;
        };
        pin(&mut c.scheduler);
        if let Deployment::Siloed(groups) = &mut c.deployment {
            groups
                .iter_mut()
                .filter_map(|g| g.scheduler.as_mut())
                .for_each(pin);
        }
    }
    c.validate()?;
    Ok(c)
}

fn generated(c: &mut SimConfig) -> Result<&mut TraceSpec> {
    match &mut c.trace {
        TraceSource::Generated(spec) => Ok(spec),
        _ => Err(cfg_err(
            "sweeping qps needs a generated workload, not a trace file",
        )),
    }
}

fn set_constant_rate(c: &mut SimConfig, qps: f64) -> Result<()> {
    generated(c)?.arrivals = ArrivalRate::Constant(qps);
    Ok(())
}

/// One fully resolved run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub variant: String,
    pub config: SimConfig,
    pub hash: String,
}

impl Point {
    pub fn new(variant: &str, config: SimConfig) -> Self {
        let hash = config_hash(&config);
        Point {
            variant: variant.to_string(),
            config,
            hash,
        }
    }

    pub fn policy_label(&self) -> String {
        policy_label(&self.config)
    }

    pub fn alpha_label(&self) -> String {
        alpha_label(&self.config)
    }

    /// Mean offered rate of a generated workload.
    pub fn qps(&self) -> Option<f64> {
        match &self.config.trace {
            TraceSource::Generated(s) => Some(s.arrivals.mean_qps(s.duration)),
            _ => None,
        }
    }
}

/// Schedulers in effect: the shared one, or one per silo.
fn schedulers(c: &SimConfig) -> Vec<&SchedulerConfig> {
    match &c.deployment {
        Deployment::Siloed(groups) => groups
            .iter()
            .map(|g| g.scheduler.as_ref().unwrap_or(&c.scheduler))
            .collect(),
        _ => vec![&c.scheduler],
    }
}

fn policy_label(c: &SimConfig) -> String {
    let mut names: Vec<_> = schedulers(c).iter().map(|s| s.policy.as_str()).collect();
    names.dedup();
    names.join("+")
}

fn alpha_label(c: &SimConfig) -> String {
    let mut labels: Vec<_> = schedulers(c)
        .iter()
        .map(|s| match s.adaptive_alpha {
            Some(_) if s.policy == Policy::Niyama => "adaptive".to_string(),
            _ => s.alpha.to_string(),
        })
        .collect();
    labels.dedup();
    labels.join("+")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: Point,
    pub outcome: std::result::Result<Summary, String>,
    /// Exit code of the failure, 0 on success.
    pub exit_code: i32,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| cfg_err(format!("cannot start worker pool: {e}")))
}

/// Run every point on `jobs` worker threads; results keep point order.
pub fn run_sweep(points: Vec<Point>, jobs: usize) -> Result<Vec<PointResult>> {
    let results = pool(jobs)?.install(|| {
        points
            .into_par_iter()
            .map(|point| match run(&point.config) {
                Ok(r) => PointResult {
                    point,
                    outcome: Ok(r.summary),
                    exit_code: 0,
                },
                Err(e) => {
                    log::error!("variant `{}` failed: {e}", point.variant);
                    PointResult {
                        point,
                        exit_code: e.exit_code(),
                        outcome: Err(e.to_string()),
                    }
                }
            })
            .collect()
    });
    Ok(results)
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "policy",
    "qps",
    "alpha",
    "bucket",
    "metric",
    "p50",
    "p95",
    "p99",
    "violation_pct",
    "variant",
    "status",
    "config_hash",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn groups(s: &Summary) -> Vec<&GroupStats> {
    let mut g = vec![&s.overall];
    g.extend(s.buckets.iter());
    g.extend([&s.long, &s.short, &s.high_priority, &s.low_priority]);
    g
}

/// Long-format rows: one per (group, metric), or one failed row.
pub fn write_summary_csv<W: Write>(out: W, results: &[PointResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in results {
        let p = &r.point;
        let lead = [p.policy_label(), opt(p.qps()), p.alpha_label()];
        match &r.outcome {
            Ok(s) => {
                for g in groups(s) {
                    for (metric, pc) in [("ttft", &g.ttft), ("tbt", &g.tbt), ("ttlt", &g.ttlt)] {
                        let mut row = lead.to_vec();
                        row.extend([
                            g.label.clone(),
                            metric.to_string(),
                            opt(pc.p50),
                            opt(pc.p95),
                            opt(pc.p99),
                            g.violation_pct.to_string(),
                            p.variant.clone(),
                            "ok".to_string(),
                            p.hash.clone(),
                        ]);
                        w.write_record(&row).map_err(csv_err)?;
                    }
                }
            }
            Err(msg) => {
                let mut row = lead.to_vec();
                row.extend(["all", "", "", "", "", ""].map(String::from));
                row.extend([p.variant.clone(), format!("failed: {msg}"), p.hash.clone()]);
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One capacity search: a shared variant, or one silo of a siloed variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityRow {
    pub variant: String,
    pub policy: String,
    pub alpha: String,
    /// `shared` or `silo-<k>`.
    pub group: String,
    pub buckets: Vec<BucketId>,
    /// Share of the target load this group must carry.
    pub offered_qps: f64,
    pub result: std::result::Result<CapacityResult, String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuRow {
    pub variant: String,
    pub policy: String,
    pub alpha: String,
    pub deployment: String,
    pub target_qps: f64,
    pub gpus: std::result::Result<u64, String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub rows: Vec<CapacityRow>,
    pub gpus: Vec<GpuRow>,
}

impl CapacityReport {
    pub fn exit_code(&self) -> i32 {
        let failed = self.rows.iter().any(|r| r.result.is_err())
            || self.gpus.iter().any(|g| g.gpus.is_err());
        if failed {
            2
        } else {
            0
        }
    }

    pub fn capacity(&self, variant: &str) -> Option<f64> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.variant == variant).collect();
        match rows.as_slice() {
            [r] => r.result.as_ref().ok().map(|c| c.capacity),
            _ => None,
        }
    }

    pub fn gpus(&self, variant: &str) -> Option<u64> {
        self.gpus
            .iter()
            .find(|g| g.variant == variant)
            .and_then(|g| g.gpus.as_ref().ok().copied())
    }
}

/// Single-replica probe templates for one configuration, with the load share
/// each must carry.
fn capacity_groups(
    c: &SimConfig,
    target: f64,
) -> Result<Vec<(String, Vec<BucketId>, f64, SimConfig)>> {
    let mut single = c.clone();
    single.replicas = 1;
    single.deployment = Deployment::Shared;
    let spec = generated(&mut single)?.clone();
    let all = spec.bucket_mix.iter().map(|b| b.qos.bucket_id()).collect();
    match &c.deployment {
        Deployment::Shared => Ok(vec![("shared".to_string(), all, target, single)]),
        Deployment::Siloed(groups) => groups
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let mut t = single.clone();
                if let Some(s) = &g.scheduler {
                    t.scheduler = s.clone();
                }
                let ts = generated(&mut t)?;
                ts.bucket_mix
                    .retain(|b| g.buckets.contains(&b.qos.bucket_id()));
                let share: f64 = ts.bucket_mix.iter().map(|b| b.fraction).sum();
                if !(share > 0.0) {
                    return Err(cfg_err(format!("silo {k} receives no traffic")));
                }
                ts.bucket_mix.iter_mut().for_each(|b| b.fraction /= share);
                let sum: f64 = ts.bucket_mix.iter().map(|b| b.fraction).sum();
                ts.bucket_mix.last_mut().expect("nonempty").fraction += 1.0 - sum;
                Ok((format!("silo-{k}"), g.buckets.clone(), target * share, t))
            })
            .collect(),
    }
}

/// Capacity per variant (and per policy/alpha axis value) and the replicas
/// each needs for the target load.
pub fn run_capacity(spec: &ExperimentSpec, jobs: usize) -> Result<CapacityReport> {
    let cap = spec.capacity.ok_or_else(|| {
        cfg_err(format!(
            "experiment `{}` has no [experiment.capacity]",
            spec.name
        ))
    })?;
    struct Task {
        row: CapacityRow,
        template: SimConfig,
    }
    let mut tasks = Vec::new();
    let mut plans = Vec::new();
    for v in &spec.variants {
        for &p in &spec.policies {
            for &a in &spec.alpha {
                let c = apply_axes(&v.config, p, None, a)?;
                let (policy, alpha) = (policy_label(&c), alpha_label(&c));
                let first = tasks.len();
                for (group, buckets, offered, mut template) in capacity_groups(&c, cap.target_qps)?
                {
                    generated(&mut template)?.duration = cap.probe_duration_s;
                    let row = CapacityRow {
                        variant: v.name.clone(),
                        policy: policy.clone(),
                        alpha: alpha.clone(),
                        group,
                        buckets,
                        offered_qps: offered,
                        result: Err(String::new()),
                        config_hash: config_hash(&template),
                    };
                    tasks.push(Task { row, template });
                }
                let deployment = if matches!(c.deployment, Deployment::Shared) {
                    "shared"
                } else {
                    "siloed"
                };
                plans.push((
                    v.name.clone(),
                    policy,
                    alpha,
                    deployment,
                    first..tasks.len(),
                    config_hash(&c),
                ));
            }
        }
    }

    let rows: Vec<CapacityRow> = pool(jobs)?.install(|| {
        tasks
            .into_par_iter()
            .map(|Task { mut row, template }| {
                let probe = |q: f64| -> Result<f64> {
                    let mut c = template.clone();
                    set_constant_rate(&mut c, q)?;
                    let run = simulate_bounded(&c, Some(cap.violation_budget_pct))?;
                    let at_least = if matches!(run, Bounded::Exceeded { .. }) {
                        ">= "
                    } else {
                        ""
                    };
                    let v = run.violation_pct()?;
                    log::info!(
                        "{} {}: {q} qps -> {at_least}{v:.3}% violated",
                        row.variant,
                        row.group
                    );
                    Ok(v)
                };
                row.result = capacity_search(cap.bounds(), probe).map_err(|e| e.to_string());
                if let Err(e) = &row.result {
                    log::error!(
                        "capacity search for `{}` {} failed: {e}",
                        row.variant,
                        row.group
                    );
                }
                row
            })
            .collect()
    });

    let gpus = plans
        .into_iter()
        .map(|(variant, policy, alpha, deployment, range, config_hash)| {
            let group = &rows[range];
            let gpus = group
                .iter()
                .map(|r| {
                    r.result
                        .as_ref()
                        .map(|c| (r.offered_qps, c.capacity))
                        .map_err(Clone::clone)
                })
                .collect::<std::result::Result<Vec<_>, String>>()
                .and_then(|caps| {
                    let plan = if deployment == "shared" {
                        CapacityPlan::Shared {
                            capacity: caps[0].1,
                        }
                    } else {
                        CapacityPlan::Siloed(caps)
                    };
                    gpus_required(cap.target_qps, &plan).map_err(|e| e.to_string())
                });
            GpuRow {
                variant,
                policy,
                alpha,
                deployment: deployment.to_string(),
                target_qps: cap.target_qps,
                gpus,
                config_hash,
            }
        })
        .collect();
    Ok(CapacityReport { rows, gpus })
}

pub const CAPACITY_HEADER: [&str; 13] = [
    "variant",
    "policy",
    "alpha",
    "group",
    "buckets",
    "offered_qps",
    "capacity",
    "at_lower_bound",
    "at_upper_bound",
    "non_monotone",
    "probes",
    "status",
    "config_hash",
];

pub const GPU_HEADER: [&str; 8] = [
    "variant",
    "policy",
    "alpha",
    "deployment",
    "target_qps",
    "gpus",
    "status",
    "config_hash",
];

fn status<T>(r: &std::result::Result<T, String>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => format!("failed: {e}"),
    }
}

pub fn write_capacity_csv<W: Write>(out: W, report: &CapacityReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CAPACITY_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        let buckets = r
            .buckets
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let (cap, lo, hi, nm, probes) = match &r.result {
            Ok(c) => (
                c.capacity.to_string(),
                c.at_lower_bound.to_string(),
                c.at_upper_bound.to_string(),
                c.non_monotone.to_string(),
                c.probes.len().to_string(),
            ),
            Err(_) => Default::default(),
        };
        w.write_record([
            r.variant.clone(),
            r.policy.clone(),
            r.alpha.clone(),
            r.group.clone(),
            buckets,
            r.offered_qps.to_string(),
            cap,
            lo,
            hi,
            nm,
            probes,
            status(&r.result),
            r.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gpu_csv<W: Write>(out: W, report: &CapacityReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(GPU_HEADER).map_err(csv_err)?;
    for g in &report.gpus {
        w.write_record([
            g.variant.clone(),
            g.policy.clone(),
            g.alpha.clone(),
            g.deployment.clone(),
            g.target_qps.to_string(),
            g.gpus.as_ref().map(|n| n.to_string()).unwrap_or_default(),
            status(&g.gpus),
            g.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
