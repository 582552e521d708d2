//! TOML run configuration.
//!
//! A file holds `[workload]`, `[cost_model]` and `[scheduler]` sections plus
//! an optional `[cluster]` section and a top-level `seed`. Experiment files
//! (see [`crate::experiment`]) reuse the same sections as their base.
//! `configs/schema.toml` documents every key.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cost_model::CostProfile;
use crate::error::{Error, Result};
use crate::policy::{HistoryPrior, Policy};
use crate::sched::{AdaptiveAlpha, SchedulerConfig, DEFAULT_ALPHA_HIGH, DEFAULT_ALPHA_WINDOW_S};
use crate::sim::{Deployment, Dispatch, SiloGroup, SimConfig, TraceSource};
use crate::workload::{
    standard_buckets, ArrivalRate, BucketId, BucketShare, BucketTable, DatasetStats, QosSpec,
    TraceSpec,
};

pub const DEFAULT_SEED: u64 = 1;
pub const REQUIRED_SECTIONS: [&str; 3] = ["workload", "cost_model", "scheduler"];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    dataset: Option<String>,
    prompt_p50: Option<u32>,
    prompt_p90: Option<u32>,
    decode_p50: Option<u32>,
    decode_p90: Option<u32>,
    trace: Option<PathBuf>,
    qps: Option<f64>,
    qps_schedule: Option<Vec<(f64, f64)>>,
    duration_s: Option<f64>,
    #[serde(default)]
    low_priority_fraction: f64,
    buckets: Option<Vec<BucketSection>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ClassName {
    Interactive,
    NonInteractive,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BucketSection {
    id: BucketId,
    class: ClassName,
    ttft_s: Option<f64>,
    tbt_ms: Option<f64>,
    ttlt_s: Option<f64>,
    fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostModelSection {
    base: Option<String>,
    c0_ms: Option<f64>,
    c1_us_per_token: Option<f64>,
    c2_ns_per_token_ctx: Option<f64>,
    min_chunk: Option<u32>,
    max_chunk: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulerSection {
    policy: Option<String>,
    alpha: Option<f64>,
    adaptive_alpha: Option<bool>,
    alpha_high: Option<f64>,
    alpha_window_s: Option<f64>,
    alpha_capacity_qps: Option<f64>,
    relegation_enabled: Option<bool>,
    preemption_enabled: Option<bool>,
    fixed_chunk: Option<u32>,
    history_min_samples: Option<u32>,
    history_prior_mean: Option<f64>,
    history_prior_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterSection {
    replicas: Option<usize>,
    dispatch: Option<Dispatch>,
    deployment: Option<String>,
    silos: Option<Vec<SiloSection>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiloSection {
    buckets: Vec<BucketId>,
    #[serde(default = "one")]
    replicas: usize,
    policy: Option<String>,
    fixed_chunk: Option<u32>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    workload: WorkloadSection,
    cost_model: CostModelSection,
    scheduler: SchedulerSection,
    #[serde(default)]
    cluster: ClusterSection,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse TOML text into a table, naming the file on syntax errors.
pub fn parse_table(text: &str, origin: &Path) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| cfg_err(format!("{}: {e}", origin.display())))
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text, path)
}

/// Resolve a run configuration table. Relative trace paths are taken from
/// `base_dir`; `seed` overrides the file's seed.
pub fn resolve_table(table: &toml::Table, base_dir: &Path, seed: Option<u64>) -> Result<SimConfig> {
    for s in REQUIRED_SECTIONS {
        if !table.contains_key(s) {
            return Err(cfg_err(format!("missing [{s}] section")));
        }
    }
    let file: ConfigFile = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| cfg_err(e.to_string()))?;
    let seed = seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let profile = resolve_profile(&file.cost_model)?;
    let scheduler = resolve_scheduler(&file.scheduler, profile)?;
    let (trace, buckets) = resolve_workload(&file.workload, base_dir, seed)?;
    let (replicas, dispatch, deployment) = resolve_cluster(&file.cluster, &scheduler, &buckets)?;
    let sim = SimConfig {
        trace,
        scheduler,
        replicas,
        dispatch,
        deployment,
        seed,
    };
    sim.validate()?;
    Ok(sim)
}

/// Load a run configuration file.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<SimConfig> {
    let table = read_table(path)?;
    resolve_table(&table, path.parent().unwrap_or(Path::new(".")), seed)
}

/// Short sha256 of the resolved configuration's canonical JSON form.
pub fn config_hash(config: &SimConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

fn resolve_profile(s: &CostModelSection) -> Result<CostProfile> {
    let base = match s.base.as_deref() {
        None | Some("default") => CostProfile::default(),
        Some("paper-scale") => CostProfile::paper_scale(),
        Some(other) => {
            return Err(cfg_err(format!(
                "unknown cost_model base `{other}` (expected default|paper-scale)"
            )))
        }
    };
    CostProfile::new(
        s.c0_ms.map_or(base.c0, |v| v * 1e-3),
        s.c1_us_per_token.map_or(base.c1, |v| v * 1e-6),
        s.c2_ns_per_token_ctx.map_or(base.c2, |v| v * 1e-9),
        s.min_chunk.unwrap_or(base.min_chunk),
        s.max_chunk.unwrap_or(base.max_chunk),
    )
}

fn resolve_scheduler(s: &SchedulerSection, profile: CostProfile) -> Result<SchedulerConfig> {
    let policy: Policy = s
        .policy
        .as_deref()
        .ok_or_else(|| cfg_err("[scheduler] needs `policy`"))?
        .parse()?;
    let mut c = SchedulerConfig::for_policy(policy, profile);
    if let Some(a) = s.alpha {
        c.alpha = a;
    }
    let adaptive = s.adaptive_alpha.unwrap_or(c.adaptive_alpha.is_some());
    c.adaptive_alpha = adaptive.then(|| AdaptiveAlpha {
        alpha_high: s.alpha_high.unwrap_or(DEFAULT_ALPHA_HIGH),
        window_s: s.alpha_window_s.unwrap_or(DEFAULT_ALPHA_WINDOW_S),
        capacity_qps: s.alpha_capacity_qps,
    });
    if let Some(r) = s.relegation_enabled {
        c.relegation_enabled = r;
    }
    if let Some(p) = s.preemption_enabled {
        c.preemption_enabled = p;
    }
    if s.fixed_chunk.is_some() {
        c.fixed_chunk = s.fixed_chunk;
    }
    let prior = HistoryPrior::default();
    c.history_prior = HistoryPrior {
        mean: s.history_prior_mean.unwrap_or(prior.mean),
        std: s.history_prior_std.unwrap_or(prior.std),
        min_samples: s.history_min_samples.unwrap_or(prior.min_samples),
    };
    c.validate()?;
    Ok(c)
}

fn resolve_dataset(w: &WorkloadSection) -> Result<DatasetStats> {
    let custom = [w.prompt_p50, w.prompt_p90, w.decode_p50, w.decode_p90];
    let d = match custom {
        [None, None, None, None] => {
            let name = w
                .dataset
                .as_deref()
                .ok_or_else(|| cfg_err("[workload] needs `dataset` or `trace`"))?;
            DatasetStats::by_name(name).ok_or_else(|| {
                cfg_err(format!(
                    "unknown dataset `{name}` (expected sharegpt|azure-conv|azure-code, or give all four percentiles)"
                ))
            })?
        }
        [Some(p50), Some(p90), Some(d50), Some(d90)] => {
            DatasetStats::new(w.dataset.as_deref().unwrap_or("custom"), p50, p90, d50, d90)
        }
        _ => {
            return Err(cfg_err(
                "custom dataset needs prompt_p50, prompt_p90, decode_p50 and decode_p90",
            ))
        }
    };
    d.validate()?;
    Ok(d)
}

fn resolve_buckets(w: &WorkloadSection) -> Result<Vec<BucketShare>> {
    let Some(list) = &w.buckets else {
        return Ok(standard_buckets());
    };
    if list.is_empty() {
        return Err(cfg_err("[workload] buckets is empty"));
    }
    let given = list.iter().filter(|b| b.fraction.is_some()).count();
    if given != 0 && given != list.len() {
        return Err(cfg_err("give `fraction` for every bucket or for none"));
    }
    list.iter()
        .map(|b| {
            let qos = match b.class {
                ClassName::Interactive => {
                    if b.ttlt_s.is_some() {
                        return Err(cfg_err(format!(
                            "interactive bucket {} cannot set ttlt_s",
                            b.id
                        )));
                    }
                    let ttft = b
                        .ttft_s
                        .ok_or_else(|| cfg_err(format!("bucket {} needs ttft_s", b.id)))?;
                    let tbt = b
                        .tbt_ms
                        .ok_or_else(|| cfg_err(format!("bucket {} needs tbt_ms", b.id)))?;
                    QosSpec::interactive(b.id, ttft, tbt * 1e-3)?
                }
                ClassName::NonInteractive => {
                    if b.ttft_s.is_some() || b.tbt_ms.is_some() {
                        return Err(cfg_err(format!(
                            "non-interactive bucket {} cannot set ttft_s/tbt_ms",
                            b.id
                        )));
                    }
                    let ttlt = b
                        .ttlt_s
                        .ok_or_else(|| cfg_err(format!("bucket {} needs ttlt_s", b.id)))?;
                    QosSpec::non_interactive(b.id, ttlt)?
                }
            };
            Ok(BucketShare {
                qos,
                fraction: b.fraction.unwrap_or(1.0 / list.len() as f64),
            })
        })
        .collect()
}

fn resolve_workload(
    w: &WorkloadSection,
    base_dir: &Path,
    seed: u64,
) -> Result<(TraceSource, Vec<BucketShare>)> {
    let mix = resolve_buckets(w)?;
    if let Some(path) = &w.trace {
        if w.qps.is_some()
            || w.qps_schedule.is_some()
            || w.duration_s.is_some()
            || w.dataset.is_some()
        {
            return Err(cfg_err(
                "a trace file excludes dataset, qps, qps_schedule and duration_s",
            ));
        }
        let buckets: BucketTable = mix.iter().map(|b| (b.qos.bucket_id(), b.qos)).collect();
        let path = if path.is_absolute() {
            path.clone()
        } else {
            base_dir.join(path)
        };
        return Ok((TraceSource::File { path, buckets }, mix));
    }
    let arrivals = match (w.qps, &w.qps_schedule) {
        (Some(q), None) => ArrivalRate::Constant(q),
        (None, Some(s)) => ArrivalRate::Schedule(s.clone()),
        _ => {
            return Err(cfg_err(
                "[workload] needs exactly one of `qps` and `qps_schedule`",
            ))
        }
    };
    let duration = w
        .duration_s
        .ok_or_else(|| cfg_err("[workload] needs `duration_s`"))?;
    let spec = TraceSpec {
        duration,
        arrivals,
        dataset: resolve_dataset(w)?,
        bucket_mix: mix.clone(),
        low_priority_fraction: w.low_priority_fraction,
        seed,
    };
    spec.validate()?;
    Ok((TraceSource::Generated(spec), mix))
}

fn resolve_cluster(
    c: &ClusterSection,
    shared: &SchedulerConfig,
    mix: &[BucketShare],
) -> Result<(usize, Dispatch, Deployment)> {
    let dispatch = c.dispatch.unwrap_or_default();
    match c.deployment.as_deref().unwrap_or("shared") {
        "shared" => {
            if c.silos.is_some() {
                return Err(cfg_err("`silos` requires deployment = \"siloed\""));
            }
            Ok((c.replicas.unwrap_or(1), dispatch, Deployment::Shared))
        }
        "siloed" => {
            let silos = c
                .silos
                .as_ref()
                .ok_or_else(|| cfg_err("siloed deployment needs [[cluster.silos]]"))?;
            let groups = silos
                .iter()
                .map(|s| {
                    let scheduler = match (&s.policy, s.fixed_chunk) {
                        (None, None) => None,
                        (policy, chunk) => {
                            let policy = match policy {
                                Some(p) => p.parse()?,
                                None => shared.policy,
                            };
                            let mut sc = SchedulerConfig::for_policy(policy, shared.profile);
                            sc.history_prior = shared.history_prior;
                            if chunk.is_some() {
                                sc.fixed_chunk = chunk;
                            }
                            Some(sc)
                        }
                    };
                    Ok(SiloGroup {
                        buckets: s.buckets.clone(),
                        replicas: s.replicas,
                        scheduler,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let total = groups.iter().map(|g| g.replicas).sum();
            if let Some(r) = c.replicas {
                if r != total {
                    return Err(cfg_err(format!("replicas = {r} but silos hold {total}")));
                }
            }
            if let Some(b) = groups
                .iter()
                .flat_map(|g| &g.buckets)
                .find(|b| !mix.iter().any(|m| m.qos.bucket_id() == **b))
            {
                return Err(cfg_err(format!(
                    "silo lists bucket {b}, which the workload does not define"
                )));
            }
            Ok((total, dispatch, Deployment::Siloed(groups)))
        }
        other => Err(cfg_err(format!(
            "unknown deployment `{other}` (expected shared|siloed)"
        ))),
    }
}

/// Deep-merge `overlay` into `base`: tables merge key by key, anything else
/// replaces.
pub fn merge_tables(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
