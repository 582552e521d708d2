//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. `ACCEPTANCE_ONLY=4,7` runs a subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use slosim::config::config_hash;
use slosim::cost_model::CostProfile;
use slosim::experiment::{
    apply_axes, run_capacity, run_sweep, write_summary_csv, CapacitySpec, ExperimentSpec, Variant,
};
use slosim::policy::{
    baseline_priority, hybrid_priority, remaining_work, srpf_alpha_threshold, DecodeHistory,
    HistoryPrior, JobProgress, Policy, PriorityKey,
};
use slosim::sim::{run, simulate, SimConfig, SimReport, Summary};
use slosim::workload::rng::PortableRng;
use slosim::workload::{standard_buckets, AppId, AppPriority, QosClass, RequestInfo};

type Outcome = Result<String, String>;

#[derive(Default)]
struct Ctx {
    capacities: HashMap<String, f64>,
}

impl Ctx {
    /// Single-variant capacity, memoised on the resolved configuration.
    fn capacity(
        &mut self,
        name: &str,
        config: &SimConfig,
        cap: CapacitySpec,
    ) -> Result<f64, String> {
        let key = format!("{}{cap:?}", config_hash(config));
        if let Some(&c) = self.capacities.get(&key) {
            return Ok(c);
        }
        let spec = ExperimentSpec {
            name: name.into(),
            variants: vec![Variant {
                name: name.into(),
                config: config.clone(),
            }],
            qps: vec![None],
            alpha: vec![None],
            policies: vec![None],
            capacity: Some(cap),
            out: None,
        };
        let report = run_capacity(&spec, jobs()).map_err(|e| e.to_string())?;
        let row = &report.rows[0];
        let r = row.result.as_ref().map_err(|e| format!("{name}: {e}"))?;
        if r.at_lower_bound || r.at_upper_bound {
            return Err(format!(
                "{name}: capacity {} sits on a search bound",
                r.capacity
            ));
        }
        self.capacities.insert(key, r.capacity);
        Ok(r.capacity)
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn preset(name: &str) -> ExperimentSpec {
    ExperimentSpec::preset(name, None).expect("preset parses")
}

fn at(config: &SimConfig, policy: Option<Policy>, qps: f64) -> SimConfig {
    apply_axes(config, policy, Some(qps), None).expect("valid point")
}

fn summary(config: &SimConfig) -> Summary {
    run(config).expect("run succeeds").summary
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    slosim::sim::nearest_rank(&xs, 50.0).unwrap_or(f64::NAN)
}

fn criterion_1(_: &mut Ctx) -> Outcome {
    let profile = CostProfile::<f64>::default();
    let buckets = standard_buckets();
    let mut rng = PortableRng::new(2024, 99);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.open01();
    let mut history = DecodeHistory::new(HistoryPrior::default());
    for app in 0..4u32 {
        for _ in 0..(app * 20) {
            history.record(AppId(app), uniform(1.0, 900.0) as u32);
        }
    }
    let (mut edf_sets, mut srpf_sets) = (0, 0);
    for set in 0..1000 {
        let n = uniform(2.0, 51.0) as usize;
        let items: Vec<(RequestInfo, JobProgress)> = (0..n)
            .map(|i| {
                let prompt = uniform(1.0, 8000.0) as u32;
                let info = RequestInfo {
                    id: i as u64,
                    t_arrival: (uniform(0.0, 120.0) * 1e3).round() / 1e3,
                    prompt_tokens: prompt,
                    qos: buckets[uniform(0.0, 3.0) as usize].qos,
                    app_priority: AppPriority::High,
                    app_id: AppId(uniform(0.0, 4.0) as u32),
                };
                let progress = JobProgress {
                    prefill_done: uniform(0.0, prompt as f64) as u32,
                    decoded: 0,
                };
                (info, progress)
            })
            .collect();
        let order = |key: &dyn Fn(&RequestInfo, JobProgress) -> PriorityKey| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| key(&items[i].0, items[i].1));
            idx
        };
        let hybrid0 = order(&|r, p| hybrid_priority(r, p, 0.0, &history, &profile).unwrap());
        let edf = order(&|r, p| baseline_priority(r, p, Policy::Edf).unwrap());
        if hybrid0 != edf {
            return Err(format!("set {set}: alpha=0 order differs from EDF"));
        }
        edf_sets += 1;

        let pairs: Vec<(f64, f64)> = items
            .iter()
            .map(|(r, p)| {
                (
                    slosim::policy::slo_deadline(r),
                    remaining_work(r, *p, &history, &profile),
                )
            })
            .collect();
        let mut works: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        works.sort_by(f64::total_cmp);
        if works.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let Some(threshold) = srpf_alpha_threshold(&pairs) else {
            continue;
        };
        let alpha = threshold * 1.01;
        let hybrid = order(&|r, p| hybrid_priority(r, p, alpha, &history, &profile).unwrap());
        let mut srpf: Vec<usize> = (0..n).collect();
        srpf.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1));
        if hybrid != srpf {
            return Err(format!(
                "set {set}: alpha above threshold differs from SRPF order"
            ));
        }
        srpf_sets += 1;
    }
    check(
        srpf_sets >= 900,
        format!("{edf_sets} sets match EDF at alpha=0, {srpf_sets} match SRPF above threshold"),
    )
}

fn criterion_2(_: &mut Ctx) -> Outcome {
    let base = preset("uniform-load").variants[0].config.clone();
    let mut details = Vec::new();
    let mut ok = true;
    for qps in [4.0, 8.0, 12.0, 16.0, 20.0] {
        let s = summary(&at(&base, Some(Policy::Niyama), qps));
        let c = &s.counters;
        ok &= c.safety_exceptions == 0 && s.tbt_token_violation_pct < 0.1;
        details.push(format!(
            "{qps}qps: {}/{} exceptions, tbt {:.4}%",
            c.safety_exceptions, c.decode_iterations, s.tbt_token_violation_pct
        ));
    }
    check(ok, details.join("; "))
}

fn criterion_3(_: &mut Ctx) -> Outcome {
    let p = CostProfile::<f64>::default();
    let ratio = p.throughput(256) / p.throughput(2048);
    check(
        (ratio - 0.72).abs() <= 0.05,
        format!("tokens/s(256) / tokens/s(2048) = {ratio:.4}"),
    )
}

fn uniform_capacities(ctx: &mut Ctx) -> Result<(SimConfig, f64, f64), String> {
    let spec = preset("uniform-load");
    let base = spec.variants[0].config.clone();
    let cap = spec.capacity.expect("capacity bounds");
    let edf = apply_axes(&base, Some(Policy::Edf), None, None).unwrap();
    let niyama = apply_axes(&base, Some(Policy::Niyama), None, None).unwrap();
    Ok((
        base,
        ctx.capacity("edf", &edf, cap)?,
        ctx.capacity("niyama", &niyama, cap)?,
    ))
}

fn criterion_4(ctx: &mut Ctx) -> Outcome {
    let (base, cap_edf, cap_niyama) = uniform_capacities(ctx)?;
    let low = 0.5 * cap_niyama;
    let [edf, niyama, srpf] =
        [Policy::Edf, Policy::Niyama, Policy::Srpf].map(|p| summary(&at(&base, Some(p), low)));
    let a =
        edf.violation_pct == 0.0 && niyama.violation_pct == 0.0 && srpf.long.violation_pct > 0.0;
    let mid = (cap_edf + cap_niyama) / 2.0;
    let [fcfs_m, edf_m, niyama_m] =
        [Policy::Fcfs, Policy::Edf, Policy::Niyama].map(|p| summary(&at(&base, Some(p), mid)));
    let b =
        niyama_m.violation_pct < edf_m.violation_pct && edf_m.violation_pct < fcfs_m.violation_pct;
    let ratio = cap_niyama / cap_edf;
    let c = ratio >= 1.2;
    check(
        a && b && c,
        format!(
            "(a) {low:.2}qps: edf {:.2}% niyama {:.2}% srpf-long {:.2}% [{}]; \
             (b) {mid:.2}qps: niyama {:.2}% < edf {:.2}% < fcfs {:.2}% [{}]; \
             (c) capacity niyama {cap_niyama} / edf {cap_edf} = {ratio:.3} [{}]",
            edf.violation_pct,
            niyama.violation_pct,
            srpf.long.violation_pct,
            pass(a),
            niyama_m.violation_pct,
            edf_m.violation_pct,
            fcfs_m.violation_pct,
            pass(b),
            pass(c)
        ),
    )
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn interactive_ttft(
    report: &SimReport,
    keep: impl Fn(&slosim::sim::RequestRecord) -> bool,
) -> Vec<f64> {
    report
        .requests
        .iter()
        .filter(|r| r.class == QosClass::Interactive && keep(r))
        .map(|r| r.ttft)
        .collect()
}

fn criterion_5(ctx: &mut Ctx) -> Outcome {
    let (base, _, cap) = uniform_capacities(ctx)?;
    let mut niyama = apply_axes(&base, Some(Policy::Niyama), None, None).unwrap();
    if let slosim::sim::TraceSource::Generated(t) = &mut niyama.trace {
        t.duration = 1800.0;
    }
    let low = run(&at(&niyama, None, 0.5 * cap)).unwrap();
    let low_median = median(interactive_ttft(&low, |_| true));
    let over = at(&niyama, None, 1.5 * cap);
    let with = run(&over).unwrap();
    let kept_median = median(interactive_ttft(&with, |r| !r.relegated));
    let relegated = with.summary.relegated_pct;

    let mut off = over.clone();
    off.scheduler.relegation_enabled = false;
    let without = run(&off).unwrap();
    let windows: Vec<f64> = (0..6)
        .map(|w| {
            let (a, b) = (300.0 * w as f64, 300.0 * (w + 1) as f64);
            median(interactive_ttft(&without, |r| {
                r.t_arrival >= a && r.t_arrival < b
            }))
        })
        .collect();
    let growing = windows.windows(2).all(|w| w[1] > w[0]);
    let a = kept_median < 2.0 * low_median;
    let b = relegated <= 10.0;
    check(
        a && b && growing,
        format!(
            "{:.2}qps: kept median TTFT {kept_median:.3}s vs low-load {low_median:.3}s [{}], relegated {relegated:.2}% [{}]; \
             without relegation window medians {} [{}]",
            1.5 * cap,
            pass(a),
            pass(b),
            windows.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(" < "),
            pass(growing)
        ),
    )
}

fn criterion_6(_: &mut Ctx) -> Outcome {
    let spec = preset("overload-diurnal");
    let mut by_policy = HashMap::new();
    for p in spec.points().unwrap() {
        by_policy.insert(p.policy_label(), summary(&p.config));
    }
    let n = &by_policy["niyama"];
    let (fcfs, edf) = (
        by_policy["fcfs"].violation_pct,
        by_policy["edf"].violation_pct,
    );
    let high = n.high_priority.violation_pct;
    let ok = high == 0.0 && n.violation_pct < 15.0 && fcfs > 50.0 && edf > 50.0;
    check(
        ok,
        format!(
            "niyama high {high:.2}% ({} of {}) [{}], overall {:.2}% [{}]; fcfs {fcfs:.2}% edf {edf:.2}% [{}]",
            n.high_priority.violated,
            n.high_priority.requests,
            pass(high == 0.0),
            n.violation_pct,
            pass(n.violation_pct < 15.0),
            pass(fcfs > 50.0 && edf > 50.0)
        ),
    )
}

fn criterion_7(_: &mut Ctx) -> Outcome {
    let spec = preset("capacity-50qps");
    let report = run_capacity(&spec, jobs()).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut best: f64 = 0.0;
    let mut details = Vec::new();
    for ds in ["sharegpt", "azure-conv", "azure-code"] {
        let shared = report
            .gpus(&format!("shared-niyama-{ds}"))
            .ok_or(format!("{ds}: shared search failed"))?;
        let siloed = report
            .gpus(&format!("siloed-edf-{ds}"))
            .ok_or(format!("{ds}: siloed search failed"))?;
        let reduction = 1.0 - shared as f64 / siloed as f64;
        ok &= shared <= siloed;
        best = best.max(reduction);
        details.push(format!(
            "{ds}: shared {shared} vs siloed {siloed} ({:.0}%)",
            100.0 * reduction
        ));
    }
    for r in &report.rows {
        if let Ok(c) = &r.result {
            if c.at_lower_bound || c.at_upper_bound {
                ok = false;
                details.push(format!("{} {} on a search bound", r.variant, r.group));
            }
        }
    }
    check(ok && best >= 0.10, details.join("; "))
}

fn criterion_8(ctx: &mut Ctx) -> Outcome {
    let spec = preset("ablation");
    let cap = spec.capacity.expect("capacity bounds");
    let names = [
        "edf-fixed-chunk",
        "dynamic-chunking",
        "relegation",
        "hybrid-priority",
    ];
    let mut caps = Vec::new();
    for n in names {
        caps.push(ctx.capacity(n, &spec.variant(n).expect("variant").config, cap)?);
    }
    let gain = caps[1] / caps[0] - 1.0;
    let ok = caps[0] < caps[1] && caps[1] <= caps[2] && caps[2] <= caps[3] && gain >= 0.10;
    let listing: Vec<String> = names
        .iter()
        .zip(&caps)
        .map(|(n, c)| format!("{n} {c}"))
        .collect();
    check(
        ok,
        format!(
            "{}; dynamic chunking gain {:.1}%",
            listing.join(", "),
            100.0 * gain
        ),
    )
}

fn criterion_9(_: &mut Ctx) -> Outcome {
    let mut spec = preset("uniform-load");
    let mut base = spec.variants[0].config.clone();
    if let slosim::sim::TraceSource::Generated(t) = &mut base.trace {
        t.duration = 600.0;
    }
    spec.variants[0].config = base.clone();
    spec.qps = vec![Some(10.0), Some(18.0)];

    let a = run(&at(&base, None, 18.0)).unwrap().to_json();
    let b = run(&at(&base, None, 18.0)).unwrap().to_json();
    if a != b {
        return Err("two runs of one config differ".into());
    }
    let csv = |jobs: usize| {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &run_sweep(spec.points().unwrap(), jobs).unwrap()).unwrap();
        buf
    };
    if csv(1) != csv(4) {
        return Err("sweep output depends on --jobs".into());
    }

    let mut siloed = preset("capacity-50qps")
        .variant("siloed-edf-azure-conv")
        .unwrap()
        .config
        .clone();
    if let slosim::sim::TraceSource::Generated(t) = &mut siloed.trace {
        t.duration = 600.0;
    }
    let mut shared = at(&base, Some(Policy::Niyama), 40.0);
    shared.replicas = 3;
    let mut checked = 0;
    for config in [at(&base, None, 24.0), shared, at(&siloed, None, 30.0)] {
        let trace = config.materialize().unwrap();
        let raw = simulate(&config).unwrap();
        if raw.jobs.len() != trace.len() {
            return Err(format!(
                "{} admitted, {} reported",
                trace.len(),
                raw.jobs.len()
            ));
        }
        let mut ids: Vec<u64> = raw.jobs.iter().map(|(_, j)| j.id()).collect();
        ids.dedup();
        let mut expect: Vec<u64> = trace.iter().map(|r| r.id()).collect();
        expect.sort_unstable();
        if ids != expect {
            return Err("reported ids differ from admitted ids".into());
        }
        for (req, (_, job)) in {
            let mut t = trace.clone();
            t.sort_by_key(|r| r.id());
            t
        }
        .iter()
        .zip(&raw.jobs)
        {
            let times = &job.token_times;
            let complete = times.len() as u32 == req.decode_tokens()
                && times.first().is_some_and(|&t| t > req.t_arrival())
                && times.windows(2).all(|w| w[1] > w[0]);
            if !complete {
                return Err(format!("request {} has an incomplete timeline", req.id()));
            }
        }
        checked += trace.len();
    }
    Ok(format!("identical reruns and --jobs 1/4 sweeps; {checked} requests each reported once with full timelines"))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 9] = [
        ("priority-limit equivalence", criterion_1),
        ("slack safety", criterion_2),
        ("cost-model calibration", criterion_3),
        ("policy ordering under load", criterion_4),
        ("eager-relegation degradation", criterion_5),
        ("diurnal overload with priority hints", criterion_6),
        ("capacity/GPU comparison", criterion_7),
        ("ablation monotonicity", criterion_8),
        ("determinism & conservation", criterion_9),
    ];
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx))).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>().cloned().unwrap_or_default()
            ))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n} {name} ({secs:.0}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n} {name} ({secs:.0}s): {d}");
            }
        }
    }
    println!("{failed} failed");
    // Failures are reported, not fatal, unless ACCEPTANCE_STRICT is set.
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
