use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slosim::config::{config_hash, load_config, read_table, resolve_table};
use slosim::experiment::{
    run_capacity, run_sweep, write_capacity_csv, write_gpu_csv, write_summary_csv, ExperimentSpec,
    Point, PointResult,
};
use slosim::sim::run;
use slosim::workload::save_trace;
use slosim::Result;

#[derive(Parser)]
#[command(name = "slosim", version, about = "QoS-aware LLM serving simulator")]
struct Cli {
    /// Override the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and capacity searches.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation; writes report.json and summary.csv.
    Simulate { config: PathBuf },
    /// Run every point of an experiment file or preset; writes sweep.csv.
    Sweep { experiment: String },
    /// Capacity search per variant; writes capacity.csv and gpus.csv.
    Capacity { experiment: String },
    /// Write the configured workload as a trace CSV.
    GenTrace { config: PathBuf },
    /// Check a run configuration or experiment file and print its hash.
    ValidateConfig { path: PathBuf },
}

fn out_dir(cli: &Cli, fallback: impl FnOnce() -> PathBuf) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(fallback);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn experiment_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&spec.name))
}

fn simulate(cli: &Cli, path: &Path) -> Result<i32> {
    let config = load_config(path, cli.seed)?;
    let dir = out_dir(cli, || PathBuf::from("out"))?;
    let report = run(&config)?;
    fs::write(dir.join("report.json"), report.to_json())?;
    let name = path
        .file_stem()
        .map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let point = Point::new(&name, config);
    let s = &report.summary;
    println!(
        "{} requests={} violated={:.2}% relegated={:.2}% goodput={:.3}qps ttft_p50={} config={}",
        point.policy_label(),
        s.requests,
        s.violation_pct,
        s.relegated_pct,
        s.goodput_qps,
        s.overall
            .ttft
            .p50
            .map_or("-".into(), |v| format!("{v:.3}s")),
        point.hash
    );
    let result = PointResult {
        point,
        outcome: Ok(report.summary),
        exit_code: 0,
    };
    write_summary_csv(create(&dir, "summary.csv")?, &[result])?;
    Ok(0)
}

fn sweep(cli: &Cli, arg: &str) -> Result<i32> {
    let spec = ExperimentSpec::load_or_preset(arg, cli.seed)?;
    let dir = out_dir(cli, || experiment_dir(&spec))?;
    let results = run_sweep(spec.points()?, cli.jobs)?;
    write_summary_csv(create(&dir, "sweep.csv")?, &results)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{}: {} points, {} failed, written to {}",
        spec.name,
        results.len(),
        failed,
        dir.display()
    );
    Ok(results.iter().map(|r| r.exit_code).max().unwrap_or(0))
}

fn capacity(cli: &Cli, arg: &str) -> Result<i32> {
    let spec = ExperimentSpec::load_or_preset(arg, cli.seed)?;
    let dir = out_dir(cli, || experiment_dir(&spec))?;
    let report = run_capacity(&spec, cli.jobs)?;
    write_capacity_csv(create(&dir, "capacity.csv")?, &report)?;
    write_gpu_csv(create(&dir, "gpus.csv")?, &report)?;
    fs::write(
        dir.join("capacity.json"),
        serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    for g in &report.gpus {
        match &g.gpus {
            Ok(n) => println!(
                "{}: {} replicas for {} qps ({})",
                g.variant, n, g.target_qps, g.deployment
            ),
            Err(e) => println!("{}: failed: {e}", g.variant),
        }
    }
    Ok(report.exit_code())
}

fn gen_trace(cli: &Cli, path: &Path) -> Result<i32> {
    let config = load_config(path, cli.seed)?;
    let dir = out_dir(cli, || PathBuf::from("out"))?;
    let reqs = config.materialize()?;
    save_trace(&dir.join("trace.csv"), &reqs)?;
    println!(
        "{} requests written to {}",
        reqs.len(),
        dir.join("trace.csv").display()
    );
    Ok(0)
}

fn validate(cli: &Cli, path: &Path) -> Result<i32> {
    let table = read_table(path)?;
    if table.contains_key("experiment") {
        let spec = ExperimentSpec::load(path, cli.seed)?;
        for v in &spec.variants {
            println!("{} {}", config_hash(&v.config), v.name);
        }
        println!(
            "ok: experiment `{}`, {} points",
            spec.name,
            spec.points()?.len()
        );
    } else {
        let config = resolve_table(&table, path.parent().unwrap_or(Path::new(".")), cli.seed)?;
        println!("ok: {}", config_hash(&config));
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Simulate { config } => simulate(&cli, config),
        Cmd::Sweep { experiment } => sweep(&cli, experiment),
        Cmd::Capacity { experiment } => capacity(&cli, experiment),
        Cmd::GenTrace { config } => gen_trace(&cli, config),
        Cmd::ValidateConfig { path } => validate(&cli, path),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
