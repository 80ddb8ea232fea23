use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use psmr_bench::artifacts::{verify_run_dir, write_run_dir};
use psmr_bench::config::RunArgs;
use psmr_bench::report::{write_reports, ReportRow};
use psmr_bench::{run, RunError, RunOptions, RunResult};
use psmr_core::verify::DEFAULT_BUDGET;

#[derive(Parser)]
#[command(name = "psmr", about = "Replication engine experiments", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload and write its artifacts to --out.
    Run {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run a workload once per value of one parameter.
    Sweep {
        /// threads, clients, replicas, window, keys, commands, work, seed,
        /// engine, dist or dependent_pct
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Re-check a run directory: exit 0 pass, 1 violation, 2 inconclusive.
    Verify {
        #[arg(long = "run")]
        dir: PathBuf,
        /// Search states allowed to the linearizability checker.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
}

fn summary(r: &RunResult) -> String {
    let m = &r.metrics;
    format!(
        "{} k={} clients={}: {:.0} cps ({:.0}/thread), latency mean {:.1}us p50 {:.1}us p99 {:.1}us, {} sync / {} parallel{}",
        r.spec.engine,
        r.spec.threads,
        r.spec.clients,
        m.throughput_cps,
        m.per_thread_cps,
        m.lat_mean_us,
        m.lat_p50_us,
        m.lat_p99_us,
        m.synchronous,
        m.parallel,
        if r.tainted() { "  [TAINTED: verification failed]" } else { "" }
    )
}

fn run_one(spec: &psmr_bench::WorkloadSpec, dir: &std::path::Path) -> Result<Option<RunResult>> {
    match run(spec, &RunOptions::audited()) {
        Ok(r) => {
            write_run_dir(dir, &r)?;
            println!("{}", summary(&r));
            Ok(Some(r))
        }
        Err(RunError::Deadlock { report, .. }) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("deadlock.txt"), report.to_string())?;
            eprintln!("{report}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<u8> {
    match Cli::parse().cmd {
        Cmd::Run { args } => {
            let args = args.resolve()?;
            let spec = args.to_spec()?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            Ok(match run_one(&spec, &out)? {
                Some(r) if !r.tainted() => 0,
                _ => 1,
            })
        }
        Cmd::Sweep { param, values, args } => {
            let args = args.resolve()?;
            let base = args.to_spec()?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
            let mut rows = Vec::new();
            let mut failed = false;
            for v in &values {
                let mut spec = base.clone();
                psmr_bench::config::set_param(&mut spec, &param, v)?;
                match run_one(&spec, &out.join(format!("{param}={v}")))? {
                    Some(r) => {
                        failed |= r.tainted();
                        rows.push(ReportRow::from_run(&r));
                    }
                    None => failed = true,
                }
            }
            write_reports(&out, &rows).context("writing sweep reports")?;
            Ok(u8::from(failed))
        }
        Cmd::Verify { dir, budget } => {
            let report = verify_run_dir(&dir, budget)?;
            print!("{report}");
            Ok(report.exit_code() as u8)
        }
    }
}
