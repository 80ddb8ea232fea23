//! Workload generation, closed-loop clients, metrics and reports for the
//! replication engines in `psmr-core`.

pub mod artifacts;
pub mod config;
pub mod report;
pub mod runner;
pub mod workload;

pub use runner::{run, RunError, RunOptions, RunResult};
pub use workload::{generate, KeyDist, Mix, WorkloadSpec};

/// Runs `base` once per value of `param`.
pub fn sweep(
    base: &WorkloadSpec,
    param: &str,
    values: &[String],
    opts: &RunOptions,
) -> anyhow::Result<Vec<RunResult>> {
    values
        .iter()
        .map(|v| {
            let mut spec = base.clone();
            config::set_param(&mut spec, param, v)?;
            Ok(run(&spec, opts)?)
        })
        .collect()
}
