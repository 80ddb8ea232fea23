//! Command-line flags and the equivalent TOML config file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use psmr_core::replication::EngineKind;
use serde::Deserialize;

use crate::workload::{CgKind, KeyDist, Mix, WorkloadSpec};

/// Every workload flag. The config file uses the same names (with
/// underscores); a flag given on the command line wins over the file.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub engine: Option<EngineKind>,
    /// Worker threads (and groups, for P-SMR) per replica.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    /// Outstanding requests per client.
    #[arg(long)]
    pub window: Option<usize>,
    /// Preloaded key space.
    #[arg(long)]
    pub keys: Option<u64>,
    #[arg(long)]
    pub dist: Option<KeyDist>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
    /// e.g. read=0.9,update=0.1
    #[arg(long)]
    pub mix: Option<Mix>,
    /// Reads plus this percentage of inserts/deletes; alternative to --mix.
    #[arg(long)]
    pub dependent_pct: Option<f64>,
    /// Commands per client.
    #[arg(long)]
    pub commands: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic CPU work per command (loop iterations).
    #[arg(long)]
    pub work: Option<u32>,
    #[arg(long)]
    pub fanout: Option<usize>,
    /// C-G rule for P-SMR: partition, broadcast or widened.
    #[arg(long)]
    pub cg: Option<CgKind>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        RunArgs { config: None, $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl RunArgs {
    /// Field-wise `self` over `lower`.
    pub fn or(self, lower: RunArgs) -> RunArgs {
        overlay!(
            self, lower, engine, threads, replicas, clients, window, keys, dist, zipf_exponent, mix,
            dependent_pct, commands, seed, work, fanout, cg, timeout_ms, out
        )
    }

    pub fn from_file(path: &Path) -> Result<RunArgs> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Flags over the config file named by `--config`, if any.
    pub fn resolve(self) -> Result<RunArgs> {
        match &self.config {
            Some(p) => {
                let file = RunArgs::from_file(p)?;
                Ok(self.or(file))
            }
            None => Ok(self),
        }
    }

    /// The workload these arguments describe, defaults filling the gaps.
    pub fn to_spec(&self) -> Result<WorkloadSpec> {
        let d = WorkloadSpec::default();
        let mix = match (self.mix, self.dependent_pct) {
            (Some(m), Some(p)) => {
                anyhow::ensure!(
                    (m.dependent_pct() - p).abs() < 1e-6,
                    "mix has {}% dependent commands but dependent_pct is {p}",
                    m.dependent_pct()
                );
                m
            }
            (Some(m), None) => m,
            (None, Some(p)) => Mix::with_dependent_pct(p)?,
            (None, None) => d.mix,
        };
        let spec = WorkloadSpec {
            engine: self.engine.unwrap_or(d.engine),
            threads: self.threads.unwrap_or(d.threads),
            replicas: self.replicas.unwrap_or(d.replicas),
            clients: self.clients.unwrap_or(d.clients),
            window: self.window.unwrap_or(d.window),
            commands: self.commands.unwrap_or(d.commands),
            keys: self.keys.unwrap_or(d.keys),
            dist: self.dist.unwrap_or(d.dist),
            zipf_exponent: self.zipf_exponent.unwrap_or(d.zipf_exponent),
            mix,
            seed: self.seed.unwrap_or(d.seed),
            work: self.work.unwrap_or(d.work),
            fanout: self.fanout.unwrap_or(d.fanout),
            cg: self.cg.unwrap_or(d.cg),
            timeout_ms: self.timeout_ms.unwrap_or(d.timeout_ms),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies `param = value` to a spec; used by sweeps.
pub fn set_param(spec: &mut WorkloadSpec, param: &str, value: &str) -> Result<()> {
    let bad = || format!("bad value {value:?} for {param}");
    match param {
        "threads" | "k" => spec.threads = value.parse().with_context(bad)?,
        "clients" => spec.clients = value.parse().with_context(bad)?,
        "replicas" => spec.replicas = value.parse().with_context(bad)?,
        "window" => spec.window = value.parse().with_context(bad)?,
        "keys" => spec.keys = value.parse().with_context(bad)?,
        "commands" => spec.commands = value.parse().with_context(bad)?,
        "work" => spec.work = value.parse().with_context(bad)?,
        "seed" => spec.seed = value.parse().with_context(bad)?,
        "engine" => spec.engine = value.parse().map_err(|e| anyhow::anyhow!("{e}")).with_context(bad)?,
        "dist" => spec.dist = value.parse()?,
        "dependent_pct" => spec.mix = Mix::with_dependent_pct(value.parse().with_context(bad)?)?,
        other => anyhow::bail!("cannot sweep over {other:?}"),
    }
    spec.validate()?;
    Ok(())
}
