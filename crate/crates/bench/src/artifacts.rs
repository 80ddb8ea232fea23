//! Run directories: everything a finished run leaves behind, and the
//! offline checks `verify --run` performs on them.
//!
//! Layout:
//!
//! ```text
//! workload.toml        the replayable workload description
//! cdep.toml            the service's command dependencies
//! exec.log             execution log, all replicas
//! delivery.log         delivery log, all subscriptions (if recorded)
//! snapshot-r<i>.txt    final state of replica i
//! responses-r<i>.tsv   client  seq  output-hex      (per replica)
//! history.tsv          client  seq  cid  input-hex  output-hex  invoke_ns  response_ns
//! metrics.csv/.json    result row
//! latency_cdf.tsv      post-warm-up latency samples
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bytes::Bytes;
use psmr_core::dependency::{CDep, CommandId};
use psmr_core::kvstore::{digest_entries, parse_snapshot, shared_kv_cdep, write_snapshot, KvCommand};
use psmr_core::multicast::{parse_delivery_log, write_delivery_log};
use psmr_core::replication::{parse_exec_log, write_exec_log};
use psmr_core::verify::{
    audit_execution, audit_order, check_determinism, check_linearizable, KvSpec, LinVerdict, OrderVerdict,
};

use crate::report::{write_cdf, write_reports, ReportRow};
use crate::runner::{to_history, Completed, RunResult};
use crate::workload::WorkloadSpec;

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn write_run_dir(dir: &Path, r: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("workload.toml"), toml::to_string(&r.spec)?)?;
    fs::write(dir.join("cdep.toml"), shared_kv_cdep().to_toml())?;
    write_exec_log(create(dir.join("exec.log"))?, &r.output.exec_log())?;
    let deliveries = r.output.delivery_log();
    if !deliveries.is_empty() {
        write_delivery_log(create(dir.join("delivery.log"))?, &deliveries)?;
    }
    for (i, snap) in r.snapshots.iter().enumerate() {
        write_snapshot(create(dir.join(format!("snapshot-r{i}.txt")))?, snap.iter().copied())?;
    }
    for rep in &r.output.replicas {
        let mut w = create(dir.join(format!("responses-r{}.tsv", rep.replica)))?;
        for (c, s, out) in &rep.responses {
            writeln!(w, "{c}\t{s}\t{}", hex::encode(out))?;
        }
        w.flush()?;
    }
    let mut w = create(dir.join("history.tsv"))?;
    for c in &r.history {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.client,
            c.seq,
            c.cmd.id().0,
            hex::encode(c.cmd.encode_input()),
            hex::encode(&c.output),
            c.invoke_ns,
            c.response_ns
        )?;
    }
    w.flush()?;
    write_reports(dir, &[ReportRow::from_run(r)])?;
    write_cdf(create(dir.join("latency_cdf.tsv"))?, &r.metrics.latencies_us)?;
    Ok(())
}

fn read_history(path: &Path) -> Result<Vec<Completed>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || format!("{}:{}: malformed history line", path.display(), n + 1);
        if f.len() != 7 {
            bail!(bad());
        }
        let cid: u16 = f[2].parse().with_context(bad)?;
        let input = hex::decode(f[3]).with_context(bad)?;
        out.push(Completed {
            client: f[0].parse().with_context(bad)?,
            seq: f[1].parse().with_context(bad)?,
            cmd: KvCommand::decode(CommandId(cid), &input).with_context(bad)?,
            output: Bytes::from(hex::decode(f[4]).with_context(bad)?),
            invoke_ns: f[5].parse().with_context(bad)?,
            response_ns: f[6].parse().with_context(bad)?,
        });
    }
    Ok(out)
}

fn read_responses(path: &Path) -> Result<Vec<(u32, u64, Bytes)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let bad = || format!("{}:{}: malformed response line", path.display(), n + 1);
        let mut f = line.split('\t');
        let (Some(c), Some(s), Some(o), None) = (f.next(), f.next(), f.next(), f.next()) else {
            bail!(bad());
        };
        out.push((c.parse().with_context(bad)?, s.parse().with_context(bad)?, Bytes::from(hex::decode(o).with_context(bad)?)));
    }
    Ok(out)
}

/// Files `prefix<i>.ext` for i = 0, 1, ... until the first gap.
fn numbered(dir: &Path, prefix: &str, ext: &str) -> Vec<PathBuf> {
    (0..)
        .map(|i| dir.join(format!("{prefix}{i}.{ext}")))
        .take_while(|p| p.exists())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Skipped,
    Inconclusive,
    Violation,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Skipped => "SKIP",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Violation => "VIOLATION",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// 0 pass, 1 any violation, 2 otherwise inconclusive.
    pub fn exit_code(&self) -> i32 {
        if self.checks.iter().any(|c| c.status == Status::Violation) {
            1
        } else if self.checks.iter().any(|c| c.status == Status::Inconclusive) {
            2
        } else {
            0
        }
    }

    fn push(&mut self, name: &'static str, status: Status, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            status,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<16} {:<12} {}", c.name, c.status, c.detail)?;
        }
        Ok(())
    }
}

/// Re-checks a run directory from its files alone. Malformed or missing
/// mandatory files are errors rather than verdicts.
pub fn verify_run_dir(dir: &Path, lin_budget: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let spec: WorkloadSpec = toml::from_str(&fs::read_to_string(dir.join("workload.toml"))?)
        .context("workload.toml")?;
    let cdep = CDep::from_toml(&fs::read_to_string(dir.join("cdep.toml"))?).context("cdep.toml")?;
    let history = read_history(&dir.join("history.tsv"))?;

    // Order.
    let dl = dir.join("delivery.log");
    if dl.exists() {
        let records = parse_delivery_log(BufReader::new(File::open(&dl)?)).context("delivery.log")?;
        match audit_order(&records) {
            Ok(OrderVerdict::Acyclic { messages, subscriptions }) => report.push(
                "order",
                Status::Pass,
                format!("{messages} shared messages over {subscriptions} subscriptions, acyclic"),
            ),
            Ok(OrderVerdict::Cycle(c)) => report.push("order", Status::Violation, format!("cycle {c:?}")),
            Err(e) => report.push("order", Status::Violation, e.to_string()),
        }
    } else {
        report.push("order", Status::Skipped, "no delivery log");
    }

    // Determinism.
    let snaps = numbered(dir, "snapshot-r", "txt");
    let resp_files = numbered(dir, "responses-r", "tsv");
    if snaps.is_empty() {
        bail!("no snapshots in {}", dir.display());
    }
    let mut digests = Vec::new();
    for p in &snaps {
        let entries = parse_snapshot(BufReader::new(File::open(p)?)).with_context(|| p.display().to_string())?;
        digests.push(digest_entries(entries));
    }
    let responses = resp_files.iter().map(|p| read_responses(p)).collect::<Result<Vec<_>>>()?;
    let det = check_determinism(&digests, &responses);
    if det.is_consistent() {
        report.push("determinism", Status::Pass, format!("{} replicas agree", digests.len()));
    } else {
        report.push(
            "determinism",
            Status::Violation,
            format!(
                "digest mismatches {:?}, {} differing outputs, {} missing responses",
                det.digest_mismatches,
                det.output_mismatches.len(),
                det.missing.len()
            ),
        );
    }

    // Execution.
    let exec = parse_exec_log(BufReader::new(File::open(dir.join("exec.log"))?)).context("exec.log")?;
    let commands: HashMap<(u32, u64), KvCommand> = history.iter().map(|c| ((c.client, c.seq), c.cmd)).collect();
    let violations = audit_execution(&exec, &commands, &cdep);
    if violations.is_empty() {
        report.push("execution", Status::Pass, format!("{} records", exec.len()));
    } else {
        report.push(
            "execution",
            Status::Violation,
            format!("{} violations, first {:?}", violations.len(), violations[0]),
        );
    }
    let expected = history.len() * digests.len();
    if exec.len() != expected {
        report.push(
            "completeness",
            Status::Violation,
            format!("{} executions for {} requests on {} replicas", exec.len(), history.len(), digests.len()),
        );
    } else {
        report.push("completeness", Status::Pass, format!("{} of {}", history.len(), spec.total_commands()));
    }

    // Linearizability.
    let verdict = check_linearizable(&to_history(&history), &KvSpec { preloaded: spec.keys }, lin_budget);
    match verdict {
        LinVerdict::Linearizable(_) => report.push("linearizable", Status::Pass, format!("{} operations", history.len())),
        LinVerdict::Violation { prefix, blocked } => report.push(
            "linearizable",
            Status::Violation,
            format!("prefix of {} operations cannot be extended by {:?}", prefix.len(), blocked),
        ),
        LinVerdict::Inconclusive { explored } => {
            report.push("linearizable", Status::Inconclusive, format!("budget exhausted after {explored} states"))
        }
    }
    Ok(report)
}
