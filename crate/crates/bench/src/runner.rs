//! Runs one workload against one engine and verifies the outcome.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use bytes::Bytes;
use psmr_core::kvstore::{Key, KvCommand, KvOutput, KvService, Value};
use psmr_core::replication::{
    Cluster, DeadlockReport, EngineConfig, EngineKind, Fault, ReplicationError, RunOutput,
};
use psmr_core::verify::{
    audit_order, check_determinism, check_linearizable, AuditError, DeterminismReport, Event, History, KvSpec,
    LinVerdict, OrderVerdict,
};
use serde::Serialize;

use crate::workload::{generate, WorkloadError, WorkloadSpec};

/// Fraction of completions, earliest first, left out of the metrics.
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Replication(#[from] ReplicationError),
    #[error("{report}")]
    Deadlock { report: DeadlockReport, output: Box<RunOutput> },
}

/// Extra knobs that are not part of a replayable workload description.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub fault: Option<Fault>,
    pub jitter_seed: Option<u64>,
    /// Keep per-replica delivery logs (needed for the order audit).
    pub record_delivery_log: bool,
}

impl RunOptions {
    pub fn audited() -> Self {
        Self {
            record_delivery_log: true,
            ..Default::default()
        }
    }
}

/// A completed request as seen by its client.
#[derive(Debug, Clone)]
pub struct Completed {
    pub client: u32,
    pub seq: u64,
    pub cmd: KvCommand,
    pub output: Bytes,
    pub invoke_ns: u64,
    pub response_ns: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThreadCounts {
    pub thread: u32,
    pub delivered: u64,
    pub executed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub issued: u64,
    pub completed: u64,
    /// Completions per second after warm-up.
    pub throughput_cps: f64,
    /// Throughput divided by the engine's worker count.
    pub per_thread_cps: f64,
    pub lat_mean_us: f64,
    pub lat_p50_us: f64,
    pub lat_p99_us: f64,
    pub measured_secs: f64,
    /// Replica 0's per-thread counters.
    pub threads: Vec<ThreadCounts>,
    pub parallel: u64,
    pub synchronous: u64,
    /// Post-warm-up latencies in microseconds, unsorted.
    #[serde(skip)]
    pub latencies_us: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub determinism: DeterminismReport,
    /// `None` when delivery logs were not recorded or the engine has no
    /// ordering layer.
    pub order: Option<Result<OrderVerdict, AuditError>>,
    /// Every replica executed every issued command.
    pub drained: bool,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.determinism.is_consistent()
            && self.drained
            && self.order.as_ref().is_none_or(|o| o.as_ref().is_ok_and(OrderVerdict::is_acyclic))
    }
}

pub struct RunResult {
    pub spec: WorkloadSpec,
    pub metrics: RunMetrics,
    pub verification: Verification,
    pub output: RunOutput,
    pub history: Vec<Completed>,
    pub snapshots: Vec<Vec<(Key, Value)>>,
}

impl RunResult {
    /// Metrics from a run that failed verification are not to be trusted.
    pub fn tainted(&self) -> bool {
        !self.verification.passed()
    }

    pub fn commands(&self) -> HashMap<(u32, u64), KvCommand> {
        self.history.iter().map(|c| ((c.client, c.seq), c.cmd)).collect()
    }

    /// The run's history in checker form.
    pub fn lin_history(&self) -> History<KvCommand, KvOutput> {
        to_history(&self.history)
    }

    pub fn check_linearizable(&self, budget: u64) -> LinVerdict {
        check_linearizable(&self.lin_history(), &KvSpec { preloaded: self.spec.keys }, budget)
    }
}

pub fn to_history(completed: &[Completed]) -> History<KvCommand, KvOutput> {
    completed
        .iter()
        .map(|c| Event {
            client: c.client,
            seq: c.seq,
            op: c.cmd,
            ret: Some(KvOutput::decode(&c.output).unwrap_or(KvOutput::Malformed)),
            invoke: c.invoke_ns,
            response: Some(c.response_ns),
        })
        .collect()
}

pub fn engine_config(spec: &WorkloadSpec, opts: &RunOptions) -> EngineConfig {
    let mut cfg = EngineConfig::new(spec.engine, spec.threads)
        .replicas(spec.replicas)
        .clients(spec.clients);
    cfg.record_responses = true;
    cfg.record_delivery_log = opts.record_delivery_log;
    cfg.fault = opts.fault;
    cfg.jitter_seed = opts.jitter_seed;
    cfg
}

/// Builds the engine, drives every client to completion in closed loop,
/// drains the engine and verifies the result.
pub fn run(spec: &WorkloadSpec, opts: &RunOptions) -> Result<RunResult, RunError> {
    let streams = generate(spec)?;
    let cg = spec.cg_function()?;
    let cfg = engine_config(spec, opts);
    let services: Vec<Arc<KvService>> = (0..cfg.effective_replicas())
        .map(|_| Arc::new(KvService::preloaded(spec.keys, spec.fanout).with_work(spec.work)))
        .collect();
    let mut cluster = Cluster::start(cfg, services.clone())?;
    let timeout = Duration::from_millis(spec.timeout_ms);

    let mut proxies = Vec::with_capacity(spec.clients);
    for c in 0..spec.clients {
        proxies.push(cluster.client::<KvCommand>(c as u32, cg.clone(), spec.seed ^ ((c as u64) << 32), spec.window)?);
    }
    let handles: Vec<_> = proxies
        .into_iter()
        .zip(streams)
        .map(|(mut proxy, cmds)| {
            thread::spawn(move || -> (Vec<Completed>, Option<ReplicationError>) {
                let mut pending: HashMap<u64, KvCommand> = HashMap::new();
                let mut done = Vec::with_capacity(cmds.len());
                let mut it = cmds.into_iter();
                loop {
                    while proxy.outstanding() < proxy.window() {
                        let Some(cmd) = it.next() else { break };
                        match proxy.submit(&cmd) {
                            Ok(seq) => {
                                pending.insert(seq, cmd);
                            }
                            Err(e) => return (done, Some(e)),
                        }
                    }
                    if proxy.outstanding() == 0 {
                        return (done, None);
                    }
                    match proxy.recv(timeout) {
                        Ok(c) => done.push(Completed {
                            client: proxy.id(),
                            seq: c.client_seq,
                            cmd: pending.remove(&c.client_seq).expect("completion of an issued request"),
                            output: c.output,
                            invoke_ns: c.invoke_ns,
                            response_ns: c.response_ns,
                        }),
                        Err(e) => return (done, Some(e)),
                    }
                }
            })
        })
        .collect();

    let mut history = Vec::with_capacity(spec.total_commands());
    let mut client_error = None;
    for h in handles {
        let (done, err) = h.join().expect("client thread panicked");
        history.extend(done);
        client_error = client_error.or(err);
    }
    let finished = cluster.finish(timeout);
    if let Some(report) = finished.deadlock {
        return Err(RunError::Deadlock {
            report,
            output: Box::new(finished.output),
        });
    }
    if let Some(e) = client_error {
        return Err(e.into());
    }
    let output = finished.output;
    history.sort_by_key(|c| (c.response_ns, c.client, c.seq));

    let verification = verify_output(&output, spec.total_commands() as u64);
    let metrics = metrics(spec, &history, &output);
    let snapshots = services.iter().map(|s| s.snapshot()).collect();
    Ok(RunResult {
        spec: spec.clone(),
        metrics,
        verification,
        output,
        history,
        snapshots,
    })
}

pub fn verify_output(output: &RunOutput, issued: u64) -> Verification {
    let responses: Vec<Vec<(u32, u64, Bytes)>> = output.replicas.iter().map(|r| r.responses.clone()).collect();
    let determinism = check_determinism(&output.digests(), &responses);
    let deliveries = output.delivery_log();
    let order = (output.engine != EngineKind::Norep && !deliveries.is_empty()).then(|| audit_order(&deliveries));
    let drained = output.replicas.iter().all(|r| r.totals().executed == issued);
    Verification {
        determinism,
        order,
        drained,
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// `history` must be sorted by response time.
fn metrics(spec: &WorkloadSpec, history: &[Completed], output: &RunOutput) -> RunMetrics {
    let warm = ((history.len() as f64) * WARMUP_FRACTION).floor() as usize;
    let measured = &history[warm..];
    let start = if warm > 0 {
        history[warm - 1].response_ns
    } else {
        history.iter().map(|c| c.invoke_ns).min().unwrap_or(0)
    };
    let end = measured.last().map_or(start, |c| c.response_ns);
    let secs = (end.saturating_sub(start)) as f64 / 1e9;
    let throughput = if secs > 0.0 { measured.len() as f64 / secs } else { 0.0 };
    let latencies: Vec<f64> = measured
        .iter()
        .map(|c| c.response_ns.saturating_sub(c.invoke_ns) as f64 / 1e3)
        .collect();
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    let workers = match spec.engine {
        EngineKind::Smr => 1,
        _ => spec.threads.max(1),
    };
    let (threads, totals) = output.replicas.first().map_or_else(
        || (Vec::new(), Default::default()),
        |r| {
            let t = r
                .threads
                .iter()
                .enumerate()
                .map(|(i, s)| ThreadCounts {
                    thread: i as u32,
                    delivered: s.delivered,
                    executed: s.executed,
                })
                .collect();
            (t, r.totals())
        },
    );
    RunMetrics {
        issued: spec.total_commands() as u64,
        completed: history.len() as u64,
        throughput_cps: throughput,
        per_thread_cps: throughput / workers as f64,
        lat_mean_us: mean,
        lat_p50_us: percentile(&sorted, 0.5),
        lat_p99_us: percentile(&sorted, 0.99),
        measured_secs: secs,
        threads,
        parallel: totals.parallel,
        synchronous: totals.synchronous,
        latencies_us: latencies,
    }
}

/// Service digests for a finished run's snapshots; equal snapshots give
/// equal digests.
pub fn snapshot_digests(snapshots: &[Vec<(Key, Value)>]) -> Vec<psmr_core::StateDigest> {
    snapshots
        .iter()
        .map(|s| psmr_core::kvstore::digest_entries(s.iter().copied()))
        .collect()
}
