use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::client::{ClientProxy, Ingress};
use super::exec_log::ExecRecord;
use super::psmr::{barrier, PsmrWorker};
use super::scheduler::{scheduler_loop, Source};
use super::smr::smr_loop;
use super::worker::{BlockedOn, Jitter, ReplicaCtx, WorkerOutput, WorkerStats};
use super::{EngineKind, HarnessClock, ReplicationError, Request, Response, Service, WireCommand};
use crate::dependency::CommandToGroups;
use crate::multicast::{
    DeliveryRecord, FabricConfig, GroupId, GroupSet, MulticastFabric, SubscriberId, DEFAULT_BATCH_LIMIT,
};
use crate::StateDigest;

/// Planted faults for negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// One P-SMR thread of one replica elects `e = max{j}` instead of
    /// `min{j}`, disagreeing with its peers on the executor.
    MaxExecutor { replica: u32, thread: u32 },
    /// One replica silently drops the `index`-th command it would execute
    /// (0-based, counted across its threads).
    SkipDelivery { replica: u32, index: u64 },
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub engine: EngineKind,
    /// P-SMR: worker threads and groups per replica. sP-SMR and no-rep:
    /// scheduler workers. Ignored by SMR.
    pub threads: usize,
    /// Forced to 1 for no-rep.
    pub replicas: usize,
    pub clients: usize,
    pub batch_limit: Option<usize>,
    pub null_period: u64,
    pub record_delivery_log: bool,
    pub record_responses: bool,
    pub fault: Option<Fault>,
    /// Seeds random yields and sleeps around barrier steps.
    pub jitter_seed: Option<u64>,
}

impl EngineConfig {
    pub fn new(engine: EngineKind, threads: usize) -> Self {
        Self {
            engine,
            threads,
            replicas: 2,
            clients: 1,
            batch_limit: Some(DEFAULT_BATCH_LIMIT),
            null_period: 64,
            record_delivery_log: false,
            record_responses: false,
            fault: None,
            jitter_seed: None,
        }
    }

    pub fn replicas(mut self, n: usize) -> Self {
        self.replicas = n;
        self
    }

    pub fn clients(mut self, c: usize) -> Self {
        self.clients = c;
        self
    }

    pub fn unbatched(mut self) -> Self {
        self.batch_limit = None;
        self
    }

    pub fn batch_limit(mut self, limit: Option<usize>) -> Self {
        self.batch_limit = limit;
        self
    }

    /// Records delivery logs and per-replica responses for verification.
    pub fn recording(mut self) -> Self {
        self.record_delivery_log = true;
        self.record_responses = true;
        self
    }

    pub fn fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn jitter(mut self, seed: u64) -> Self {
        self.jitter_seed = Some(seed);
        self
    }

    pub fn effective_replicas(&self) -> usize {
        if self.engine == EngineKind::Norep {
            1
        } else {
            self.replicas
        }
    }

    fn validate(&self) -> Result<(), ReplicationError> {
        let bad = |m: String| Err(ReplicationError::Config(m));
        if self.engine != EngineKind::Smr && (self.threads == 0 || self.threads > crate::multicast::MAX_GROUPS) {
            return bad(format!("thread count {} out of range", self.threads));
        }
        if self.effective_replicas() == 0 {
            return bad("at least one replica is required".into());
        }
        if self.clients == 0 {
            return bad("at least one client is required".into());
        }
        Ok(())
    }
}

/// What one replica produced.
#[derive(Clone, Debug)]
pub struct ReplicaOutput {
    pub replica: u32,
    pub digest: StateDigest,
    pub exec: Vec<ExecRecord>,
    pub deliveries: Vec<DeliveryRecord>,
    /// `(client_id, client_seq, output)` for every command it executed.
    pub responses: Vec<(u32, u64, bytes::Bytes)>,
    /// Indexed by thread slot: P-SMR/SMR thread `i` at `i - 1`; for
    /// scheduler engines the scheduler at 0 and worker `i` at `i`.
    pub threads: Vec<WorkerStats>,
}

impl ReplicaOutput {
    pub fn totals(&self) -> WorkerStats {
        let mut s = WorkerStats::default();
        for t in &self.threads {
            s.merge(t);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub engine: EngineKind,
    pub threads: usize,
    pub replicas: Vec<ReplicaOutput>,
}

impl RunOutput {
    pub fn digests(&self) -> Vec<StateDigest> {
        self.replicas.iter().map(|r| r.digest).collect()
    }

    pub fn exec_log(&self) -> Vec<ExecRecord> {
        self.replicas.iter().flat_map(|r| r.exec.iter().copied()).collect()
    }

    pub fn delivery_log(&self) -> Vec<DeliveryRecord> {
        self.replicas
            .iter()
            .flat_map(|r| r.deliveries.iter().copied())
            .collect()
    }
}

/// Threads that failed to drain before the deadline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeadlockReport {
    pub waited: Duration,
    /// `(replica, thread slot, state)` for every thread still running.
    pub blocked: Vec<(u32, u32, BlockedOn)>,
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "engine did not drain within {:?}", self.waited)?;
        for (r, t, b) in &self.blocked {
            writeln!(f, "  replica {r} thread {t}: {b}")?;
        }
        Ok(())
    }
}

pub struct Finished {
    pub output: RunOutput,
    pub deadlock: Option<DeadlockReport>,
}

struct ReplicaHandle<S: Service> {
    ctx: Arc<ReplicaCtx<S>>,
    threads: Vec<JoinHandle<Vec<WorkerOutput>>>,
}

/// A running engine: replicas, the ordering layer and client endpoints.
pub struct Cluster<S: Service> {
    config: EngineConfig,
    clock: HarnessClock,
    fabric: Option<MulticastFabric>,
    direct: Option<Sender<Request>>,
    replicas: Vec<ReplicaHandle<S>>,
    client_rx: Vec<Option<Receiver<Response>>>,
    stop: Arc<AtomicBool>,
    input_closed: Arc<AtomicBool>,
}

impl<S: Service> Cluster<S> {
    /// Starts one replica per service instance. The instances must hold
    /// identical initial state.
    pub fn start(config: EngineConfig, services: Vec<Arc<S>>) -> Result<Self, ReplicationError> {
        Self::start_with(config, services, HarnessClock::new(), None)
    }

    /// Like [`start`](Self::start), sharing `clock` with the caller and
    /// optionally re-checking every carried destination set against `cg`.
    pub fn start_with(
        config: EngineConfig,
        services: Vec<Arc<S>>,
        clock: HarnessClock,
        gamma_check: Option<Arc<dyn CommandToGroups<S::Cmd>>>,
    ) -> Result<Self, ReplicationError> {
        config.validate()?;
        let n = config.effective_replicas();
        if services.len() != n {
            return Err(ReplicationError::Config(format!(
                "{} service instances for {n} replicas",
                services.len()
            )));
        }
        let (txs, rxs): (Vec<_>, Vec<_>) = (0..config.clients).map(|_| unbounded()).unzip();
        let router = Arc::new(txs);
        let stop = Arc::new(AtomicBool::new(false));
        let input_closed = Arc::new(AtomicBool::new(false));

        let fabric = match config.engine {
            EngineKind::Norep => None,
            e => {
                let groups = if e == EngineKind::Psmr { config.threads } else { 1 };
                let mut fc = FabricConfig::new(groups).with_null_period(config.null_period);
                fc.batch_limit = config.batch_limit;
                Some(MulticastFabric::new(fc)?)
            }
        };
        let (direct_tx, direct_rx) = match config.engine {
            EngineKind::Norep => {
                let (tx, rx) = unbounded();
                (Some(tx), Some(rx))
            }
            _ => (None, None),
        };

        let mut cluster = Self {
            config: config.clone(),
            clock,
            fabric,
            direct: direct_tx,
            replicas: Vec::with_capacity(n),
            client_rx: rxs.into_iter().map(Some).collect(),
            stop: stop.clone(),
            input_closed: input_closed.clone(),
        };
        for (r, service) in services.into_iter().enumerate() {
            let r = r as u32;
            let slots = match config.engine {
                EngineKind::Psmr => config.threads,
                EngineKind::Smr => 1,
                EngineKind::Spsmr | EngineKind::Norep => config.threads + 1,
            };
            let skip_at = match config.fault {
                Some(Fault::SkipDelivery { replica, index }) if replica == r => Some(index),
                _ => None,
            };
            let ctx = Arc::new(ReplicaCtx {
                replica: r,
                service,
                router: router.clone(),
                clock,
                stop: stop.clone(),
                input_closed: input_closed.clone(),
                record_responses: config.record_responses,
                skip_at,
                executed: AtomicU64::new(0),
                phases: (0..slots).map(|_| Mutex::new(BlockedOn::Starting)).collect(),
                gamma_check: gamma_check.clone(),
            });
            let threads = cluster.spawn_replica(&ctx, direct_rx.clone())?;
            cluster.replicas.push(ReplicaHandle { ctx, threads });
        }
        Ok(cluster)
    }

    fn spawn_replica(
        &self,
        ctx: &Arc<ReplicaCtx<S>>,
        direct: Option<Receiver<Request>>,
    ) -> Result<Vec<JoinHandle<Vec<WorkerOutput>>>, ReplicationError> {
        let r = ctx.replica;
        let log = self.config.record_delivery_log;
        let spawn = |name: String, f: Box<dyn FnOnce() -> Vec<WorkerOutput> + Send>| {
            thread::Builder::new()
                .name(name)
                .spawn(f)
                .map_err(|e| ReplicationError::Config(format!("cannot spawn thread: {e}")))
        };
        let mut handles = Vec::new();
        match self.config.engine {
            EngineKind::Psmr => {
                let fabric = self.fabric.as_ref().expect("P-SMR runs over a fabric");
                let k = self.config.threads;
                for (i, links) in (1..=k).zip(barrier(k)) {
                    let groups = GroupSet::singleton(GroupId::Index(i as u8)).with(GroupId::All);
                    let sub = fabric.subscribe(
                        groups,
                        SubscriberId {
                            replica: r,
                            thread: i as u32,
                        },
                        log,
                    )?;
                    let elect_max = matches!(
                        self.config.fault,
                        Some(Fault::MaxExecutor { replica, thread }) if replica == r && thread as usize == i
                    );
                    let worker = PsmrWorker {
                        ctx: ctx.clone(),
                        index: i,
                        k,
                        sub,
                        links,
                        elect_max,
                        jitter: Jitter::new(self.config.jitter_seed, r, i as u32),
                    };
                    handles.push(spawn(format!("r{r}-t{i}"), Box::new(move || vec![worker.run()]))?);
                }
            }
            EngineKind::Smr => {
                let fabric = self.fabric.as_ref().expect("SMR runs over a fabric");
                let sub = fabric.subscribe(
                    GroupSet::only_all(),
                    SubscriberId { replica: r, thread: 1 },
                    log,
                )?;
                let ctx = ctx.clone();
                handles.push(spawn(format!("r{r}-smr"), Box::new(move || vec![smr_loop(ctx, sub)]))?);
            }
            EngineKind::Spsmr | EngineKind::Norep => {
                let source = match &self.fabric {
                    Some(fabric) => Source::Fabric(fabric.subscribe(
                        GroupSet::only_all(),
                        SubscriberId { replica: r, thread: 0 },
                        log,
                    )?),
                    None => Source::Direct(direct.expect("no-rep has a request queue")),
                };
                let ctx = ctx.clone();
                let w = self.config.threads;
                handles.push(spawn(
                    format!("r{r}-sched"),
                    Box::new(move || scheduler_loop(ctx, w, source)),
                )?);
            }
        }
        Ok(handles)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> HarnessClock {
        self.clock
    }

    pub fn fabric(&self) -> Option<&MulticastFabric> {
        self.fabric.as_ref()
    }

    /// Hands out the endpoint of client `id`; each id can be taken once.
    /// `cg` is required for P-SMR and ignored otherwise.
    pub fn client<C>(
        &mut self,
        id: u32,
        cg: Option<Arc<dyn CommandToGroups<C>>>,
        seed: u64,
        window: usize,
    ) -> Result<ClientProxy<C>, ReplicationError>
    where
        C: WireCommand + ?Sized,
    {
        let rx = self
            .client_rx
            .get_mut(id as usize)
            .and_then(Option::take)
            .ok_or_else(|| ReplicationError::Config(format!("client {id} unavailable")))?;
        let ingress = match (&self.fabric, &self.direct) {
            (Some(f), _) => Ingress::Fabric {
                fabric: f.clone(),
                by_groups: self.config.engine.uses_groups(),
            },
            (None, Some(tx)) => Ingress::Direct(tx.clone()),
            (None, None) => unreachable!("every engine has an ingress"),
        };
        if self.config.engine.uses_groups() && cg.is_none() {
            return Err(ReplicationError::Config("P-SMR clients need a C-G function".into()));
        }
        Ok(ClientProxy::new(id, ingress, rx, cg, seed, window, self.clock))
    }

    /// Current state of every thread, `(replica, slot, state)`.
    pub fn phases(&self) -> Vec<(u32, u32, BlockedOn)> {
        self.replicas
            .iter()
            .flat_map(|h| {
                h.ctx
                    .phases()
                    .into_iter()
                    .enumerate()
                    .map(move |(i, p)| (h.ctx.replica, i as u32, p))
            })
            .collect()
    }

    /// Closes the input and waits up to `timeout` for every replica to
    /// drain. Threads still running at the deadline are reported, then torn
    /// down; the output then covers whatever they had done.
    pub fn finish(mut self, timeout: Duration) -> Finished {
        if let Some(f) = &self.fabric {
            f.shutdown();
        }
        self.direct = None;
        self.input_closed.store(true, Ordering::Release);
        let start = Instant::now();
        let deadline = start + timeout;
        let all_done = |rs: &[ReplicaHandle<S>]| rs.iter().all(|h| h.threads.iter().all(|t| t.is_finished()));
        while !all_done(&self.replicas) && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(2));
        }
        let deadlock = (!all_done(&self.replicas)).then(|| {
            let blocked = self
                .phases()
                .into_iter()
                .filter(|(_, _, p)| *p != BlockedOn::Done)
                .collect();
            DeadlockReport {
                waited: start.elapsed(),
                blocked,
            }
        });
        self.stop.store(true, Ordering::Relaxed);

        let engine = self.config.engine;
        let mut replicas = Vec::with_capacity(self.replicas.len());
        for h in self.replicas.drain(..) {
            let mut outs: Vec<WorkerOutput> = Vec::new();
            for t in h.threads {
                outs.extend(t.join().expect("replica thread panicked"));
            }
            let mut exec = Vec::new();
            let mut deliveries = Vec::new();
            let mut responses = Vec::new();
            let mut threads = Vec::new();
            for o in outs {
                exec.extend(o.exec);
                deliveries.extend(o.deliveries);
                responses.extend(o.responses);
                threads.push(o.stats);
            }
            exec.sort_by_key(|e| (e.t_start, e.thread));
            responses.sort_by_key(|(c, s, _)| (*c, *s));
            replicas.push(ReplicaOutput {
                replica: h.ctx.replica,
                digest: h.ctx.service.digest(),
                exec,
                deliveries,
                responses,
                threads,
            });
        }
        Finished {
            output: RunOutput {
                engine,
                threads: self.config.threads,
                replicas,
            },
            deadlock,
        }
    }
}

impl<S: Service> Drop for Cluster<S> {
    fn drop(&mut self) {
        if !self.replicas.is_empty() {
            self.stop.store(true, Ordering::Relaxed);
            if let Some(f) = &self.fabric {
                f.shutdown();
            }
        }
    }
}
