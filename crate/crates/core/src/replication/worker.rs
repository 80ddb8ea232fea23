use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use crossbeam_channel::{Receiver, RecvTimeoutError, SendTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec_log::{ExecMode, ExecRecord};
use super::{HarnessClock, Request, Response, Service};
use crate::dependency::CommandToGroups;
use crate::multicast::DeliveryRecord;

/// What a thread is currently doing or waiting for; dumped on deadlock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockedOn {
    Starting,
    /// Waiting on the multicast stream or request queue.
    Delivery,
    Executing,
    /// P-SMR executor waiting for the arrival signal of a peer.
    Arrival { from: u32 },
    /// P-SMR non-executor waiting for the executor's release.
    Release { from: u32 },
    /// Scheduler waiting for a conflicting command to complete.
    Conflict,
    /// Scheduler worker waiting for a job.
    Queue,
    Done,
}

impl fmt::Display for BlockedOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockedOn::Starting => f.write_str("starting"),
            BlockedOn::Delivery => f.write_str("waiting for delivery"),
            BlockedOn::Executing => f.write_str("executing"),
            BlockedOn::Arrival { from } => write!(f, "waiting for arrival signal from t{from}"),
            BlockedOn::Release { from } => write!(f, "waiting for release signal from t{from}"),
            BlockedOn::Conflict => f.write_str("waiting for conflicting commands"),
            BlockedOn::Queue => f.write_str("waiting for work"),
            BlockedOn::Done => f.write_str("done"),
        }
    }
}

/// Per-thread counters, merged into run metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub delivered: u64,
    pub executed: u64,
    pub parallel: u64,
    pub synchronous: u64,
    /// Arrival signals the executor should collect: sum of `|τ| - 1`.
    pub arrivals_expected: u64,
    pub arrivals_received: u64,
    pub releases_sent: u64,
    pub signals_sent: u64,
    pub releases_received: u64,
    pub skipped: u64,
}

impl WorkerStats {
    pub fn merge(&mut self, o: &WorkerStats) {
        self.delivered += o.delivered;
        self.executed += o.executed;
        self.parallel += o.parallel;
        self.synchronous += o.synchronous;
        self.arrivals_expected += o.arrivals_expected;
        self.arrivals_received += o.arrivals_received;
        self.releases_sent += o.releases_sent;
        self.signals_sent += o.signals_sent;
        self.releases_received += o.releases_received;
        self.skipped += o.skipped;
    }
}

/// Everything a thread hands back when it exits.
#[derive(Debug, Default)]
pub(crate) struct WorkerOutput {
    pub thread: u32,
    pub exec: Vec<ExecRecord>,
    pub responses: Vec<(u32, u64, Bytes)>,
    pub deliveries: Vec<DeliveryRecord>,
    pub stats: WorkerStats,
}

pub(crate) struct Stopped;

pub(crate) const POLL: Duration = Duration::from_millis(20);

/// State shared by the threads of one replica.
pub(crate) struct ReplicaCtx<S: Service> {
    pub replica: u32,
    pub service: Arc<S>,
    pub router: Arc<Vec<Sender<Response>>>,
    pub clock: HarnessClock,
    pub stop: Arc<AtomicBool>,
    /// Set once clients can no longer submit.
    pub input_closed: Arc<AtomicBool>,
    pub record_responses: bool,
    pub skip_at: Option<u64>,
    pub executed: AtomicU64,
    pub phases: Vec<Mutex<BlockedOn>>,
    pub gamma_check: Option<Arc<dyn CommandToGroups<S::Cmd>>>,
}

impl<S: Service> ReplicaCtx<S> {
    pub fn set_phase(&self, slot: usize, phase: BlockedOn) {
        *self.phases[slot].lock().expect("phase lock") = phase;
    }

    pub fn phases(&self) -> Vec<BlockedOn> {
        self.phases
            .iter()
            .map(|p| *p.lock().expect("phase lock"))
            .collect()
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    /// Blocks on `rx`, giving up when the run is being torn down.
    pub fn wait<T>(&self, rx: &Receiver<T>) -> Result<T, Stopped> {
        loop {
            match rx.recv_timeout(POLL) {
                Ok(v) => return Ok(v),
                Err(RecvTimeoutError::Timeout) if !self.stopped() => continue,
                Err(_) => return Err(Stopped),
            }
        }
    }

    pub fn signal<T>(&self, tx: &Sender<T>, mut v: T) -> Result<(), Stopped> {
        loop {
            match tx.send_timeout(v, POLL) {
                Ok(()) => return Ok(()),
                Err(SendTimeoutError::Timeout(back)) if !self.stopped() => v = back,
                Err(_) => return Err(Stopped),
            }
        }
    }

    /// Decodes and executes `req`, records it and responds to the client.
    /// Returns false when a planted fault made the replica skip it.
    pub fn execute(
        &self,
        out: &mut WorkerOutput,
        req: &Request,
        cmd: Option<&S::Cmd>,
        mode: ExecMode,
    ) -> bool {
        let n = self.executed.fetch_add(1, Ordering::Relaxed);
        if self.skip_at == Some(n) {
            out.stats.skipped += 1;
            return false;
        }
        let t_start = self.clock.now();
        let output = match cmd {
            Some(c) => self.service.execute(c),
            None => match self.service.decode(req.cid, &req.input) {
                Some(c) => {
                    self.check_gamma(req, &c);
                    self.service.execute(&c)
                }
                None => self.service.malformed(),
            },
        };
        let t_end = self.clock.now();
        out.exec.push(ExecRecord {
            replica: self.replica,
            thread: out.thread,
            client_id: req.client_id,
            client_seq: req.client_seq,
            cid: req.cid.0,
            t_start,
            t_end,
            mode,
        });
        out.stats.executed += 1;
        let output = Bytes::from(output);
        if self.record_responses {
            out.responses
                .push((req.client_id, req.client_seq, output.clone()));
        }
        if let Some(tx) = self.router.get(req.client_id as usize) {
            let _ = tx.send(Response {
                client_id: req.client_id,
                client_seq: req.client_seq,
                replica: self.replica,
                output,
            });
        }
        true
    }

    /// With a checker installed, recomputes deterministic destination sets
    /// and insists they match the carried one.
    fn check_gamma(&self, req: &Request, cmd: &S::Cmd) {
        let Some(cg) = &self.gamma_check else { return };
        if !cg.is_deterministic() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let expected = cg.groups(cmd, &mut rng).expect("carried command maps to groups");
        assert_eq!(
            expected, req.groups,
            "request {}:{} carries a destination set the C-G function disagrees with",
            req.client_id, req.client_seq
        );
    }
}

/// Seeded perturbation of thread interleavings for stress runs.
pub(crate) struct Jitter(Option<ChaCha8Rng>);

impl Jitter {
    pub fn new(seed: Option<u64>, replica: u32, thread: u32) -> Self {
        Self(seed.map(|s| {
            ChaCha8Rng::seed_from_u64(s ^ ((replica as u64) << 32) ^ thread as u64)
        }))
    }

    pub fn perturb(&mut self) {
        let Some(rng) = self.0.as_mut() else { return };
        let roll: f64 = rng.random();
        if roll < 0.25 {
            std::thread::yield_now();
        } else if roll < 0.30 {
            std::thread::sleep(Duration::from_micros(rng.random_range(1..50)));
        }
    }
}
