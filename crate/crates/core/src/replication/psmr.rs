use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender};

use super::exec_log::ExecMode;
use super::worker::{BlockedOn, Jitter, ReplicaCtx, Stopped, WorkerOutput};
use super::{Request, Service};
use crate::multicast::{GroupId, Subscription};

/// Barrier endpoints of one worker. Every ordered pair of workers has its
/// own single-slot channel for arrival signals and one for releases, so a
/// signal sent to the wrong executor is never consumed by the right one.
pub(crate) struct Links {
    /// `arrive_tx[e]`: signal executor `t_{e+1}`.
    arrive_tx: Vec<Sender<()>>,
    /// `arrive_rx[j]`: arrival from `t_{j+1}`.
    arrive_rx: Vec<Receiver<()>>,
    release_tx: Vec<Sender<()>>,
    release_rx: Vec<Receiver<()>>,
}

/// Wires the k×k signal matrix; entry `i` belongs to worker `t_{i+1}`.
pub(crate) fn barrier(k: usize) -> Vec<Links> {
    let mut links: Vec<Links> = (0..k)
        .map(|_| Links {
            arrive_tx: Vec::with_capacity(k),
            arrive_rx: Vec::with_capacity(k),
            release_tx: Vec::with_capacity(k),
            release_rx: Vec::with_capacity(k),
        })
        .collect();
    let mut arrive_rx = vec![Vec::with_capacity(k); k];
    let mut release_rx = vec![Vec::with_capacity(k); k];
    for from in links.iter_mut() {
        for to in 0..k {
            let (tx, rx) = bounded(1);
            from.arrive_tx.push(tx);
            arrive_rx[to].push(rx);
            let (tx, rx) = bounded(1);
            from.release_tx.push(tx);
            release_rx[to].push(rx);
        }
    }
    for (l, (a, r)) in links.iter_mut().zip(arrive_rx.into_iter().zip(release_rx)) {
        l.arrive_rx = a;
        l.release_rx = r;
    }
    links
}

pub(crate) struct PsmrWorker<S: Service> {
    pub ctx: Arc<ReplicaCtx<S>>,
    /// 1-based thread index.
    pub index: usize,
    pub k: usize,
    pub sub: Subscription,
    pub links: Links,
    /// Planted bug: elect the highest-indexed destination thread.
    pub elect_max: bool,
    pub jitter: Jitter,
}

impl<S: Service> PsmrWorker<S> {
    pub fn run(mut self) -> WorkerOutput {
        let mut out = WorkerOutput {
            thread: self.index as u32,
            ..Default::default()
        };
        let _ = self.serve(&mut out);
        out.deliveries = self.sub.take_log();
        self.ctx.set_phase(self.index - 1, BlockedOn::Done);
        out
    }

    fn serve(&mut self, out: &mut WorkerOutput) -> Result<(), Stopped> {
        let me = self.index;
        let slot = me - 1;
        loop {
            if self.ctx.stopped() {
                return Err(Stopped);
            }
            self.ctx.set_phase(slot, BlockedOn::Delivery);
            let Ok(msg) = self.sub.deliver() else {
                return Ok(());
            };
            out.stats.delivered += 1;
            let Some(req) = Request::decode(msg.payload) else {
                continue;
            };
            let tau = req.groups.worker_indices(self.k);
            if !tau.contains(GroupId::Index(me as u8)) {
                continue;
            }
            if tau.len() == 1 {
                self.ctx.set_phase(slot, BlockedOn::Executing);
                if self.ctx.execute(out, &req, None, ExecMode::Parallel) {
                    out.stats.parallel += 1;
                }
                continue;
            }

            let e = if self.elect_max {
                tau.max_index()
            } else {
                tau.min_index()
            }
            .expect("multi-group set has numbered members");
            self.jitter.perturb();
            if me == e {
                for j in tau.indices().filter(|&j| j != me) {
                    out.stats.arrivals_expected += 1;
                    self.ctx.set_phase(slot, BlockedOn::Arrival { from: j as u32 });
                    self.ctx.wait(&self.links.arrive_rx[j - 1])?;
                    out.stats.arrivals_received += 1;
                }
                self.ctx.set_phase(slot, BlockedOn::Executing);
                if self.ctx.execute(out, &req, None, ExecMode::Synchronous) {
                    out.stats.synchronous += 1;
                }
                self.jitter.perturb();
                for j in tau.indices().filter(|&j| j != me) {
                    self.ctx.signal(&self.links.release_tx[j - 1], ())?;
                    out.stats.releases_sent += 1;
                }
            } else {
                self.ctx.signal(&self.links.arrive_tx[e - 1], ())?;
                out.stats.signals_sent += 1;
                self.ctx.set_phase(slot, BlockedOn::Release { from: e as u32 });
                self.ctx.wait(&self.links.release_rx[e - 1])?;
                out.stats.releases_received += 1;
            }
        }
    }
}
