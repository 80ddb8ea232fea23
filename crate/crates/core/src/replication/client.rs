use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessClock, ReplicationError, Request, Response, WireCommand};
use crate::dependency::CommandToGroups;
use crate::multicast::{GroupSet, MulticastError, MulticastFabric};

/// Where a proxy sends requests.
#[derive(Clone)]
pub(crate) enum Ingress {
    /// Through the multicast fabric; `by_groups` selects C-G addressing,
    /// otherwise everything goes to `ALL`.
    Fabric {
        fabric: MulticastFabric,
        by_groups: bool,
    },
    /// Straight into a server's queue.
    Direct(Sender<Request>),
}

/// A finished request as seen by the client.
#[derive(Clone, Debug)]
pub struct Completion {
    pub client_seq: u64,
    pub groups: GroupSet,
    pub output: Bytes,
    /// Replica whose response arrived first.
    pub replica: u32,
    pub invoke_ns: u64,
    pub response_ns: u64,
}

impl Completion {
    pub fn latency_ns(&self) -> u64 {
        self.response_ns.saturating_sub(self.invoke_ns)
    }
}

struct Pending {
    groups: GroupSet,
    invoke_ns: u64,
}

/// Client-side proxy: computes destination groups, multicasts requests and
/// returns the first response for each, dropping duplicates from other
/// replicas. At most `window` requests are outstanding.
pub struct ClientProxy<C: ?Sized> {
    id: u32,
    next_seq: u64,
    cg: Option<Arc<dyn CommandToGroups<C>>>,
    rng: ChaCha8Rng,
    ingress: Ingress,
    responses: Receiver<Response>,
    outstanding: HashMap<u64, Pending>,
    window: usize,
    clock: HarnessClock,
    duplicates: u64,
}

impl<C: WireCommand + ?Sized> ClientProxy<C> {
    pub(crate) fn new(
        id: u32,
        ingress: Ingress,
        responses: Receiver<Response>,
        cg: Option<Arc<dyn CommandToGroups<C>>>,
        seed: u64,
        window: usize,
        clock: HarnessClock,
    ) -> Self {
        Self {
            id,
            next_seq: 1,
            cg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ingress,
            responses,
            outstanding: HashMap::new(),
            window: window.max(1),
            clock,
            duplicates: 0,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Late responses from slower replicas that were discarded.
    pub fn duplicates_dropped(&self) -> u64 {
        self.duplicates
    }

    /// Destination set for `cmd` as this proxy would compute it. Consumes
    /// randomness for randomized rules.
    pub fn groups_for(&mut self, cmd: &C) -> Result<GroupSet, ReplicationError> {
        match (&self.ingress, &self.cg) {
            (Ingress::Fabric { by_groups: true, .. }, Some(cg)) => Ok(cg.groups(cmd, &mut self.rng)?),
            (Ingress::Fabric { by_groups: true, .. }, None) => Err(ReplicationError::Config(
                "engine addresses groups but the client has no C-G function".into(),
            )),
            _ => Ok(GroupSet::only_all()),
        }
    }

    /// Issues `cmd` without waiting; returns its sequence number.
    pub fn submit(&mut self, cmd: &C) -> Result<u64, ReplicationError> {
        if self.outstanding.len() >= self.window {
            return Err(ReplicationError::WindowFull(self.window));
        }
        let groups = self.groups_for(cmd)?;
        let seq = self.next_seq;
        let req = Request {
            client_id: self.id,
            client_seq: seq,
            cid: cmd.cid(),
            groups,
            input: Bytes::from(cmd.encode_input()),
        };
        let invoke_ns = self.clock.now();
        match &self.ingress {
            Ingress::Fabric { fabric, .. } => {
                fabric.multicast(groups, req.encode()).map_err(|e| match e {
                    MulticastError::Shutdown => ReplicationError::Unavailable("fabric shut down".into()),
                    e => e.into(),
                })?
            }
            Ingress::Direct(tx) => tx
                .send(req)
                .map_err(|_| ReplicationError::Unavailable("server stopped".into()))?,
        }
        self.next_seq += 1;
        self.outstanding.insert(seq, Pending { groups, invoke_ns });
        Ok(seq)
    }

    /// Waits for the next outstanding request to complete.
    pub fn recv(&mut self, timeout: Duration) -> Result<Completion, ReplicationError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let resp = match self.responses.recv_timeout(left) {
                Ok(r) => r,
                Err(RecvTimeoutError::Timeout) => return Err(ReplicationError::Timeout),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ReplicationError::Unavailable("all replicas stopped".into()))
                }
            };
            let Some(p) = self.outstanding.remove(&resp.client_seq) else {
                self.duplicates += 1;
                continue;
            };
            return Ok(Completion {
                client_seq: resp.client_seq,
                groups: p.groups,
                output: resp.output,
                replica: resp.replica,
                invoke_ns: p.invoke_ns,
                response_ns: self.clock.now(),
            });
        }
    }

    /// Submits `cmd` and blocks until its first response.
    pub fn execute(&mut self, cmd: &C, timeout: Duration) -> Result<Completion, ReplicationError> {
        let seq = self.submit(cmd)?;
        let deadline = Instant::now() + timeout;
        loop {
            let c = self.recv(deadline.saturating_duration_since(Instant::now()))?;
            if c.client_seq == seq {
                return Ok(c);
            }
        }
    }
}
