//! Client proxies and the execution engines.
//!
//! * **P-SMR**: `k` workers per replica, worker `t_i` subscribed to
//!   `{g_i, ALL}`. Single-group commands run in parallel mode; multi-group
//!   commands are executed by the lowest-indexed destination thread after a
//!   signal/release barrier with the other destinations.
//! * **SMR**: one thread per replica executes the total order.
//! * **sP-SMR**: one scheduler per replica delivers the total order and
//!   dispatches commands to workers, never running dependent ones together.
//! * **no-rep**: the sP-SMR scheduler fed directly by clients, one server.

mod client;
mod cluster;
mod exec_log;
mod psmr;
mod request;
mod scheduler;
mod smr;
mod worker;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use client::{ClientProxy, Completion};
pub use cluster::{
    Cluster, DeadlockReport, EngineConfig, Fault, Finished, ReplicaOutput, RunOutput,
};
pub use exec_log::{parse_exec_log, write_exec_log, ExecLogError, ExecMode, ExecRecord};
pub use worker::{BlockedOn, WorkerStats};
pub use request::{Request, Response, REQUEST_HEADER_LEN};

use crate::dependency::{CDep, Command, CommandId};
use crate::StateDigest;

/// A replicated application.
///
/// `execute` runs under the engine's serialization discipline and must be
/// deterministic: the same sequence of commands yields the same outputs and
/// the same [`digest`](Service::digest) at every replica.
pub trait Service: Send + Sync + 'static {
    type Cmd: Command + Clone + Send + Sync + 'static;

    fn cdep(&self) -> Arc<CDep>;
    fn decode(&self, cid: CommandId, input: &[u8]) -> Option<Self::Cmd>;
    fn execute(&self, cmd: &Self::Cmd) -> Vec<u8>;
    /// Output for requests that do not decode.
    fn malformed(&self) -> Vec<u8>;
    fn digest(&self) -> StateDigest;
}

/// Commands a client proxy can marshal.
pub trait WireCommand: Command {
    fn encode_input(&self) -> Vec<u8>;
}

impl WireCommand for crate::kvstore::KvCommand {
    fn encode_input(&self) -> Vec<u8> {
        crate::kvstore::KvCommand::encode_input(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Psmr,
    Spsmr,
    Smr,
    Norep,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] = [
        EngineKind::Psmr,
        EngineKind::Spsmr,
        EngineKind::Smr,
        EngineKind::Norep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Psmr => "psmr",
            EngineKind::Spsmr => "spsmr",
            EngineKind::Smr => "smr",
            EngineKind::Norep => "norep",
        }
    }

    /// Whether clients address requests by their command-to-groups mapping
    /// (as opposed to sending everything to one ordered stream).
    pub fn uses_groups(self) -> bool {
        self == EngineKind::Psmr
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EngineKind {
    type Err = ReplicationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EngineKind::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ReplicationError::Config(format!("unknown engine {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplicationError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("window of {0} outstanding requests is full")]
    WindowFull(usize),
    #[error("timed out waiting for a response")]
    Timeout,
    #[error(transparent)]
    Dependency(#[from] crate::dependency::DepError),
    #[error(transparent)]
    Multicast(#[from] crate::multicast::MulticastError),
}

/// Single process-wide time base for logs and histories, in nanoseconds.
#[derive(Clone, Copy, Debug)]
pub struct HarnessClock {
    epoch: Instant,
}

impl Default for HarnessClock {
    fn default() -> Self {
        Self::new()
    }
}

impl HarnessClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    pub fn now(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }
}
