//! Executable correctness checks over run artifacts.

mod determinism;
mod execution;
mod linearizability;
mod order;

use std::time::Duration;

pub use determinism::{check_determinism, DeterminismReport};
pub use execution::{audit_execution, ExecViolation};
pub use linearizability::{
    check_all, check_all_sequential, check_linearizable, Event, History, KvSpec, LinVerdict,
    SequentialSpec, DEFAULT_BUDGET,
};
pub use order::{audit_order, AuditError, MessageId, OrderVerdict};

use crate::replication::{Cluster, DeadlockReport, RunOutput, Service};

pub enum DeadlockVerdict {
    Drained(RunOutput),
    Wedged(DeadlockReport, RunOutput),
}

impl DeadlockVerdict {
    pub fn drained(&self) -> bool {
        matches!(self, DeadlockVerdict::Drained(_))
    }

    pub fn output(&self) -> &RunOutput {
        match self {
            DeadlockVerdict::Drained(o) | DeadlockVerdict::Wedged(_, o) => o,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.drained() {
            0
        } else {
            1
        }
    }
}

/// Closes the engine's input and waits for it to drain. On timeout the
/// verdict carries what every stuck thread was waiting for.
pub fn detect_deadlock<S: Service>(cluster: Cluster<S>, timeout: Duration) -> DeadlockVerdict {
    let finished = cluster.finish(timeout);
    match finished.deadlock {
        None => DeadlockVerdict::Drained(finished.output),
        Some(report) => DeadlockVerdict::Wedged(report, finished.output),
    }
}
