use std::sync::Arc;

use super::exec_log::ExecMode;
use super::worker::{BlockedOn, ReplicaCtx, WorkerOutput};
use super::{Request, Service};
use crate::multicast::Subscription;

/// Executes the single total order one command at a time.
pub(crate) fn smr_loop<S: Service>(ctx: Arc<ReplicaCtx<S>>, mut sub: Subscription) -> WorkerOutput {
    let mut out = WorkerOutput {
        thread: 1,
        ..Default::default()
    };
    while !ctx.stopped() {
        ctx.set_phase(0, BlockedOn::Delivery);
        let Ok(msg) = sub.deliver() else { break };
        out.stats.delivered += 1;
        let Some(req) = Request::decode(msg.payload) else {
            continue;
        };
        ctx.set_phase(0, BlockedOn::Executing);
        ctx.execute(&mut out, &req, None, ExecMode::Sequential);
    }
    out.deliveries = sub.take_log();
    ctx.set_phase(0, BlockedOn::Done);
    out
}
