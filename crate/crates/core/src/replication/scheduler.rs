use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::exec_log::ExecMode;
use super::worker::{BlockedOn, ReplicaCtx, Stopped, WorkerOutput, POLL};
use super::{Request, Service};
use crate::dependency::ConflictIndex;
use crate::multicast::Subscription;

/// Where the scheduler takes its ordered input from.
pub(crate) enum Source {
    /// sP-SMR: the single delivery stream over `ALL`.
    Fabric(Subscription),
    /// no-rep: requests straight from clients, in arrival order.
    Direct(Receiver<Request>),
}

struct Job<C> {
    token: u64,
    req: Request,
    cmd: Option<C>,
}

/// Delivers requests one by one and hands them to `w` workers, dispatching
/// a command only once nothing it depends on is in flight. Independent
/// commands go to the least-loaded worker.
pub(crate) fn scheduler_loop<S: Service>(
    ctx: Arc<ReplicaCtx<S>>,
    workers: usize,
    mut source: Source,
) -> Vec<WorkerOutput> {
    let (done_tx, done_rx) = unbounded::<(usize, u64)>();
    let mut queues = Vec::with_capacity(workers);
    let mut handles = Vec::with_capacity(workers);
    for w in 0..workers {
        let (tx, rx) = unbounded::<Job<S::Cmd>>();
        queues.push(tx);
        let ctx = ctx.clone();
        let done = done_tx.clone();
        handles.push(
            thread::Builder::new()
                .name(format!("r{}-w{}", ctx.replica, w + 1))
                .spawn(move || worker_loop(ctx, w, rx, done))
                .expect("spawn scheduler worker"),
        );
    }
    drop(done_tx);

    let mut out = WorkerOutput::default();
    let mut sched = Scheduler {
        index: ConflictIndex::new(ctx.service.cdep()),
        in_flight: HashMap::new(),
        loads: vec![0; workers],
        next_token: 0,
    };
    let _ = sched.run(&ctx, &mut out, &mut source, &queues, &done_rx);
    drop(queues);
    if let Source::Fabric(sub) = &mut source {
        out.deliveries = sub.take_log();
    }
    ctx.set_phase(0, BlockedOn::Done);

    let mut outputs = vec![out];
    for h in handles {
        outputs.push(h.join().expect("scheduler worker panicked"));
    }
    outputs
}

struct Scheduler<C> {
    index: ConflictIndex,
    in_flight: HashMap<u64, (usize, Option<C>)>,
    loads: Vec<usize>,
    next_token: u64,
}

impl<C: crate::dependency::Command + Clone> Scheduler<C> {
    fn complete(&mut self, (worker, token): (usize, u64)) {
        if let Some((w, cmd)) = self.in_flight.remove(&token) {
            debug_assert_eq!(w, worker);
            self.loads[w] -= 1;
            if let Some(c) = cmd {
                self.index.remove(&c);
            }
        }
    }

    fn run<S: Service<Cmd = C>>(
        &mut self,
        ctx: &ReplicaCtx<S>,
        out: &mut WorkerOutput,
        source: &mut Source,
        queues: &[Sender<Job<C>>],
        done: &Receiver<(usize, u64)>,
    ) -> Result<(), Stopped> {
        loop {
            if ctx.stopped() {
                return Err(Stopped);
            }
            ctx.set_phase(0, BlockedOn::Delivery);
            let req = match source {
                Source::Fabric(sub) => {
                    let Ok(msg) = sub.deliver() else { return Ok(()) };
                    out.stats.delivered += 1;
                    match Request::decode(msg.payload) {
                        Some(r) => r,
                        None => continue,
                    }
                }
                Source::Direct(rx) => match rx.recv_timeout(POLL) {
                    Ok(r) => {
                        out.stats.delivered += 1;
                        r
                    }
                    Err(RecvTimeoutError::Timeout)
                        if !ctx.stopped() && !ctx.input_closed.load(Ordering::Acquire) =>
                    {
                        continue
                    }
                    Err(_) => return Ok(()),
                },
            };
            let cmd = ctx.service.decode(req.cid, &req.input);

            while let Ok(d) = done.try_recv() {
                self.complete(d);
            }
            if let Some(c) = &cmd {
                while self.index.conflicts(c) {
                    ctx.set_phase(0, BlockedOn::Conflict);
                    let d = ctx.wait(done)?;
                    self.complete(d);
                }
            }

            let w = (0..self.loads.len())
                .min_by_key(|&w| self.loads[w])
                .expect("at least one worker");
            let token = self.next_token;
            self.next_token += 1;
            if let Some(c) = &cmd {
                self.index.insert(c);
            }
            self.loads[w] += 1;
            self.in_flight.insert(token, (w, cmd.clone()));
            ctx.signal(&queues[w], Job { token, req, cmd })?;
        }
    }
}

fn worker_loop<S: Service>(
    ctx: Arc<ReplicaCtx<S>>,
    w: usize,
    jobs: Receiver<Job<S::Cmd>>,
    done: Sender<(usize, u64)>,
) -> WorkerOutput {
    let mut out = WorkerOutput {
        thread: w as u32 + 1,
        ..Default::default()
    };
    let slot = w + 1;
    loop {
        ctx.set_phase(slot, BlockedOn::Queue);
        let job = match jobs.recv_timeout(POLL) {
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) if !ctx.stopped() => continue,
            Err(_) => break,
        };
        out.stats.delivered += 1;
        ctx.set_phase(slot, BlockedOn::Executing);
        ctx.execute(&mut out, &job.req, job.cmd.as_ref(), ExecMode::Scheduled);
        let _ = done.send((w, job.token));
    }
    ctx.set_phase(slot, BlockedOn::Done);
    out
}
