use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use crate::kvstore::{initial_value, Key, KvCommand, KvError, KvOutput, Value};

/// Sequential specification of an object for linearizability checking.
///
/// Operations are grouped by [`partition`](Self::partition) and each group
/// is checked on its own, which is sound when operations in different
/// partitions commute and never observe each other (for instance, single
/// key operations on a map).
pub trait SequentialSpec {
    type State: Clone + Eq + Hash;
    type Op;
    type Ret: PartialEq;

    fn init(&self, partition: u64) -> Self::State;
    fn step(&self, state: &Self::State, op: &Self::Op) -> (Self::State, Self::Ret);

    fn partition(&self, _op: &Self::Op) -> u64 {
        0
    }
}

/// One invocation with its (possibly missing) response, timestamps on a
/// single shared clock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event<Op, Ret> {
    pub client: u32,
    pub seq: u64,
    pub op: Op,
    /// `None` for an operation that never returned; it may or may not have
    /// taken effect.
    pub ret: Option<Ret>,
    pub invoke: u64,
    pub response: Option<u64>,
}

pub type History<Op, Ret> = Vec<Event<Op, Ret>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinVerdict {
    /// A witness: indices into the history in linearization order.
    Linearizable(Vec<usize>),
    /// No valid linearization. `prefix` is the longest linearizable prefix
    /// found for the failing partition; `blocked` the completed operations
    /// none of which can extend it.
    Violation { prefix: Vec<usize>, blocked: Vec<usize> },
    /// The search budget ran out before a verdict.
    Inconclusive { explored: u64 },
}

impl LinVerdict {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, LinVerdict::Linearizable(_))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LinVerdict::Linearizable(_) => 0,
            LinVerdict::Violation { .. } => 1,
            LinVerdict::Inconclusive { .. } => 2,
        }
    }
}

/// Default bound on search nodes per history.
pub const DEFAULT_BUDGET: u64 = 5_000_000;

/// Wing–Gong search with memoisation of `(linearized set, state)`.
pub fn check_linearizable<S: SequentialSpec>(
    history: &History<S::Op, S::Ret>,
    spec: &S,
    budget: u64,
) -> LinVerdict {
    let mut parts: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in history.iter().enumerate() {
        parts.entry(spec.partition(&e.op)).or_default().push(i);
    }
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(parts.len());
    let mut explored = 0;
    for (p, idx) in parts {
        let mut search = Search {
            spec,
            history,
            idx: &idx,
            seen: HashSet::new(),
            done: vec![false; idx.len()],
            order: Vec::with_capacity(idx.len()),
            best: Vec::new(),
            explored: 0,
            budget: budget.saturating_sub(explored),
        };
        let found = search.dfs(spec.init(p));
        explored += search.explored;
        match found {
            Some(true) => orders.push(search.order.iter().rev().map(|&i| idx[i]).collect()),
            Some(false) => {
                let best: Vec<usize> = search.best.iter().map(|&i| idx[i]).collect();
                let placed: HashSet<usize> = best.iter().copied().collect();
                let blocked = idx
                    .iter()
                    .copied()
                    .filter(|i| !placed.contains(i) && history[*i].response.is_some())
                    .collect();
                return LinVerdict::Violation {
                    prefix: best,
                    blocked,
                };
            }
            None => return LinVerdict::Inconclusive { explored },
        }
    }
    // Partitions are independent; merge the per-partition orders (kept
    // reversed so heads pop off the back), earliest invoked head first.
    let mut witness = Vec::with_capacity(history.len());
    while let Some(next) = orders
        .iter_mut()
        .filter(|o| !o.is_empty())
        .min_by_key(|o| history[*o.last().expect("non-empty")].invoke)
    {
        witness.push(next.pop().expect("non-empty"));
    }
    LinVerdict::Linearizable(witness)
}

struct Search<'a, S: SequentialSpec> {
    spec: &'a S,
    history: &'a History<S::Op, S::Ret>,
    idx: &'a [usize],
    seen: HashSet<(Vec<u64>, S::State)>,
    done: Vec<bool>,
    order: Vec<usize>,
    best: Vec<usize>,
    explored: u64,
    budget: u64,
}

impl<S: SequentialSpec> Search<'_, S> {
    fn key(&self) -> Vec<u64> {
        let mut bits = vec![0u64; self.done.len().div_ceil(64)];
        for (i, &d) in self.done.iter().enumerate() {
            if d {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        bits
    }

    /// `Some(true)` when every completed operation could be placed,
    /// `Some(false)` when no order works, `None` when out of budget.
    fn dfs(&mut self, state: S::State) -> Option<bool> {
        self.explored += 1;
        if self.explored > self.budget {
            return None;
        }
        if self.order.len() > self.best.len() {
            self.best = self.order.clone();
        }
        let ev = |i: usize| &self.history[self.idx[i]];
        let pending_complete = (0..self.done.len()).any(|i| !self.done[i] && ev(i).response.is_some());
        if !pending_complete {
            return Some(true);
        }
        if !self.seen.insert((self.key(), state.clone())) {
            return Some(false);
        }
        // An operation can go next only if no remaining operation returned
        // strictly before it was invoked; equal timestamps count as
        // concurrent.
        let horizon = (0..self.done.len())
            .filter(|&i| !self.done[i])
            .filter_map(|i| ev(i).response)
            .min()
            .unwrap_or(u64::MAX);
        let candidates: Vec<usize> = (0..self.done.len())
            .filter(|&i| !self.done[i] && ev(i).invoke <= horizon)
            .collect();
        for i in candidates {
            let e = ev(i);
            let (next, ret) = self.spec.step(&state, &e.op);
            if let Some(expected) = &e.ret {
                if *expected != ret {
                    continue;
                }
            }
            self.done[i] = true;
            self.order.push(i);
            let r = self.dfs(next);
            match r {
                Some(true) => return r,
                None => return None,
                Some(false) => {}
            }
            self.order.pop();
            self.done[i] = false;
        }
        Some(false)
    }
}

/// The key-value store's sequential semantics, per key, over a tree
/// preloaded with keys `0..preloaded`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KvSpec {
    pub preloaded: u64,
}

impl SequentialSpec for KvSpec {
    type State = Option<Value>;
    type Op = KvCommand;
    type Ret = KvOutput;

    fn init(&self, partition: u64) -> Option<Value> {
        let k = partition as Key;
        (k >= 0 && (k as u64) < self.preloaded).then(|| initial_value(k))
    }

    fn step(&self, state: &Option<Value>, op: &KvCommand) -> (Option<Value>, KvOutput) {
        match (*op, *state) {
            (KvCommand::Read { .. }, Some(v)) => (*state, KvOutput::Value(v)),
            (KvCommand::Read { .. }, None) => (None, KvOutput::Err(KvError::KeyMissing)),
            (KvCommand::Update { v, .. }, Some(_)) => (Some(v), KvOutput::Done),
            (KvCommand::Update { .. }, None) => (None, KvOutput::Err(KvError::KeyMissing)),
            (KvCommand::Insert { v, .. }, None) => (Some(v), KvOutput::Done),
            (KvCommand::Insert { .. }, Some(_)) => (*state, KvOutput::Err(KvError::KeyExists)),
            (KvCommand::Delete { .. }, Some(_)) => (None, KvOutput::Done),
            (KvCommand::Delete { .. }, None) => (None, KvOutput::Err(KvError::KeyMissing)),
        }
    }

    fn partition(&self, op: &KvCommand) -> u64 {
        op.key() as u64
    }
}

/// Checks many histories, in parallel with the `parallel` feature.
pub fn check_all<S>(histories: &[History<S::Op, S::Ret>], spec: &S, budget: u64) -> Vec<LinVerdict>
where
    S: SequentialSpec + Sync,
    S::Op: Sync,
    S::Ret: Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        histories
            .par_iter()
            .map(|h| check_linearizable(h, spec, budget))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        check_all_sequential(histories, spec, budget)
    }
}

pub fn check_all_sequential<S: SequentialSpec>(
    histories: &[History<S::Op, S::Ret>],
    spec: &S,
    budget: u64,
) -> Vec<LinVerdict> {
    histories
        .iter()
        .map(|h| check_linearizable(h, spec, budget))
        .collect()
}
