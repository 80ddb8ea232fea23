use std::collections::{BTreeMap, HashMap, HashSet};

use petgraph::algo::{kosaraju_scc, toposort};
use petgraph::graph::{DiGraph, NodeIndex};

use crate::multicast::{DeliveryRecord, GroupId};

/// A multicast message, identified by its stream position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId {
    pub group: GroupId,
    pub group_seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OrderVerdict {
    /// Precedence over shared messages is acyclic.
    Acyclic { messages: usize, subscriptions: usize },
    /// Messages forming a cycle, each delivered before the next by some
    /// subscription (and the last before the first).
    Cycle(Vec<MessageId>),
}

impl OrderVerdict {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, OrderVerdict::Acyclic { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("replica {replica} thread {thread} skipped {group} sequence {expected} (next seen {found})")]
    Gap {
        replica: u32,
        thread: u32,
        group: GroupId,
        expected: u64,
        found: u64,
    },
    #[error("message {group}#{group_seq} delivered with different payloads")]
    PayloadMismatch { group: GroupId, group_seq: u64 },
}

/// Audits a run's delivery logs: each subscription's per-group sequence
/// must be gapless, every copy of a message must carry the same payload,
/// and the delivered-before relation over messages seen by at least two
/// subscriptions must be acyclic.
pub fn audit_order(records: &[DeliveryRecord]) -> Result<OrderVerdict, AuditError> {
    let mut subs: BTreeMap<(u32, u32), Vec<&DeliveryRecord>> = BTreeMap::new();
    for r in records {
        subs.entry((r.replica, r.thread)).or_default().push(r);
    }

    let mut payload: HashMap<MessageId, u64> = HashMap::new();
    let mut copies: HashMap<MessageId, u32> = HashMap::new();
    for (&(replica, thread), recs) in &subs {
        let mut next: HashMap<GroupId, u64> = HashMap::new();
        for r in recs {
            let expected = next.entry(r.group).or_insert(1);
            if r.group_seq != *expected {
                return Err(AuditError::Gap {
                    replica,
                    thread,
                    group: r.group,
                    expected: *expected,
                    found: r.group_seq,
                });
            }
            *expected += 1;
            let id = MessageId {
                group: r.group,
                group_seq: r.group_seq,
            };
            if *payload.entry(id).or_insert(r.payload_hash) != r.payload_hash {
                return Err(AuditError::PayloadMismatch {
                    group: r.group,
                    group_seq: r.group_seq,
                });
            }
            *copies.entry(id).or_insert(0) += 1;
        }
    }

    let mut graph: DiGraph<MessageId, ()> = DiGraph::new();
    let mut nodes: HashMap<MessageId, NodeIndex> = HashMap::new();
    let mut edges: HashSet<(NodeIndex, NodeIndex)> = HashSet::new();
    for recs in subs.values() {
        let mut prev: Option<NodeIndex> = None;
        for r in recs {
            let id = MessageId {
                group: r.group,
                group_seq: r.group_seq,
            };
            if copies[&id] < 2 {
                continue;
            }
            let n = *nodes.entry(id).or_insert_with(|| graph.add_node(id));
            if let Some(p) = prev {
                if edges.insert((p, n)) {
                    graph.add_edge(p, n, ());
                }
            }
            prev = Some(n);
        }
    }

    if toposort(&graph, None).is_ok() {
        return Ok(OrderVerdict::Acyclic {
            messages: graph.node_count(),
            subscriptions: subs.len(),
        });
    }
    let scc = kosaraju_scc(&graph)
        .into_iter()
        .find(|c| c.len() > 1 || c.iter().any(|&n| graph.contains_edge(n, n)))
        .expect("a graph without a topological order has a cycle");
    Ok(OrderVerdict::Cycle(
        cycle_in(&graph, &scc).into_iter().map(|n| graph[n]).collect(),
    ))
}

/// A simple cycle inside a strongly connected component.
fn cycle_in(graph: &DiGraph<MessageId, ()>, scc: &[NodeIndex]) -> Vec<NodeIndex> {
    let inside: HashSet<NodeIndex> = scc.iter().copied().collect();
    let start = *scc.iter().min_by_key(|&&n| graph[n]).expect("non-empty component");
    // Breadth-first search back to `start` along edges inside the component.
    let mut parent: HashMap<NodeIndex, NodeIndex> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for m in graph.neighbors(n) {
            if !inside.contains(&m) {
                continue;
            }
            if m == start {
                let mut path = vec![n];
                let mut cur = n;
                while cur != start {
                    cur = parent[&cur];
                    path.push(cur);
                }
                path.reverse();
                return path;
            }
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(m) {
                e.insert(n);
                queue.push_back(m);
            }
        }
    }
    unreachable!("strongly connected component has a cycle through every node")
}
