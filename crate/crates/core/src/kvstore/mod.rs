//! Replicated key-value store backed by an in-memory B+-tree.

mod command;
mod snapshot;
mod tree;

use std::sync::{Arc, OnceLock, RwLock};

use sha2::{Digest, Sha256};

pub use command::{KvCommand, KvOutput, CMD_DELETE, CMD_INSERT, CMD_READ, CMD_UPDATE};
pub use snapshot::{parse_snapshot, write_snapshot, SnapshotError};
pub use tree::{BPlusTree, Iter, Key, KvError, Value, DEFAULT_FANOUT};

use crate::dependency::{CDep, CommandId, CommandSig, ParamDesc};
use crate::replication::Service;
use crate::StateDigest;

/// Dependencies of the store's commands: inserts and deletes depend on
/// every command; updates depend on updates and reads of the same key.
pub fn kv_cdep() -> CDep {
    let k = || ParamDesc::int("k");
    let v = || ParamDesc::bytes("v");
    let err = || ParamDesc::int("err");
    let sigs = vec![
        CommandSig::new("insert", vec![k(), v()], vec![err()]),
        CommandSig::new("delete", vec![k()], vec![err()]),
        CommandSig::new("read", vec![k()], vec![v(), err()]),
        CommandSig::new("update", vec![k(), v()], vec![err()]),
    ];
    CDep::builder(sigs)
        .always("insert", "*")
        .always("delete", "*")
        .on_key("update", "update", "k", "k")
        .on_key("update", "read", "k", "k")
        .build()
        .expect("static declaration is well formed")
}

/// Shared handle to [`kv_cdep`], built once.
pub fn shared_kv_cdep() -> Arc<CDep> {
    static CDEP: OnceLock<Arc<CDep>> = OnceLock::new();
    CDEP.get_or_init(|| Arc::new(kv_cdep())).clone()
}

/// Digest over the sorted `(key, value)` sequence; independent of node
/// layout.
pub fn state_hash(tree: &BPlusTree) -> StateDigest {
    digest_entries(tree.iter())
}

pub fn digest_entries(entries: impl IntoIterator<Item = (Key, Value)>) -> StateDigest {
    let mut h = Sha256::new();
    for (k, v) in entries {
        h.update(k.to_le_bytes());
        h.update(v.to_le_bytes());
    }
    StateDigest(h.finalize().into())
}

/// Value stored under preloaded key `k`.
pub fn initial_value(k: Key) -> Value {
    (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// The store as a replicated service.
///
/// The tree is not synchronised by the service: reads and updates share it,
/// inserts and deletes need it exclusively, and the engine's ordering is
/// what keeps those apart. The lock is only ever *tried*, so a conflicting
/// schedule panics instead of being silently serialised.
pub struct KvService {
    tree: RwLock<BPlusTree>,
    cdep: Arc<CDep>,
    work: u32,
}

impl KvService {
    pub fn new(tree: BPlusTree) -> Self {
        Self {
            tree: RwLock::new(tree),
            cdep: shared_kv_cdep(),
            work: 0,
        }
    }

    /// Tree of the given fanout preloaded with keys `0..keys`.
    pub fn preloaded(keys: u64, fanout: usize) -> Self {
        let mut tree = BPlusTree::new(fanout);
        for k in 0..keys as Key {
            tree.insert(k, initial_value(k)).expect("fresh keys");
        }
        Self::new(tree)
    }

    /// Adds a fixed amount of CPU work to every command, standing in for
    /// service logic heavier than one tree lookup.
    pub fn with_work(mut self, iterations: u32) -> Self {
        self.work = iterations;
        self
    }

    pub fn snapshot(&self) -> Vec<(Key, Value)> {
        self.tree.read().expect("tree lock").iter().collect()
    }

    pub fn len(&self) -> usize {
        self.tree.read().expect("tree lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.tree.read().expect("tree lock").check_invariants()
    }
}

/// Spins for `iterations` rounds of cheap integer mixing.
pub fn burn(iterations: u32, seed: u64) -> u64 {
    let mut x = seed | 1;
    for _ in 0..iterations {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
    }
    std::hint::black_box(x)
}

impl Service for KvService {
    type Cmd = KvCommand;

    fn cdep(&self) -> Arc<CDep> {
        self.cdep.clone()
    }

    fn decode(&self, cid: CommandId, input: &[u8]) -> Option<KvCommand> {
        KvCommand::decode(cid, input)
    }

    fn execute(&self, cmd: &KvCommand) -> Vec<u8> {
        if self.work > 0 {
            burn(self.work, cmd.key() as u64);
        }
        let out = if cmd.is_structural() {
            let mut tree = self
                .tree
                .try_write()
                .expect("structural command ran concurrently with another command");
            cmd.apply(&mut tree)
        } else {
            let tree = self
                .tree
                .try_read()
                .expect("command ran concurrently with a structural command");
            cmd.apply_shared(&tree)
                .expect("reads and updates run on a shared borrow")
        };
        out.encode()
    }

    fn malformed(&self) -> Vec<u8> {
        KvOutput::Malformed.encode()
    }

    fn digest(&self) -> StateDigest {
        state_hash(&self.tree.read().expect("tree lock"))
    }
}
