use crate::dependency::{Command, CommandId};

use super::tree::{BPlusTree, Key, KvError, Value};

const SHAPE_CHECK_LIMIT: usize = 2048;

pub const CMD_INSERT: CommandId = CommandId(0);
pub const CMD_DELETE: CommandId = CommandId(1);
pub const CMD_READ: CommandId = CommandId(2);
pub const CMD_UPDATE: CommandId = CommandId(3);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KvCommand {
    Insert { k: Key, v: Value },
    Delete { k: Key },
    Read { k: Key },
    Update { k: Key, v: Value },
}

/// Result of a command; errors are part of the output, never raised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KvOutput {
    Done,
    Value(Value),
    Err(KvError),
    /// The request did not decode to a store command.
    Malformed,
}

impl KvCommand {
    pub fn key(&self) -> Key {
        match *self {
            KvCommand::Insert { k, .. }
            | KvCommand::Delete { k }
            | KvCommand::Read { k }
            | KvCommand::Update { k, .. } => k,
        }
    }

    pub fn id(&self) -> CommandId {
        match self {
            KvCommand::Insert { .. } => CMD_INSERT,
            KvCommand::Delete { .. } => CMD_DELETE,
            KvCommand::Read { .. } => CMD_READ,
            KvCommand::Update { .. } => CMD_UPDATE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KvCommand::Insert { .. } => "insert",
            KvCommand::Delete { .. } => "delete",
            KvCommand::Read { .. } => "read",
            KvCommand::Update { .. } => "update",
        }
    }

    /// Inserts and deletes may restructure the tree.
    pub fn is_structural(&self) -> bool {
        matches!(self, KvCommand::Insert { .. } | KvCommand::Delete { .. })
    }

    pub fn apply(&self, tree: &mut BPlusTree) -> KvOutput {
        let r = match *self {
            KvCommand::Insert { k, v } => tree.insert(k, v),
            KvCommand::Delete { k } => tree.delete(k).map(|_| ()),
            _ => return self.apply_shared(tree).expect("non-structural"),
        };
        // Full shape checks are linear in the tree size; only small trees
        // are checked on every command.
        debug_assert!(tree.len() > SHAPE_CHECK_LIMIT || tree.check_invariants().is_ok());
        KvOutput::from(r)
    }

    /// Runs a read or update; `None` for structural commands.
    pub fn apply_shared(&self, tree: &BPlusTree) -> Option<KvOutput> {
        Some(match *self {
            KvCommand::Read { k } => match tree.get(k) {
                Some(v) => KvOutput::Value(v),
                None => KvOutput::Err(KvError::KeyMissing),
            },
            KvCommand::Update { k, v } => KvOutput::from(tree.update(k, v)),
            _ => return None,
        })
    }

    /// Marshaled input parameters (the command id travels separately).
    pub fn encode_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.key().to_le_bytes());
        if let KvCommand::Insert { v, .. } | KvCommand::Update { v, .. } = *self {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(cid: CommandId, input: &[u8]) -> Option<Self> {
        let word = |i: usize| -> Option<[u8; 8]> { input.get(i * 8..i * 8 + 8)?.try_into().ok() };
        let k = Key::from_le_bytes(word(0)?);
        let with_value = cid == CMD_INSERT || cid == CMD_UPDATE;
        if input.len() != if with_value { 16 } else { 8 } {
            return None;
        }
        Some(match cid {
            CMD_INSERT => KvCommand::Insert {
                k,
                v: Value::from_le_bytes(word(1)?),
            },
            CMD_UPDATE => KvCommand::Update {
                k,
                v: Value::from_le_bytes(word(1)?),
            },
            CMD_DELETE => KvCommand::Delete { k },
            CMD_READ => KvCommand::Read { k },
            _ => return None,
        })
    }
}

impl Command for KvCommand {
    fn cid(&self) -> CommandId {
        self.id()
    }

    fn int_param(&self, index: usize) -> Option<i64> {
        (index == 0).then(|| self.key())
    }
}

impl From<Result<(), KvError>> for KvOutput {
    fn from(r: Result<(), KvError>) -> Self {
        match r {
            Ok(()) => KvOutput::Done,
            Err(e) => KvOutput::Err(e),
        }
    }
}

impl KvOutput {
    pub fn encode(&self) -> Vec<u8> {
        match *self {
            KvOutput::Done => vec![0],
            KvOutput::Value(v) => {
                let mut out = vec![1];
                out.extend_from_slice(&v.to_le_bytes());
                out
            }
            KvOutput::Err(KvError::KeyExists) => vec![2],
            KvOutput::Err(KvError::KeyMissing) => vec![3],
            KvOutput::Err(KvError::Capacity) => vec![4],
            KvOutput::Malformed => vec![5],
        }
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        Some(match bytes {
            [0] => KvOutput::Done,
            [1, rest @ ..] => KvOutput::Value(Value::from_le_bytes(rest.try_into().ok()?)),
            [2] => KvOutput::Err(KvError::KeyExists),
            [3] => KvOutput::Err(KvError::KeyMissing),
            [4] => KvOutput::Err(KvError::Capacity),
            [5] => KvOutput::Malformed,
            _ => return None,
        })
    }
}
