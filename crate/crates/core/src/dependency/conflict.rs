use std::collections::HashMap;
use std::sync::Arc;

use super::cdep::{CDep, Command, CommandId, Rule};

/// Multiset of in-flight commands indexed for O(#commands) conflict checks,
/// used by schedulers that only run independent commands concurrently.
#[derive(Debug, Clone)]
pub struct ConflictIndex {
    cdep: Arc<CDep>,
    by_cid: Vec<u32>,
    by_key: HashMap<(CommandId, usize, i64), u32>,
    total: usize,
}

impl ConflictIndex {
    pub fn new(cdep: Arc<CDep>) -> Self {
        let n = cdep.len();
        Self {
            cdep,
            by_cid: vec![0; n],
            by_key: HashMap::new(),
            total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// True when `cmd` depends on some command currently in the set.
    /// Commands whose key parameter is missing are treated as conflicting.
    pub fn conflicts<C: Command + ?Sized>(&self, cmd: &C) -> bool {
        if self.total == 0 {
            return false;
        }
        let cid = cmd.cid();
        if cid.0 as usize >= self.by_cid.len() {
            return true;
        }
        for (j, &count) in self.by_cid.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let other = CommandId(j as u16);
            match self.cdep.rule(cid, other) {
                Rule::Independent => {}
                Rule::Always => return true,
                Rule::OnKey(pairs) => {
                    for &(mine, theirs) in pairs {
                        let Some(key) = cmd.int_param(mine) else {
                            return true;
                        };
                        if self.by_key.get(&(other, theirs, key)).is_some_and(|&c| c > 0) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    pub fn insert<C: Command + ?Sized>(&mut self, cmd: &C) {
        let cid = cmd.cid();
        if let Some(c) = self.by_cid.get_mut(cid.0 as usize) {
            *c += 1;
        }
        for &p in self.cdep.keyed_params(cid) {
            if let Some(key) = cmd.int_param(p) {
                *self.by_key.entry((cid, p, key)).or_insert(0) += 1;
            }
        }
        self.total += 1;
    }

    pub fn remove<C: Command + ?Sized>(&mut self, cmd: &C) {
        let cid = cmd.cid();
        if let Some(c) = self.by_cid.get_mut(cid.0 as usize) {
            *c -= 1;
        }
        for &p in self.cdep.keyed_params(cid) {
            if let Some(key) = cmd.int_param(p) {
                let slot = (cid, p, key);
                if let Some(c) = self.by_key.get_mut(&slot) {
                    *c -= 1;
                    if *c == 0 {
                        self.by_key.remove(&slot);
                    }
                }
            }
        }
        self.total -= 1;
    }
}
