use std::sync::atomic::{AtomicU64, Ordering};

pub type Key = i64;
pub type Value = u64;

pub const DEFAULT_FANOUT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, thiserror::Error)]
pub enum KvError {
    #[error("key exists")]
    KeyExists,
    #[error("key missing")]
    KeyMissing,
    #[error("capacity exhausted")]
    Capacity,
}

type NodeId = usize;

#[derive(Debug)]
enum Node {
    Internal {
        /// `keys[i]` separates `children[i]` (all keys `< keys[i]`) from
        /// `children[i + 1]` (all keys `>= keys[i]`).
        keys: Vec<Key>,
        children: Vec<NodeId>,
    },
    Leaf {
        keys: Vec<Key>,
        // Atomic so that updates on distinct keys can run under a shared
        // borrow; structure changes need `&mut`.
        vals: Vec<AtomicU64>,
        next: Option<NodeId>,
    },
    Free,
}

impl Node {
    fn empty_leaf() -> Self {
        Node::Leaf {
            keys: Vec::new(),
            vals: Vec::new(),
            next: None,
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    /// Entries for a leaf, children for an internal node.
    fn occupancy(&self) -> usize {
        match self {
            Node::Internal { children, .. } => children.len(),
            Node::Leaf { keys, .. } => keys.len(),
            Node::Free => 0,
        }
    }
}

/// In-memory B+-tree over 8-byte keys and values.
///
/// `fanout` bounds both the entries per leaf and the children per internal
/// node. Non-root nodes hold at least `fanout / 2` entries (leaves) or
/// `ceil(fanout / 2)` children (internal nodes).
#[derive(Debug)]
pub struct BPlusTree {
    nodes: Vec<Node>,
    free: Vec<NodeId>,
    root: NodeId,
    fanout: usize,
    len: usize,
    capacity: Option<usize>,
}

impl Default for BPlusTree {
    fn default() -> Self {
        Self::new(DEFAULT_FANOUT)
    }
}

impl BPlusTree {
    /// Panics if `fanout < 3`.
    pub fn new(fanout: usize) -> Self {
        assert!(fanout >= 3, "fanout must be at least 3");
        Self {
            nodes: vec![Node::empty_leaf()],
            free: Vec::new(),
            root: 0,
            fanout,
            len: 0,
            capacity: None,
        }
    }

    /// Inserts beyond `capacity` entries fail with [`KvError::Capacity`].
    pub fn with_capacity_limit(mut self, capacity: usize) -> Self {
        self.capacity = Some(capacity);
        self
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn min_leaf(&self) -> usize {
        self.fanout / 2
    }

    fn min_children(&self) -> usize {
        self.fanout.div_ceil(2)
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn release(&mut self, id: NodeId) {
        self.nodes[id] = Node::Free;
        self.free.push(id);
    }

    fn take(&mut self, id: NodeId) -> Node {
        std::mem::replace(&mut self.nodes[id], Node::Free)
    }

    fn find_leaf(&self, key: Key) -> NodeId {
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                Node::Internal { keys, children } => {
                    id = children[keys.partition_point(|s| *s <= key)];
                }
                _ => return id,
            }
        }
    }

    fn slot(&self, key: Key) -> Option<&AtomicU64> {
        match &self.nodes[self.find_leaf(key)] {
            Node::Leaf { keys, vals, .. } => keys.binary_search(&key).ok().map(|i| &vals[i]),
            _ => unreachable!("search ends at a leaf"),
        }
    }

    pub fn get(&self, key: Key) -> Option<Value> {
        self.slot(key).map(|v| v.load(Ordering::Relaxed))
    }

    pub fn contains(&self, key: Key) -> bool {
        self.slot(key).is_some()
    }

    /// Replaces the value of an existing key. Needs only a shared borrow:
    /// callers must not update the same key concurrently.
    pub fn update(&self, key: Key, value: Value) -> Result<(), KvError> {
        let slot = self.slot(key).ok_or(KvError::KeyMissing)?;
        slot.store(value, Ordering::Relaxed);
        Ok(())
    }

    pub fn insert(&mut self, key: Key, value: Value) -> Result<(), KvError> {
        if self.capacity.is_some_and(|c| self.len >= c) && !self.contains(key) {
            return Err(KvError::Capacity);
        }
        if let Some((sep, right)) = self.insert_at(self.root, key, value)? {
            let old = self.root;
            self.root = self.alloc(Node::Internal {
                keys: vec![sep],
                children: vec![old, right],
            });
        }
        self.len += 1;
        Ok(())
    }

    fn insert_at(
        &mut self,
        id: NodeId,
        key: Key,
        value: Value,
    ) -> Result<Option<(Key, NodeId)>, KvError> {
        let fanout = self.fanout;
        match &mut self.nodes[id] {
            Node::Leaf { keys, vals, next } => {
                let pos = match keys.binary_search(&key) {
                    Ok(_) => return Err(KvError::KeyExists),
                    Err(p) => p,
                };
                keys.insert(pos, key);
                vals.insert(pos, AtomicU64::new(value));
                if keys.len() <= fanout {
                    return Ok(None);
                }
                let mid = keys.len() / 2;
                let right = Node::Leaf {
                    keys: keys.split_off(mid),
                    vals: vals.split_off(mid),
                    next: *next,
                };
                let sep = match &right {
                    Node::Leaf { keys, .. } => keys[0],
                    _ => unreachable!(),
                };
                let rid = self.alloc(right);
                if let Node::Leaf { next, .. } = &mut self.nodes[id] {
                    *next = Some(rid);
                }
                Ok(Some((sep, rid)))
            }
            Node::Internal { keys, children } => {
                let idx = keys.partition_point(|s| *s <= key);
                let child = children[idx];
                let Some((sep, new_child)) = self.insert_at(child, key, value)? else {
                    return Ok(None);
                };
                let Node::Internal { keys, children } = &mut self.nodes[id] else {
                    unreachable!()
                };
                keys.insert(idx, sep);
                children.insert(idx + 1, new_child);
                if children.len() <= fanout {
                    return Ok(None);
                }
                let m = children.len().div_ceil(2);
                let right_children = children.split_off(m);
                let right_keys = keys.split_off(m);
                let promoted = keys.pop().expect("left half keeps m - 1 keys plus one");
                let rid = self.alloc(Node::Internal {
                    keys: right_keys,
                    children: right_children,
                });
                Ok(Some((promoted, rid)))
            }
            Node::Free => unreachable!("live tree reaches a freed node"),
        }
    }

    pub fn delete(&mut self, key: Key) -> Result<Value, KvError> {
        let (value, _) = self.delete_at(self.root, key)?;
        if let Node::Internal { children, .. } = &self.nodes[self.root] {
            if children.len() == 1 {
                let only = children[0];
                let old = self.root;
                self.root = only;
                self.release(old);
            }
        }
        self.len -= 1;
        Ok(value)
    }

    /// Returns the removed value and whether `id` is now under-full.
    fn delete_at(&mut self, id: NodeId, key: Key) -> Result<(Value, bool), KvError> {
        let min_leaf = self.min_leaf();
        let min_children = self.min_children();
        match &mut self.nodes[id] {
            Node::Leaf { keys, vals, .. } => {
                let pos = keys.binary_search(&key).map_err(|_| KvError::KeyMissing)?;
                keys.remove(pos);
                let v = vals.remove(pos).into_inner();
                Ok((v, keys.len() < min_leaf))
            }
            Node::Internal { keys, children } => {
                let idx = keys.partition_point(|s| *s <= key);
                let child = children[idx];
                let (v, underflow) = self.delete_at(child, key)?;
                if underflow {
                    self.rebalance(id, idx);
                }
                Ok((v, self.nodes[id].occupancy() < min_children))
            }
            Node::Free => unreachable!("live tree reaches a freed node"),
        }
    }

    /// Restores occupancy of `parent.children[idx]` by borrowing from or
    /// merging with a sibling.
    fn rebalance(&mut self, parent: NodeId, idx: usize) {
        let Node::Internal { keys: pkeys, children } = self.take(parent) else {
            unreachable!()
        };
        let mut pkeys = pkeys;
        let mut children = children;
        let leaf = self.nodes[children[idx]].is_leaf();
        let min = if leaf { self.min_leaf() } else { self.min_children() };

        let left = idx.checked_sub(1).map(|l| children[l]);
        let right = children.get(idx + 1).copied();
        let cid = children[idx];

        if let Some(l) = left.filter(|&l| self.nodes[l].occupancy() > min) {
            let mut ln = self.take(l);
            let mut cn = self.take(cid);
            match (&mut ln, &mut cn) {
                (
                    Node::Leaf { keys: lk, vals: lv, .. },
                    Node::Leaf { keys: ck, vals: cv, .. },
                ) => {
                    ck.insert(0, lk.pop().unwrap());
                    cv.insert(0, lv.pop().unwrap());
                    pkeys[idx - 1] = ck[0];
                }
                (
                    Node::Internal { keys: lk, children: lc },
                    Node::Internal { keys: ck, children: cc },
                ) => {
                    ck.insert(0, pkeys[idx - 1]);
                    cc.insert(0, lc.pop().unwrap());
                    pkeys[idx - 1] = lk.pop().unwrap();
                }
                _ => unreachable!("siblings share a level"),
            }
            self.nodes[l] = ln;
            self.nodes[cid] = cn;
        } else if let Some(r) = right.filter(|&r| self.nodes[r].occupancy() > min) {
            let mut rn = self.take(r);
            let mut cn = self.take(cid);
            match (&mut cn, &mut rn) {
                (
                    Node::Leaf { keys: ck, vals: cv, .. },
                    Node::Leaf { keys: rk, vals: rv, .. },
                ) => {
                    ck.push(rk.remove(0));
                    cv.push(rv.remove(0));
                    pkeys[idx] = rk[0];
                }
                (
                    Node::Internal { keys: ck, children: cc },
                    Node::Internal { keys: rk, children: rc },
                ) => {
                    ck.push(pkeys[idx]);
                    cc.push(rc.remove(0));
                    pkeys[idx] = rk.remove(0);
                }
                _ => unreachable!("siblings share a level"),
            }
            self.nodes[r] = rn;
            self.nodes[cid] = cn;
        } else {
            // Merge the right one of the pair into the left one.
            let (li, ri) = match left {
                Some(_) => (idx - 1, idx),
                None => (idx, idx + 1),
            };
            let (l, r) = (children[li], children[ri]);
            let rn = self.take(r);
            let sep = pkeys.remove(li);
            children.remove(ri);
            match (&mut self.nodes[l], rn) {
                (
                    Node::Leaf { keys: lk, vals: lv, next },
                    Node::Leaf { keys: rk, vals: rv, next: rnext },
                ) => {
                    lk.extend(rk);
                    lv.extend(rv);
                    *next = rnext;
                }
                (
                    Node::Internal { keys: lk, children: lc },
                    Node::Internal { keys: rk, children: rc },
                ) => {
                    lk.push(sep);
                    lk.extend(rk);
                    lc.extend(rc);
                }
                _ => unreachable!("siblings share a level"),
            }
            self.release(r);
        }
        self.nodes[parent] = Node::Internal {
            keys: pkeys,
            children,
        };
    }

    fn first_leaf(&self) -> NodeId {
        let mut id = self.root;
        while let Node::Internal { children, .. } = &self.nodes[id] {
            id = children[0];
        }
        id
    }

    /// Entries in ascending key order, following the leaf chain.
    pub fn iter(&self) -> Iter<'_> {
        Iter {
            tree: self,
            leaf: Some(self.first_leaf()),
            pos: 0,
        }
    }

    /// Depth of the tree; a lone leaf has height 1.
    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut id = self.root;
        while let Node::Internal { children, .. } = &self.nodes[id] {
            id = children[0];
            h += 1;
        }
        h
    }

    /// Verifies ordering, separator bounds, occupancy, uniform depth, the
    /// leaf chain and the entry count.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut leaves = Vec::new();
        let count = self.check_node(self.root, None, None, true, 1, &mut None, &mut leaves)?;
        if count != self.len {
            return Err(format!("len {} but {} entries reachable", self.len, count));
        }
        let mut chain = Vec::new();
        let mut cur = Some(self.first_leaf());
        while let Some(id) = cur {
            chain.push(id);
            cur = match &self.nodes[id] {
                Node::Leaf { next, .. } => *next,
                _ => return Err(format!("leaf chain reaches non-leaf {id}")),
            };
            if chain.len() > self.nodes.len() {
                return Err("leaf chain has a cycle".into());
            }
        }
        if chain != leaves {
            return Err("leaf chain disagrees with in-order leaves".into());
        }
        let mut prev = None;
        for (k, _) in self.iter() {
            if prev.is_some_and(|p| p >= k) {
                return Err(format!("leaf chain out of order at {k}"));
            }
            prev = Some(k);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn check_node(
        &self,
        id: NodeId,
        lo: Option<Key>,
        hi: Option<Key>,
        is_root: bool,
        depth: usize,
        leaf_depth: &mut Option<usize>,
        leaves: &mut Vec<NodeId>,
    ) -> Result<usize, String> {
        let in_bounds = |k: Key| lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k < h);
        match &self.nodes[id] {
            Node::Free => Err(format!("node {id} is free but reachable")),
            Node::Leaf { keys, vals, .. } => {
                if keys.len() != vals.len() {
                    return Err(format!("leaf {id} has mismatched keys and values"));
                }
                if keys.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(format!("leaf {id} keys unsorted"));
                }
                if let Some(k) = keys.iter().find(|&&k| !in_bounds(k)) {
                    return Err(format!("leaf {id} key {k} outside separator bounds"));
                }
                if keys.len() > self.fanout || (!is_root && keys.len() < self.min_leaf()) {
                    return Err(format!("leaf {id} holds {} entries", keys.len()));
                }
                match leaf_depth {
                    Some(d) if *d != depth => return Err(format!("leaf {id} at depth {depth}")),
                    _ => *leaf_depth = Some(depth),
                }
                leaves.push(id);
                Ok(keys.len())
            }
            Node::Internal { keys, children } => {
                if children.len() != keys.len() + 1 {
                    return Err(format!("internal {id} has {} keys", keys.len()));
                }
                if keys.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(format!("internal {id} separators unsorted"));
                }
                let min = if is_root { 2 } else { self.min_children() };
                if children.len() > self.fanout || children.len() < min {
                    return Err(format!("internal {id} has {} children", children.len()));
                }
                let mut total = 0;
                for (i, &c) in children.iter().enumerate() {
                    let clo = if i == 0 { lo } else { Some(keys[i - 1]) };
                    let chi = if i == keys.len() { hi } else { Some(keys[i]) };
                    total += self.check_node(c, clo, chi, false, depth + 1, leaf_depth, leaves)?;
                }
                Ok(total)
            }
        }
    }
}

pub struct Iter<'a> {
    tree: &'a BPlusTree,
    leaf: Option<NodeId>,
    pos: usize,
}

impl Iterator for Iter<'_> {
    type Item = (Key, Value);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let id = self.leaf?;
            let Node::Leaf { keys, vals, next } = &self.tree.nodes[id] else {
                return None;
            };
            if self.pos < keys.len() {
                let item = (keys[self.pos], vals[self.pos].load(Ordering::Relaxed));
                self.pos += 1;
                return Some(item);
            }
            self.leaf = *next;
            self.pos = 0;
        }
    }
}

impl FromIterator<(Key, Value)> for BPlusTree {
    fn from_iter<I: IntoIterator<Item = (Key, Value)>>(iter: I) -> Self {
        let mut t = BPlusTree::default();
        for (k, v) in iter {
            let _ = t.insert(k, v);
        }
        t
    }
}
