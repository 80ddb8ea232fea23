use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Largest number of numbered groups a fabric supports. One bit of the
/// 64-bit [`GroupSet`] is reserved for [`GroupId::All`].
pub const MAX_GROUPS: usize = 63;

const ALL_BIT: u64 = 1 << 63;

/// A multicast group: one of the numbered groups `g_1..g_k`, or the
/// distinguished group every worker of every replica subscribes to.
///
/// Ordering places every numbered group before `All`, which is the tie-break
/// the deterministic merge relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupId {
    Index(u8),
    All,
}

impl GroupId {
    pub fn index(self) -> Option<usize> {
        match self {
            GroupId::Index(i) => Some(i as usize),
            GroupId::All => None,
        }
    }

    fn bit(self) -> u64 {
        match self {
            GroupId::Index(i) => {
                debug_assert!((1..=MAX_GROUPS as u8).contains(&i));
                1 << (i - 1)
            }
            GroupId::All => ALL_BIT,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Index(i) => write!(f, "g{i}"),
            GroupId::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid group id {0:?}")]
pub struct ParseGroupError(String);

impl FromStr for GroupId {
    type Err = ParseGroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("all") {
            return Ok(GroupId::All);
        }
        let digits = t.strip_prefix('g').unwrap_or(t);
        match digits.parse::<u8>() {
            Ok(i) if (1..=MAX_GROUPS as u8).contains(&i) => Ok(GroupId::Index(i)),
            _ => Err(ParseGroupError(s.to_string())),
        }
    }
}

/// Ordered set of destination groups (the `γ` a client proxy computes).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSet(u64);

impl GroupSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    pub fn singleton(g: GroupId) -> Self {
        Self(g.bit())
    }

    /// `{g_1, ..., g_k}`.
    pub fn numbered(k: usize) -> Self {
        assert!(k <= MAX_GROUPS, "at most {MAX_GROUPS} groups");
        if k == 0 {
            Self(0)
        } else {
            Self(u64::MAX >> (64 - k))
        }
    }

    pub fn only_all() -> Self {
        Self(ALL_BIT)
    }

    pub fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, g: GroupId) {
        self.0 |= g.bit();
    }

    pub fn with(mut self, g: GroupId) -> Self {
        self.insert(g);
        self
    }

    pub fn contains(self, g: GroupId) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_singleton(self) -> bool {
        self.0.count_ones() == 1
    }

    pub fn intersects(self, other: GroupSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn contains_all(self) -> bool {
        self.0 & ALL_BIT != 0
    }

    /// Smallest numbered group index in the set.
    pub fn min_index(self) -> Option<usize> {
        let numbered = self.0 & !ALL_BIT;
        (numbered != 0).then(|| numbered.trailing_zeros() as usize + 1)
    }

    /// Largest numbered group index in the set.
    pub fn max_index(self) -> Option<usize> {
        let numbered = self.0 & !ALL_BIT;
        (numbered != 0).then(|| 64 - numbered.leading_zeros() as usize)
    }

    /// Iterates members in ascending order, `All` last.
    pub fn iter(self) -> impl Iterator<Item = GroupId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let tz = bits.trailing_zeros();
            bits &= bits - 1;
            Some(if tz == 63 {
                GroupId::All
            } else {
                GroupId::Index(tz as u8 + 1)
            })
        })
    }

    /// Thread indices (1-based) that must take part in a command addressed
    /// to this set when a replica runs `k` workers. `All` stands for every
    /// worker.
    pub fn worker_indices(self, k: usize) -> GroupSet {
        if self.contains_all() {
            GroupSet::numbered(k)
        } else {
            GroupSet(self.0 & GroupSet::numbered(k).0)
        }
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        self.iter().filter_map(GroupId::index)
    }
}

impl FromIterator<GroupId> for GroupSet {
    fn from_iter<I: IntoIterator<Item = GroupId>>(iter: I) -> Self {
        let mut s = GroupSet::empty();
        for g in iter {
            s.insert(g);
        }
        s
    }
}

impl fmt::Debug for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|g| g.to_string())).finish()
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, g) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{g}")?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_orders_after_numbered_groups() {
        assert!(GroupId::Index(63) < GroupId::All);
        assert!(GroupId::Index(2) < GroupId::Index(3));
    }

    #[test]
    fn set_iterates_in_order_with_all_last() {
        let s: GroupSet = [GroupId::All, GroupId::Index(3), GroupId::Index(1)]
            .into_iter()
            .collect();
        let v: Vec<_> = s.iter().collect();
        assert_eq!(v, vec![GroupId::Index(1), GroupId::Index(3), GroupId::All]);
        assert_eq!(s.min_index(), Some(1));
        assert_eq!(s.max_index(), Some(3));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn numbered_covers_one_to_k() {
        let s = GroupSet::numbered(4);
        assert_eq!(s.indices().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(!s.contains_all());
        assert_eq!(GroupSet::numbered(63).len(), 63);
    }

    #[test]
    fn all_expands_to_every_worker() {
        assert_eq!(GroupSet::only_all().worker_indices(3), GroupSet::numbered(3));
        let s = GroupSet::singleton(GroupId::Index(2));
        assert_eq!(s.worker_indices(3), s);
    }

    #[test]
    fn parse_round_trip() {
        for g in [GroupId::Index(1), GroupId::Index(17), GroupId::All] {
            assert_eq!(g.to_string().parse::<GroupId>().unwrap(), g);
        }
        assert!("g0".parse::<GroupId>().is_err());
        assert!("g64".parse::<GroupId>().is_err());
    }
}
