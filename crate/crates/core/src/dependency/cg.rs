use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::cdep::{CDep, Command, CommandId, Rule};
use super::DepError;
use crate::multicast::{GroupId, GroupSet, MAX_GROUPS};

/// Maps a command instance to the multicast groups it is addressed to.
/// Dependent commands must be given intersecting sets.
pub trait CommandToGroups<C: ?Sized>: Send + Sync {
    fn groups(&self, cmd: &C, rng: &mut dyn RngCore) -> Result<GroupSet, DepError>;

    /// Number of worker groups the rule spreads commands over.
    fn multiprogramming(&self) -> usize;

    /// True when [`groups`](Self::groups) ignores the generator.
    fn is_deterministic(&self) -> bool;
}

fn check_k(k: usize) -> Result<(), DepError> {
    if k == 0 || k > MAX_GROUPS {
        return Err(DepError::Config(format!("multiprogramming level {k} out of range")));
    }
    Ok(())
}

/// Read-type commands go to one random group, write-type commands to all
/// groups.
#[derive(Clone, Debug)]
pub struct BroadcastRule {
    k: usize,
    reads: BTreeSet<CommandId>,
    writes: BTreeSet<CommandId>,
}

impl BroadcastRule {
    pub fn new(
        k: usize,
        reads: impl IntoIterator<Item = CommandId>,
        writes: impl IntoIterator<Item = CommandId>,
    ) -> Result<Self, DepError> {
        check_k(k)?;
        let reads: BTreeSet<_> = reads.into_iter().collect();
        let writes: BTreeSet<_> = writes.into_iter().collect();
        if let Some(c) = reads.intersection(&writes).next() {
            return Err(DepError::Config(format!("command {c} is both read and write")));
        }
        Ok(Self { k, reads, writes })
    }

    /// Classifies commands from a C-Dep: a command is read-type when it is
    /// independent of itself whatever the parameters.
    pub fn from_cdep(cdep: &CDep, k: usize) -> Result<Self, DepError> {
        let (mut reads, mut writes) = (Vec::new(), Vec::new());
        for i in 0..cdep.len() {
            let c = CommandId(i as u16);
            if *cdep.rule(c, c) == Rule::Independent {
                reads.push(c);
            } else {
                writes.push(c);
            }
        }
        Self::new(k, reads, writes)
    }
}

impl<C: Command + ?Sized> CommandToGroups<C> for BroadcastRule {
    fn groups(&self, cmd: &C, rng: &mut dyn RngCore) -> Result<GroupSet, DepError> {
        let cid = cmd.cid();
        if self.reads.contains(&cid) {
            let j = rng.random_range(1..=self.k);
            Ok(GroupSet::singleton(GroupId::Index(j as u8)))
        } else if self.writes.contains(&cid) {
            Ok(GroupSet::numbered(self.k))
        } else {
            Err(DepError::Config(format!("command {cid} is neither read nor write type")))
        }
    }

    fn multiprogramming(&self) -> usize {
        self.k
    }

    fn is_deterministic(&self) -> bool {
        self.reads.is_empty()
    }
}

/// Commands keyed on `x` go to group `(x mod k) + 1`; commands that depend
/// on every other command go to all groups.
#[derive(Clone, Debug)]
pub struct PartitionRule {
    k: usize,
    to_all: Vec<bool>,
    key_index: Vec<Option<usize>>,
}

impl PartitionRule {
    /// `key_field` names the integer input every conditional dependency is
    /// keyed on.
    pub fn new(cdep: &CDep, k: usize, key_field: &str) -> Result<Self, DepError> {
        check_k(k)?;
        let n = cdep.len();
        let mut to_all = vec![false; n];
        let mut key_index = vec![None; n];
        for i in 0..n {
            let c = CommandId(i as u16);
            let sig = cdep.sig(c)?;
            key_index[i] = sig.input_index(key_field);
            to_all[i] = cdep.depends_on_all(c);
            for j in 0..n {
                let other = CommandId(j as u16);
                match cdep.rule(c, other) {
                    Rule::Independent => {}
                    Rule::OnKey(pairs) => {
                        let other_key = cdep.sig(other)?.input_index(key_field);
                        if pairs
                            .iter()
                            .any(|&(a, b)| Some(a) != key_index[i] || Some(b) != other_key)
                        {
                            return Err(DepError::Config(format!(
                                "dependency between {} and {} is not keyed on {key_field}",
                                sig.name,
                                cdep.sig(other)?.name
                            )));
                        }
                    }
                    // One side must reach every group for the pair to meet.
                    Rule::Always => {
                        if !cdep.depends_on_all(c) && !cdep.depends_on_all(other) {
                            return Err(DepError::Config(format!(
                                "unconditional dependency between {} and {} cannot be partitioned",
                                sig.name,
                                cdep.sig(other)?.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            k,
            to_all,
            key_index,
        })
    }

    /// `(x mod k) + 1`, with the modulus taken in the non-negative range.
    pub fn group_of(&self, x: i64) -> GroupId {
        GroupId::Index((x.rem_euclid(self.k as i64) + 1) as u8)
    }
}

impl<C: Command + ?Sized> CommandToGroups<C> for PartitionRule {
    fn groups(&self, cmd: &C, _rng: &mut dyn RngCore) -> Result<GroupSet, DepError> {
        let cid = cmd.cid();
        let i = cid.0 as usize;
        if i >= self.to_all.len() {
            return Err(DepError::UnknownCommand(cid));
        }
        if self.to_all[i] {
            return Ok(GroupSet::numbered(self.k));
        }
        let index = self.key_index[i].ok_or(DepError::MissingKey { cid, index: usize::MAX })?;
        let x = cmd
            .int_param(index)
            .ok_or(DepError::MissingKey { cid, index })?;
        Ok(GroupSet::singleton(self.group_of(x)))
    }

    fn multiprogramming(&self) -> usize {
        self.k
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

impl<C: ?Sized, T: CommandToGroups<C> + ?Sized> CommandToGroups<C> for Arc<T> {
    fn groups(&self, cmd: &C, rng: &mut dyn RngCore) -> Result<GroupSet, DepError> {
        (**self).groups(cmd, rng)
    }

    fn multiprogramming(&self) -> usize {
        (**self).multiprogramming()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Outcome of [`validate_cg`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CgReport {
    /// Number of unordered instance pairs examined.
    pub pairs_checked: u64,
    pub dependent_pairs: u64,
    /// Dependent pairs `(i, j)` (sample indices, `i < j`) whose group sets
    /// are disjoint.
    pub violations: Vec<(usize, usize)>,
    /// Sample indices the rule could not map, with the error.
    pub errors: Vec<(usize, String)>,
}

impl CgReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty() && self.errors.is_empty()
    }
}

/// Checks that every dependent pair in `sample` is assigned intersecting
/// group sets. Each instance is mapped once, in sample order, with `rng`.
pub fn validate_cg<C, G>(cdep: &CDep, cg: &G, sample: &[C], rng: &mut dyn RngCore) -> CgReport
where
    C: Command + Sync,
    G: CommandToGroups<C> + ?Sized,
{
    let mut report = CgReport::default();
    let mut mapped: Vec<Option<GroupSet>> = Vec::with_capacity(sample.len());
    for (i, c) in sample.iter().enumerate() {
        match cg.groups(c, rng) {
            Ok(g) => mapped.push(Some(g)),
            Err(e) => {
                report.errors.push((i, e.to_string()));
                mapped.push(None);
            }
        }
    }

    let row = |i: usize| -> (u64, u64, Vec<(usize, usize)>) {
        let (mut checked, mut dependent) = (0, 0);
        let mut bad = Vec::new();
        let Some(gi) = mapped[i] else {
            return (0, 0, bad);
        };
        for j in i + 1..sample.len() {
            let Some(gj) = mapped[j] else { continue };
            checked += 1;
            if cdep.is_dependent(&sample[i], &sample[j]).unwrap_or(true) {
                dependent += 1;
                if !gi.intersects(gj) {
                    bad.push((i, j));
                }
            }
        }
        (checked, dependent, bad)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<_> = {
        use rayon::prelude::*;
        (0..sample.len()).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<_> = (0..sample.len()).map(row).collect();

    for (checked, dependent, bad) in rows {
        report.pairs_checked += checked;
        report.dependent_pairs += dependent;
        report.violations.extend(bad);
    }
    report
}

/// Sequential variant of [`validate_cg`], regardless of features.
pub fn validate_cg_sequential<C, G>(
    cdep: &CDep,
    cg: &G,
    sample: &[C],
    rng: &mut dyn RngCore,
) -> CgReport
where
    C: Command,
    G: CommandToGroups<C> + ?Sized,
{
    let mut report = CgReport::default();
    let mut mapped = Vec::with_capacity(sample.len());
    for (i, c) in sample.iter().enumerate() {
        match cg.groups(c, rng) {
            Ok(g) => mapped.push(Some(g)),
            Err(e) => {
                report.errors.push((i, e.to_string()));
                mapped.push(None);
            }
        }
    }
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            let (Some(gi), Some(gj)) = (mapped[i], mapped[j]) else {
                continue;
            };
            report.pairs_checked += 1;
            if cdep.is_dependent(&sample[i], &sample[j]).unwrap_or(true) {
                report.dependent_pairs += 1;
                if !gi.intersects(gj) {
                    report.violations.push((i, j));
                }
            }
        }
    }
    report
}
