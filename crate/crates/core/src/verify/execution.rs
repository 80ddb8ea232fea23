use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dependency::{CDep, Command};
use crate::replication::ExecRecord;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecViolation {
    /// Two dependent commands ran at the same time on one replica.
    Overlap { replica: u32, a: (u32, u64), b: (u32, u64) },
    /// Two replicas executed a dependent pair in opposite orders.
    Reordered { a: (u32, u64), b: (u32, u64), replicas: (u32, u32) },
}

/// Checks that dependent commands never overlap on a replica and run in
/// the same relative order everywhere. `commands` maps `(client_id,
/// client_seq)` to the command; records for unknown requests are ignored.
pub fn audit_execution<C: Command + Sync>(
    records: &[ExecRecord],
    commands: &HashMap<(u32, u64), C>,
    cdep: &CDep,
) -> Vec<ExecViolation> {
    let mut per_replica: BTreeMap<u32, Vec<&ExecRecord>> = BTreeMap::new();
    for r in records {
        if commands.contains_key(&(r.client_id, r.client_seq)) {
            per_replica.entry(r.replica).or_default().push(r);
        }
    }
    for recs in per_replica.values_mut() {
        recs.sort_by_key(|r| (r.t_start, r.t_end));
    }
    let dependent = |a: &ExecRecord, b: &ExecRecord| {
        let ca = &commands[&(a.client_id, a.client_seq)];
        let cb = &commands[&(b.client_id, b.client_seq)];
        cdep.is_dependent(ca, cb).unwrap_or(true)
    };
    let id = |r: &ExecRecord| (r.client_id, r.client_seq);

    let mut out = Vec::new();
    // Overlaps: sweep in start order, comparing only with records that
    // have not finished yet.
    for (&replica, recs) in &per_replica {
        for (i, a) in recs.iter().enumerate() {
            for b in recs[i + 1..].iter().take_while(|b| b.t_start < a.t_end) {
                if a.overlaps(b) && dependent(a, b) {
                    out.push(ExecViolation::Overlap {
                        replica,
                        a: id(a),
                        b: id(b),
                    });
                }
            }
        }
    }

    // Relative order of dependent pairs against the first replica. Only
    // pairs the two replicas ordered differently can violate it; a reverse
    // sweep over an ordered set enumerates exactly those inversions.
    let mut replicas = per_replica.iter();
    let Some((&r0, base)) = replicas.next() else {
        return out;
    };
    let others: Vec<(u32, &Vec<&ExecRecord>)> = replicas.map(|(r, recs)| (*r, recs)).collect();
    let reordered = |&(r, recs): &(u32, &Vec<&ExecRecord>)| -> Vec<ExecViolation> {
        let pos: HashMap<(u32, u64), usize> = recs.iter().enumerate().map(|(i, x)| (id(x), i)).collect();
        let mut later: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut found = Vec::new();
        for (i, a) in base.iter().enumerate().rev() {
            let Some(&pa) = pos.get(&id(a)) else { continue };
            for &(_, j) in later.range(..(pa, 0)) {
                let b = base[j];
                if dependent(a, b) {
                    found.push(ExecViolation::Reordered {
                        a: id(a),
                        b: id(b),
                        replicas: (r0, r),
                    });
                }
            }
            later.insert((pa, i));
        }
        found.reverse();
        found
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.extend(others.par_iter().flat_map_iter(reordered).collect::<Vec<_>>());
    }
    #[cfg(not(feature = "parallel"))]
    out.extend(others.iter().flat_map(reordered));
    out
}
