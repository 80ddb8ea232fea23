use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::StateDigest;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeterminismReport {
    pub replicas: usize,
    /// Replica indices whose digest differs from replica 0's.
    pub digest_mismatches: Vec<usize>,
    /// Requests answered differently by two replicas.
    pub output_mismatches: Vec<(u32, u64)>,
    /// `(replica, client_id, client_seq)`: a request some replica answered
    /// and this one did not.
    pub missing: Vec<(usize, u32, u64)>,
}

impl DeterminismReport {
    pub fn is_consistent(&self) -> bool {
        self.digest_mismatches.is_empty()
            && self.output_mismatches.is_empty()
            && self.missing.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_consistent() {
            0
        } else {
            1
        }
    }
}

/// Compares final state digests and per-request outputs across replicas.
/// `responses[r]` lists `(client_id, client_seq, output)` produced by
/// replica `r`.
pub fn check_determinism(
    digests: &[StateDigest],
    responses: &[Vec<(u32, u64, Bytes)>],
) -> DeterminismReport {
    let mut report = DeterminismReport {
        replicas: digests.len().max(responses.len()),
        ..Default::default()
    };
    if let Some(first) = digests.first() {
        report.digest_mismatches = (1..digests.len()).filter(|&r| digests[r] != *first).collect();
    }
    let per_replica: Vec<BTreeMap<(u32, u64), &Bytes>> = responses
        .iter()
        .map(|rs| rs.iter().map(|(c, s, o)| ((*c, *s), o)).collect())
        .collect();
    let all: BTreeSet<(u32, u64)> = per_replica.iter().flat_map(|m| m.keys().copied()).collect();
    for id in all {
        let mut first: Option<&Bytes> = None;
        let mut differs = false;
        for (r, m) in per_replica.iter().enumerate() {
            match m.get(&id) {
                None => report.missing.push((r, id.0, id.1)),
                Some(o) => match first {
                    None => first = Some(o),
                    Some(f) if f != *o => differs = true,
                    Some(_) => {}
                },
            }
        }
        if differs {
            report.output_mismatches.push(id);
        }
    }
    report
}
