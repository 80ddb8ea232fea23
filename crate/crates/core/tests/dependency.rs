use std::collections::BTreeMap;

use proptest::prelude::*;
use psmr_core::dependency::{
    validate_cg, validate_cg_sequential, BroadcastRule, CDep, CommandSig, CommandToGroups, ConflictIndex,
    DepError, ParamDesc, PartitionRule,
};
use psmr_core::kvstore::{kv_cdep, KvCommand, CMD_DELETE, CMD_INSERT, CMD_READ, CMD_UPDATE};
use psmr_core::multicast::{GroupId, GroupSet};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn read(k: i64) -> KvCommand {
    KvCommand::Read { k }
}
fn update(k: i64) -> KvCommand {
    KvCommand::Update { k, v: 1 }
}
fn insert(k: i64) -> KvCommand {
    KvCommand::Insert { k, v: 1 }
}
fn delete(k: i64) -> KvCommand {
    KvCommand::Delete { k }
}

#[test]
fn dependence_examples() {
    let c = kv_cdep();
    assert!(c.is_dependent(&read(5), &update(5)).unwrap());
    assert!(!c.is_dependent(&read(5), &read(9)).unwrap());
    assert!(c.is_dependent(&insert(5), &read(9)).unwrap());
    assert!(c.is_dependent(&update(3), &read(3)).unwrap());
    assert!(!c.is_dependent(&update(3), &update(9)).unwrap());
    assert!(!c.is_dependent(&read(3), &read(3)).unwrap());
    assert!(c.is_dependent(&delete(1), &delete(2)).unwrap());
}

#[test]
fn dependence_is_symmetric() {
    let c = kv_cdep();
    let cmds = [read(1), read(2), update(1), update(2), insert(1), delete(2)];
    for a in &cmds {
        for b in &cmds {
            assert_eq!(c.is_dependent(a, b).unwrap(), c.is_dependent(b, a).unwrap(), "{a:?} {b:?}");
        }
    }
}

struct Raw(u16, i64);
impl psmr_core::dependency::Command for Raw {
    fn cid(&self) -> psmr_core::dependency::CommandId {
        psmr_core::dependency::CommandId(self.0)
    }
    fn int_param(&self, i: usize) -> Option<i64> {
        (i == 0).then_some(self.1)
    }
}

#[test]
fn unknown_command_is_a_schema_error() {
    let c = kv_cdep();
    assert!(matches!(c.is_dependent(&Raw(9, 0), &read(1)), Err(DepError::UnknownCommand(_))));
}

#[test]
fn declaration_errors() {
    let sig = || vec![CommandSig::new("a", vec![ParamDesc::int("x")], vec![])];
    assert!(matches!(
        CDep::builder(sig()).always("a", "b").build(),
        Err(DepError::UnknownName(n)) if n == "b"
    ));
    assert!(matches!(
        CDep::builder(sig()).on_key("a", "a", "y", "x").build(),
        Err(DepError::UnknownField { .. })
    ));
    let bytes_key = vec![CommandSig::new("a", vec![ParamDesc::bytes("x")], vec![])];
    assert!(matches!(
        CDep::builder(bytes_key).on_key("a", "a", "x", "x").build(),
        Err(DepError::Format(_))
    ));
}

#[test]
fn declaration_file_round_trips() {
    let c = kv_cdep();
    let text = c.to_toml();
    let back = CDep::from_toml(&text).unwrap();
    assert_eq!(back, c);
    assert!(text.contains("[[conditional]]"));
}

#[test]
fn hand_written_declaration_parses() {
    let text = r#"
        [[command]]
        name = "get_state"
        input = []

        [[command]]
        name = "set_state"
        input = [{ name = "v", type = "bytes" }]

        [[unconditional]]
        pair = ["set_state", "*"]
    "#;
    let c = CDep::from_toml(text).unwrap();
    let get = c.lookup("get_state").unwrap();
    let set = c.lookup("set_state").unwrap();
    assert!(!c.depends_on_all(get));
    assert!(c.depends_on_all(set));
    assert!(CDep::from_toml("[[command]]\nname = 3").is_err());
}

#[test]
fn partition_rule_examples() {
    let c = kv_cdep();
    let p4 = PartitionRule::new(&c, 4, "k").unwrap();
    let p8 = PartitionRule::new(&c, 8, "k").unwrap();
    let mut r = rng();
    assert_eq!(p4.groups(&read(10), &mut r).unwrap(), GroupSet::singleton(GroupId::Index(3)));
    assert_eq!(p8.groups(&update(0), &mut r).unwrap(), GroupSet::singleton(GroupId::Index(1)));
    assert_eq!(p4.groups(&insert(7), &mut r).unwrap(), GroupSet::numbered(4));
    assert_eq!(p4.groups(&delete(7), &mut r).unwrap(), GroupSet::numbered(4));
    assert_eq!(p4.group_of(-1), GroupId::Index(4));
    assert!(CommandToGroups::<KvCommand>::is_deterministic(&p4));
}

#[test]
fn partition_rule_spreads_keys_evenly() {
    let c = kv_cdep();
    for k in [1usize, 3, 4, 8] {
        let p = PartitionRule::new(&c, k, "k").unwrap();
        let mut counts: BTreeMap<GroupId, usize> = BTreeMap::new();
        for x in 0..(k * 10) as i64 {
            let g = p.groups(&read(x), &mut rng()).unwrap();
            *counts.entry(g.iter().next().unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), k);
        assert!(counts.values().all(|&n| n == 10), "k={k}: {counts:?}");
    }
}

#[test]
fn partition_rule_rejects_unkeyed_declarations() {
    let sigs = vec![
        CommandSig::new("a", vec![ParamDesc::int("x"), ParamDesc::int("y")], vec![]),
        CommandSig::new("b", vec![ParamDesc::int("x")], vec![]),
    ];
    let keyed_on_y = CDep::builder(sigs.clone()).on_key("a", "b", "y", "x").build().unwrap();
    assert!(matches!(PartitionRule::new(&keyed_on_y, 4, "x"), Err(DepError::Config(_))));
    let pairwise = CDep::builder(sigs).always("a", "b").build().unwrap();
    assert!(matches!(PartitionRule::new(&pairwise, 4, "x"), Err(DepError::Config(_))));
    assert!(PartitionRule::new(&kv_cdep(), 0, "k").is_err());
}

#[test]
fn broadcast_rule_examples() {
    let reads = [CMD_READ];
    let writes = [CMD_INSERT, CMD_DELETE, CMD_UPDATE];
    let b4 = BroadcastRule::new(4, reads, writes).unwrap();
    let mut r = rng();
    for x in 0..200 {
        let g = b4.groups(&read(x), &mut r).unwrap();
        assert!(g.is_singleton());
        let j = g.min_index().unwrap();
        assert!((1..=4).contains(&j));
    }
    assert_eq!(b4.groups(&update(1), &mut r).unwrap(), GroupSet::numbered(4));
    let b1 = BroadcastRule::new(1, reads, writes).unwrap();
    assert_eq!(b1.groups(&read(3), &mut r).unwrap(), GroupSet::singleton(GroupId::Index(1)));

    let partial = BroadcastRule::new(4, reads, [CMD_UPDATE]).unwrap();
    assert!(matches!(partial.groups(&insert(1), &mut r), Err(DepError::Config(_))));
    assert!(BroadcastRule::new(4, [CMD_READ], [CMD_READ]).is_err());
}

#[test]
fn broadcast_rule_reads_cover_every_group() {
    let b = BroadcastRule::from_cdep(&kv_cdep(), 4).unwrap();
    let mut r = rng();
    let mut seen = GroupSet::empty();
    for x in 0..100 {
        seen = GroupSet::from_bits(seen.bits() | b.groups(&read(x), &mut r).unwrap().bits());
    }
    assert_eq!(seen, GroupSet::numbered(4));
    // Same seed, same choices.
    let a: Vec<_> = (0..20).map(|x| b.groups(&read(x), &mut rng()).unwrap()).collect();
    let c: Vec<_> = (0..20).map(|x| b.groups(&read(x), &mut rng()).unwrap()).collect();
    assert_eq!(a, c);
}

fn kv_sample(keys: i64) -> Vec<KvCommand> {
    (0..keys).flat_map(|x| [read(x), update(x), insert(x), delete(x)]).collect()
}

/// Brute-force oracle: dependent pairs with disjoint destination sets.
fn oracle_violations<G: CommandToGroups<KvCommand>>(
    cdep: &CDep,
    cg: &G,
    sample: &[KvCommand],
    rng: &mut dyn RngCore,
) -> Vec<(usize, usize)> {
    let groups: Vec<GroupSet> = sample.iter().map(|c| cg.groups(c, rng).unwrap()).collect();
    let mut out = Vec::new();
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            if cdep.is_dependent(&sample[i], &sample[j]).unwrap() && !groups[i].intersects(groups[j]) {
                out.push((i, j));
            }
        }
    }
    out
}

#[test]
fn both_rules_are_safe_over_keys_0_to_99() {
    let c = kv_cdep();
    let sample = kv_sample(100);
    let p = PartitionRule::new(&c, 4, "k").unwrap();
    let report = validate_cg(&c, &p, &sample, &mut rng());
    assert!(report.is_safe(), "{:?}", &report.violations[..report.violations.len().min(5)]);
    assert_eq!(report.pairs_checked, (400 * 399 / 2) as u64);
    assert!(report.dependent_pairs > 0);

    let b = BroadcastRule::from_cdep(&c, 4).unwrap();
    assert!(validate_cg(&c, &b, &sample, &mut rng()).is_safe());
}

/// Updates always to g_1, reads by partition: unsafe exactly where the
/// read lands elsewhere.
struct BrokenRule(PartitionRule);

impl CommandToGroups<KvCommand> for BrokenRule {
    fn groups(&self, cmd: &KvCommand, rng: &mut dyn RngCore) -> Result<GroupSet, DepError> {
        match cmd {
            KvCommand::Update { .. } => Ok(GroupSet::singleton(GroupId::Index(1))),
            _ => self.0.groups(cmd, rng),
        }
    }
    fn multiprogramming(&self) -> usize {
        CommandToGroups::<KvCommand>::multiprogramming(&self.0)
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

#[test]
fn broken_rule_violations_match_oracle() {
    let c = kv_cdep();
    let k = 4;
    let broken = BrokenRule(PartitionRule::new(&c, k, "k").unwrap());
    let sample: Vec<KvCommand> = (0..100).flat_map(|x| [update(x), read(x)]).collect();
    let report = validate_cg(&c, &broken, &sample, &mut rng());
    let oracle = oracle_violations(&c, &broken, &sample, &mut rng());
    assert_eq!(report.violations, oracle);

    let mut bad_keys: Vec<i64> = report.violations.iter().map(|&(i, _)| sample[i].key()).collect();
    bad_keys.dedup();
    let expected: Vec<i64> = (0..100).filter(|x| (x % k as i64) + 1 != 1).collect();
    assert_eq!(bad_keys, expected);
}

#[test]
fn empty_sample_gives_empty_report() {
    let c = kv_cdep();
    let p = PartitionRule::new(&c, 4, "k").unwrap();
    let report = validate_cg(&c, &p, &[] as &[KvCommand], &mut rng());
    assert!(report.is_safe());
    assert_eq!(report.pairs_checked, 0);
    assert_eq!(report.dependent_pairs, 0);
}

#[test]
fn unmappable_commands_are_reported() {
    let c = kv_cdep();
    let p = PartitionRule::new(&c, 4, "k").unwrap();
    let r = validate_cg(&c, &p, &[Raw(9, 1), Raw(2, 1)], &mut rng());
    assert_eq!(r.errors.len(), 1);
    assert_eq!(r.pairs_checked, 0);
}

#[test]
fn conflict_index_tracks_in_flight_commands() {
    let mut idx = ConflictIndex::new(Arc::new(kv_cdep()));
    assert!(!idx.conflicts(&insert(1)));
    idx.insert(&read(5));
    assert!(idx.conflicts(&update(5)));
    assert!(!idx.conflicts(&update(6)));
    assert!(!idx.conflicts(&read(5)));
    assert!(idx.conflicts(&insert(9)));
    idx.insert(&read(5));
    idx.remove(&read(5));
    assert!(idx.conflicts(&update(5)));
    idx.remove(&read(5));
    assert!(idx.is_empty());
    assert!(!idx.conflicts(&update(5)));
    idx.insert(&delete(3));
    assert!(idx.conflicts(&read(100)));
}

fn arb_cmd() -> impl Strategy<Value = KvCommand> {
    (0..4u8, -20i64..20).prop_map(|(t, k)| match t {
        0 => read(k),
        1 => update(k),
        2 => insert(k),
        _ => delete(k),
    })
}

proptest! {
    #[test]
    fn partition_rule_is_safe_on_random_samples(
        cmds in proptest::collection::vec(arb_cmd(), 0..60),
        k in 1usize..9,
    ) {
        let c = kv_cdep();
        let p = PartitionRule::new(&c, k, "k").unwrap();
        prop_assert!(validate_cg(&c, &p, &cmds, &mut rng()).is_safe());
    }

    #[test]
    fn parallel_and_sequential_validation_agree(
        cmds in proptest::collection::vec(arb_cmd(), 0..60),
    ) {
        let c = kv_cdep();
        let broken = BrokenRule(PartitionRule::new(&c, 3, "k").unwrap());
        prop_assert_eq!(
            validate_cg(&c, &broken, &cmds, &mut rng()),
            validate_cg_sequential(&c, &broken, &cmds, &mut rng())
        );
    }

    #[test]
    fn conflict_index_matches_pairwise_check(
        in_flight in proptest::collection::vec(arb_cmd(), 0..12),
        probe in arb_cmd(),
    ) {
        let c = Arc::new(kv_cdep());
        let mut idx = ConflictIndex::new(c.clone());
        for x in &in_flight {
            idx.insert(x);
        }
        let expected = in_flight.iter().any(|x| c.is_dependent(&probe, x).unwrap());
        prop_assert_eq!(idx.conflicts(&probe), expected);
    }
}
