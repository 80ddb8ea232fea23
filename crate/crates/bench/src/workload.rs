//! Workload description and seeded per-client request streams.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use psmr_core::dependency::{CommandToGroups, DepError, PartitionRule};
use psmr_core::kvstore::{shared_kv_cdep, Key, KvCommand};
use psmr_core::multicast::{GroupId, GroupSet};
use psmr_core::replication::EngineKind;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid mix: {0}")]
    Mix(String),
    #[error("invalid workload: {0}")]
    Spec(String),
    #[error(transparent)]
    Dependency(#[from] DepError),
}

/// Fractions of each command type; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    #[serde(default)]
    pub read: f64,
    #[serde(default)]
    pub update: f64,
    #[serde(default)]
    pub insert: f64,
    #[serde(default)]
    pub delete: f64,
}

impl Mix {
    pub const READ_ONLY: Mix = Mix { read: 1.0, update: 0.0, insert: 0.0, delete: 0.0 };
    pub const DEPENDENT_ONLY: Mix = Mix { read: 0.0, update: 0.0, insert: 0.5, delete: 0.5 };

    /// Reads plus `pct`% structural commands, split evenly between inserts
    /// and deletes.
    pub fn with_dependent_pct(pct: f64) -> Result<Mix, WorkloadError> {
        if !(0.0..=100.0).contains(&pct) {
            return Err(WorkloadError::Mix(format!("dependent percentage {pct} outside 0..=100")));
        }
        let d = pct / 100.0;
        Ok(Mix { read: 1.0 - d, update: 0.0, insert: d / 2.0, delete: d / 2.0 })
    }

    /// Percentage of commands that conflict with every other command.
    pub fn dependent_pct(&self) -> f64 {
        (self.insert + self.delete) * 100.0
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let parts = [self.read, self.update, self.insert, self.delete];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(WorkloadError::Mix(format!("negative or non-finite fraction in {self}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(WorkloadError::Mix(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "read={},update={},insert={},delete={}",
            self.read, self.update, self.insert, self.delete
        )
    }
}

/// Parses `read=0.9,update=0.1`; omitted types get zero.
impl FromStr for Mix {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mix = Mix { read: 0.0, update: 0.0, insert: 0.0, delete: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| WorkloadError::Mix(format!("expected name=fraction, got {part:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| WorkloadError::Mix(format!("bad fraction in {part:?}")))?;
            let slot = match name.trim() {
                "read" => &mut mix.read,
                "update" => &mut mix.update,
                "insert" => &mut mix.insert,
                "delete" => &mut mix.delete,
                other => return Err(WorkloadError::Mix(format!("unknown command type {other:?}"))),
            };
            *slot = value;
        }
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyDist {
    Uniform,
    Zipf,
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyDist::Uniform => "uniform",
            KeyDist::Zipf => "zipf",
        })
    }
}

impl FromStr for KeyDist {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(KeyDist::Uniform),
            "zipf" | "zipfian" => Ok(KeyDist::Zipf),
            _ => Err(WorkloadError::Spec(format!("unknown key distribution {s:?}"))),
        }
    }
}

/// Which command-to-groups rule P-SMR clients use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CgKind {
    /// Key partitioning: reads and updates to one group, structural
    /// commands to all.
    Partition,
    /// Reads to a random group, everything else to all.
    Broadcast,
    /// Partitioning widened by a random number of extra groups; exercises
    /// barriers of every size.
    Widened,
}

impl FromStr for CgKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "partition" => Ok(CgKind::Partition),
            "broadcast" => Ok(CgKind::Broadcast),
            "widened" => Ok(CgKind::Widened),
            _ => Err(WorkloadError::Spec(format!("unknown C-G rule {s:?}"))),
        }
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub engine: EngineKind,
    pub threads: usize,
    pub replicas: usize,
    pub clients: usize,
    /// Outstanding requests per client.
    pub window: usize,
    /// Commands issued by each client.
    pub commands: usize,
    /// Keys `0..keys` are preloaded; commands draw keys from that range.
    pub keys: u64,
    pub dist: KeyDist,
    pub zipf_exponent: f64,
    pub mix: Mix,
    pub seed: u64,
    /// Synthetic CPU work per executed command, in loop iterations.
    pub work: u32,
    pub fanout: usize,
    pub cg: CgKind,
    /// Per-response wait before a run is declared stuck, in milliseconds.
    pub timeout_ms: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            engine: EngineKind::Psmr,
            threads: 4,
            replicas: 2,
            clients: 8,
            window: 50,
            commands: 10_000,
            keys: 100_000,
            dist: KeyDist::Uniform,
            zipf_exponent: 1.0,
            mix: Mix::READ_ONLY,
            seed: 1,
            work: 0,
            fanout: 64,
            cg: CgKind::Partition,
            timeout_ms: 10_000,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.mix.validate()?;
        let bad = |m: &str| Err(WorkloadError::Spec(m.to_string()));
        if self.keys == 0 {
            return bad("key space is empty");
        }
        if self.clients == 0 || self.window == 0 {
            return bad("clients and window must be positive");
        }
        if self.engine != EngineKind::Smr && self.threads == 0 {
            return bad("threads must be positive");
        }
        if self.fanout < 3 {
            return bad("fanout must be at least 3");
        }
        if self.dist == KeyDist::Zipf && (self.zipf_exponent.is_nan() || self.zipf_exponent <= 0.0) {
            return bad("zipf exponent must be positive");
        }
        Ok(())
    }

    pub fn total_commands(&self) -> usize {
        self.clients * self.commands
    }

    /// The C-G function P-SMR clients use, `None` for other engines.
    pub fn cg_function(&self) -> Result<Option<Arc<dyn CommandToGroups<KvCommand>>>, WorkloadError> {
        if !self.engine.uses_groups() {
            return Ok(None);
        }
        let cdep = shared_kv_cdep();
        let rule: Arc<dyn CommandToGroups<KvCommand>> = match self.cg {
            CgKind::Partition => Arc::new(PartitionRule::new(&cdep, self.threads, "k")?),
            CgKind::Broadcast => Arc::new(psmr_core::dependency::BroadcastRule::from_cdep(&cdep, self.threads)?),
            CgKind::Widened => Arc::new(WidenedRule {
                inner: PartitionRule::new(&cdep, self.threads, "k")?,
                k: self.threads,
            }),
        };
        Ok(Some(rule))
    }
}

/// Adds a uniformly random number of extra groups to the partitioning
/// rule's choice. Still safe: a superset of a safe destination set is safe.
struct WidenedRule {
    inner: PartitionRule,
    k: usize,
}

impl CommandToGroups<KvCommand> for WidenedRule {
    fn groups(&self, cmd: &KvCommand, rng: &mut dyn RngCore) -> Result<GroupSet, DepError> {
        let mut set = self.inner.groups(cmd, rng)?;
        if set.len() >= self.k {
            return Ok(set);
        }
        let extra = rng.random_range(0..self.k);
        for _ in 0..extra {
            set = set.with(GroupId::Index(rng.random_range(1..=self.k) as u8));
        }
        Ok(set)
    }

    fn multiprogramming(&self) -> usize {
        self.k
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Key sampler over `0..keys`. Zipf rank `r` maps to key `r - 1`.
pub enum KeySampler {
    Uniform(u64),
    Zipf(Zipf<f64>),
}

impl KeySampler {
    pub fn new(spec: &WorkloadSpec) -> Result<Self, WorkloadError> {
        Ok(match spec.dist {
            KeyDist::Uniform => KeySampler::Uniform(spec.keys),
            KeyDist::Zipf => KeySampler::Zipf(
                Zipf::new(spec.keys as f64, spec.zipf_exponent)
                    .map_err(|e| WorkloadError::Spec(format!("zipf: {e}")))?,
            ),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Key {
        match self {
            KeySampler::Uniform(n) => rng.random_range(0..*n) as Key,
            KeySampler::Zipf(z) => z.sample(rng) as Key - 1,
        }
    }
}

/// Independent RNG stream for client `c`.
pub fn client_rng(seed: u64, client: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(client as u64 + 1);
    rng
}

/// One replayable command stream per client.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Vec<KvCommand>>, WorkloadError> {
    spec.validate()?;
    let sampler = KeySampler::new(spec)?;
    let m = spec.mix;
    let (r, u, i) = (m.read, m.read + m.update, m.read + m.update + m.insert);
    Ok((0..spec.clients)
        .map(|c| {
            let mut rng = client_rng(spec.seed, c);
            (0..spec.commands)
                .map(|_| {
                    let roll: f64 = rng.random();
                    let k = sampler.sample(&mut rng);
                    let v: u64 = rng.random();
                    if roll < r {
                        KvCommand::Read { k }
                    } else if roll < u {
                        KvCommand::Update { k, v }
                    } else if roll < i {
                        KvCommand::Insert { k, v }
                    } else {
                        KvCommand::Delete { k }
                    }
                })
                .collect()
        })
        .collect())
}
