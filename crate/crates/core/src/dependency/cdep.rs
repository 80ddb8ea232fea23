use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DepError;

/// Index of a command within a service's declared signatures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CommandId(pub u16);

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Int,
    Bytes,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDesc {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

impl ParamDesc {
    pub fn int(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ty: ParamType::Int,
        }
    }

    pub fn bytes(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ty: ParamType::Bytes,
        }
    }
}

/// Signature of a service command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSig {
    pub name: String,
    #[serde(default)]
    pub input: Vec<ParamDesc>,
    #[serde(default)]
    pub output: Vec<ParamDesc>,
}

impl CommandSig {
    pub fn new(name: &str, input: Vec<ParamDesc>, output: Vec<ParamDesc>) -> Self {
        Self {
            name: name.to_string(),
            input,
            output,
        }
    }

    pub fn input_index(&self, field: &str) -> Option<usize> {
        self.input.iter().position(|p| p.name == field)
    }
}

/// What the dependency analysis needs from a command instance.
pub trait Command {
    fn cid(&self) -> CommandId;
    /// Integer input parameter at `index` in the command's signature.
    fn int_param(&self, index: usize) -> Option<i64>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Rule {
    Independent,
    Always,
    /// Dependent when any listed pair of input parameters (left command's
    /// index, right command's index) carries equal values.
    OnKey(Vec<(usize, usize)>),
}

/// Declared command dependencies of a service.
///
/// Two commands are dependent when an unconditional entry lists their pair,
/// or when a conditional entry lists it and the named keys are equal. Pairs
/// are symmetric and anything not listed is independent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CDep {
    sigs: Vec<CommandSig>,
    matrix: Vec<Rule>,
    /// Int params of each command that take part in some conditional entry.
    keyed: Vec<Vec<usize>>,
}

impl CDep {
    pub fn builder(sigs: Vec<CommandSig>) -> CDepBuilder {
        CDepBuilder {
            sigs,
            unconditional: Vec::new(),
            conditional: Vec::new(),
        }
    }

    pub fn commands(&self) -> &[CommandSig] {
        &self.sigs
    }

    pub fn len(&self) -> usize {
        self.sigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigs.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<CommandId> {
        self.sigs
            .iter()
            .position(|s| s.name == name)
            .map(|i| CommandId(i as u16))
    }

    pub fn sig(&self, cid: CommandId) -> Result<&CommandSig, DepError> {
        self.sigs
            .get(cid.0 as usize)
            .ok_or(DepError::UnknownCommand(cid))
    }

    pub(crate) fn rule(&self, a: CommandId, b: CommandId) -> &Rule {
        &self.matrix[a.0 as usize * self.sigs.len() + b.0 as usize]
    }

    pub(crate) fn keyed_params(&self, cid: CommandId) -> &[usize] {
        &self.keyed[cid.0 as usize]
    }

    /// True when `cid` is unconditionally dependent on every command,
    /// itself included.
    pub fn depends_on_all(&self, cid: CommandId) -> bool {
        (0..self.sigs.len()).all(|j| *self.rule(cid, CommandId(j as u16)) == Rule::Always)
    }

    /// Whether two command instances must be ordered with respect to each
    /// other.
    pub fn is_dependent<A: Command + ?Sized, B: Command + ?Sized>(
        &self,
        a: &A,
        b: &B,
    ) -> Result<bool, DepError> {
        let (ca, cb) = (a.cid(), b.cid());
        self.sig(ca)?;
        self.sig(cb)?;
        match self.rule(ca, cb) {
            Rule::Independent => Ok(false),
            Rule::Always => Ok(true),
            Rule::OnKey(pairs) => {
                for &(ia, ib) in pairs {
                    let ka = a.int_param(ia).ok_or(DepError::MissingKey {
                        cid: ca,
                        index: ia,
                    })?;
                    let kb = b.int_param(ib).ok_or(DepError::MissingKey {
                        cid: cb,
                        index: ib,
                    })?;
                    if ka == kb {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Serialises back to the declaration file format.
    pub fn to_file(&self) -> CDepFile {
        let n = self.sigs.len();
        let mut file = CDepFile {
            command: self.sigs.clone(),
            unconditional: Vec::new(),
            conditional: Vec::new(),
        };
        for a in 0..n {
            for b in a..n {
                match self.rule(CommandId(a as u16), CommandId(b as u16)) {
                    Rule::Independent => {}
                    Rule::Always => file.unconditional.push(UnconditionalEntry {
                        pair: [self.sigs[a].name.clone(), self.sigs[b].name.clone()],
                    }),
                    Rule::OnKey(pairs) => {
                        for &(ia, ib) in pairs {
                            file.conditional.push(ConditionalEntry {
                                pair: [self.sigs[a].name.clone(), self.sigs[b].name.clone()],
                                keys: [
                                    self.sigs[a].input[ia].name.clone(),
                                    self.sigs[b].input[ib].name.clone(),
                                ],
                            });
                        }
                    }
                }
            }
        }
        file
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("declaration file serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, DepError> {
        let file: CDepFile = toml::from_str(text).map_err(|e| DepError::Format(e.to_string()))?;
        file.build()
    }
}

pub struct CDepBuilder {
    sigs: Vec<CommandSig>,
    unconditional: Vec<(String, String)>,
    conditional: Vec<(String, String, String, String)>,
}

/// Wildcard accepted on either side of an unconditional entry.
pub const ANY_COMMAND: &str = "*";

impl CDepBuilder {
    /// `a` and `b` are dependent whatever their parameters. Either side may
    /// be [`ANY_COMMAND`].
    pub fn always(mut self, a: &str, b: &str) -> Self {
        self.unconditional.push((a.to_string(), b.to_string()));
        self
    }

    /// `a` and `b` are dependent when `a.key_a == b.key_b`.
    pub fn on_key(mut self, a: &str, b: &str, key_a: &str, key_b: &str) -> Self {
        self.conditional
            .push((a.to_string(), b.to_string(), key_a.to_string(), key_b.to_string()));
        self
    }

    pub fn build(self) -> Result<CDep, DepError> {
        let n = self.sigs.len();
        let names: BTreeSet<&str> = self.sigs.iter().map(|s| s.name.as_str()).collect();
        if names.len() != n {
            return Err(DepError::Format("duplicate command name".into()));
        }
        if n > u16::MAX as usize {
            return Err(DepError::Format("too many commands".into()));
        }
        let resolve = |name: &str| -> Result<Vec<usize>, DepError> {
            if name == ANY_COMMAND {
                return Ok((0..n).collect());
            }
            self.sigs
                .iter()
                .position(|s| s.name == name)
                .map(|i| vec![i])
                .ok_or_else(|| DepError::UnknownName(name.to_string()))
        };
        let mut matrix = vec![Rule::Independent; n * n];
        let mut keyed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (a, b) in &self.unconditional {
            for i in resolve(a)? {
                for j in resolve(b)? {
                    matrix[i * n + j] = Rule::Always;
                    matrix[j * n + i] = Rule::Always;
                }
            }
        }
        for (a, b, ka, kb) in &self.conditional {
            let i = *resolve(a)?.first().filter(|_| a != ANY_COMMAND).ok_or_else(|| {
                DepError::Format("conditional entries must name concrete commands".into())
            })?;
            let j = *resolve(b)?.first().filter(|_| b != ANY_COMMAND).ok_or_else(|| {
                DepError::Format("conditional entries must name concrete commands".into())
            })?;
            let ia = int_field(&self.sigs[i], ka)?;
            let ib = int_field(&self.sigs[j], kb)?;
            keyed[i].insert(ia);
            keyed[j].insert(ib);
            add_key(&mut matrix[i * n + j], (ia, ib));
            add_key(&mut matrix[j * n + i], (ib, ia));
        }
        Ok(CDep {
            sigs: self.sigs,
            matrix,
            keyed: keyed.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }
}

fn int_field(sig: &CommandSig, field: &str) -> Result<usize, DepError> {
    let idx = sig.input_index(field).ok_or_else(|| DepError::UnknownField {
        command: sig.name.clone(),
        field: field.to_string(),
    })?;
    if sig.input[idx].ty != ParamType::Int {
        return Err(DepError::Format(format!(
            "key field {}.{} must be an int",
            sig.name, field
        )));
    }
    Ok(idx)
}

fn add_key(rule: &mut Rule, pair: (usize, usize)) {
    match rule {
        Rule::Always => {}
        Rule::Independent => *rule = Rule::OnKey(vec![pair]),
        Rule::OnKey(pairs) => {
            if !pairs.contains(&pair) {
                pairs.push(pair);
            }
        }
    }
}

/// On-disk form of a C-Dep declaration (TOML).
///
/// ```toml
/// [[command]]
/// name = "update"
/// input = [{ name = "k", type = "int" }, { name = "v", type = "bytes" }]
///
/// [[unconditional]]
/// pair = ["insert", "*"]
///
/// [[conditional]]
/// pair = ["update", "read"]
/// keys = ["k", "k"]
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CDepFile {
    #[serde(default)]
    pub command: Vec<CommandSig>,
    #[serde(default)]
    pub unconditional: Vec<UnconditionalEntry>,
    #[serde(default)]
    pub conditional: Vec<ConditionalEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnconditionalEntry {
    pub pair: [String; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalEntry {
    pub pair: [String; 2],
    pub keys: [String; 2],
}

impl CDepFile {
    pub fn build(self) -> Result<CDep, DepError> {
        let mut b = CDep::builder(self.command);
        for e in &self.unconditional {
            b = b.always(&e.pair[0], &e.pair[1]);
        }
        for e in &self.conditional {
            b = b.on_key(&e.pair[0], &e.pair[1], &e.keys[0], &e.keys[1]);
        }
        b.build()
    }
}
