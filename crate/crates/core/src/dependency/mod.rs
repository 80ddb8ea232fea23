//! Command dependencies and command-to-groups mapping.
//!
//! A service declares its dependency relation ([`CDep`]) statically. The
//! client proxy maps each command to destination groups with a
//! [`CommandToGroups`] rule; [`validate_cg`] checks that dependent commands
//! always share at least one group.

mod cdep;
mod cg;
mod conflict;

pub use cdep::{
    CDep, CDepBuilder, CDepFile, Command, CommandId, CommandSig, ConditionalEntry, ParamDesc,
    ParamType, UnconditionalEntry, ANY_COMMAND,
};
pub use cg::{
    validate_cg, validate_cg_sequential, BroadcastRule, CgReport, CommandToGroups, PartitionRule,
};
pub use conflict::ConflictIndex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DepError {
    #[error("unknown command {0}")]
    UnknownCommand(CommandId),
    #[error("unknown command name {0:?}")]
    UnknownName(String),
    #[error("command {command:?} has no input field {field:?}")]
    UnknownField { command: String, field: String },
    #[error("command {cid} lacks the key parameter at index {index}")]
    MissingKey { cid: CommandId, index: usize },
    #[error("invalid dependency declaration: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
}
