//! Atomic multicast.
//!
//! Every group is backed by a single sequencer that assigns a gapless
//! per-group sequence number and a merge timestamp drawn from one logical
//! clock shared by all sequencers. Subscribers listening to several groups
//! interleave the streams with a deterministic merge: the next message is the
//! stream head with the smallest `(merge_ts, group)`, numbered groups before
//! [`GroupId::All`]. A head is only surfaced once every subscribed stream has
//! a head, so idle streams are kept moving with null messages that carry just
//! a timestamp.
//!
//! Messages addressed to more than one group are physically sent to
//! [`GroupId::All`]; the fabric only supports single-group addressing.

mod batch;
mod fabric;
mod group;
mod log;
mod subscription;

pub use batch::{Batch, BatchBuilder, DEFAULT_BATCH_LIMIT};
pub use fabric::{FabricConfig, FabricStats, MulticastFabric, StampedMessage};
pub use group::{GroupId, GroupSet, ParseGroupError, MAX_GROUPS};
pub use log::{parse_delivery_log, write_delivery_log, DeliveryRecord, LogParseError};
pub use subscription::{EndOfStream, SubscriberId, Subscription};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MulticastError {
    #[error("a fabric needs between 1 and {max} groups, got {0}", max = MAX_GROUPS)]
    GroupCount(usize),
    #[error("destination set is empty")]
    EmptyDestination,
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("payload of {size} bytes exceeds the batch limit of {limit} bytes")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("fabric has been shut down")]
    Shutdown,
}
