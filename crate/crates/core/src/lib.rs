//! Parallel state-machine replication toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`multicast`] — atomic multicast over per-group sequencers with a
//!   deterministic merge of the streams a subscriber listens to.
//! * [`dependency`] — declared command dependencies (C-Dep) and the
//!   command-to-groups functions derived from them.
//! * [`kvstore`] — the replicated application, an in-memory B+-tree.
//! * [`replication`] — client proxies and the P-SMR, sP-SMR, SMR and
//!   non-replicated engines.
//! * [`verify`] — linearizability search, delivery-order audit,
//!   cross-replica determinism and deadlock detection.

pub mod dependency;
pub mod digest;
pub mod kvstore;
pub mod multicast;
pub mod replication;
pub mod verify;

pub use digest::StateDigest;
