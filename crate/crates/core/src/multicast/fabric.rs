use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use bytes::Bytes;
use crossbeam_channel::{unbounded, Sender};

use super::batch::{BatchBuilder, DEFAULT_BATCH_LIMIT};
use super::group::{GroupId, GroupSet, MAX_GROUPS};
use super::subscription::{SubscriberId, Subscription};
use super::MulticastError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FabricConfig {
    /// Number of numbered groups `k`; the fabric adds the `All` group.
    pub groups: usize,
    /// Batch limit in bytes, or `None` to stamp every message on its own.
    pub batch_limit: Option<usize>,
    /// Application messages between two rounds of null messages on idle
    /// groups. Zero disables periodic nulls; on-demand nulls still flow.
    pub null_period: u64,
}

impl FabricConfig {
    pub fn new(groups: usize) -> Self {
        Self {
            groups,
            batch_limit: Some(DEFAULT_BATCH_LIMIT),
            null_period: 64,
        }
    }

    pub fn unbatched(mut self) -> Self {
        self.batch_limit = None;
        self
    }

    pub fn with_null_period(mut self, period: u64) -> Self {
        self.null_period = period;
        self
    }
}

/// A message as seen by a subscriber.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampedMessage {
    pub payload: Bytes,
    pub group: GroupId,
    /// 1-based, gapless per group. Nulls do not consume sequence numbers.
    pub group_seq: u64,
    /// Shared by every message of one batch; strictly increasing from batch
    /// to batch along a stream.
    pub merge_ts: u64,
    pub is_null: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FabricStats {
    pub app_messages: u64,
    pub batches: u64,
    pub nulls: u64,
}

/// Unit of a group stream: a stamped batch, or a null when `payloads` is
/// empty.
#[derive(Debug)]
pub(crate) struct StreamEntry {
    pub group: GroupId,
    pub first_seq: u64,
    pub merge_ts: u64,
    pub payloads: Vec<Bytes>,
}

impl StreamEntry {
    pub fn is_null(&self) -> bool {
        self.payloads.is_empty()
    }
}

struct StreamState {
    next_seq: u64,
    last_ts: u64,
    subscribers: Vec<Sender<Arc<StreamEntry>>>,
    pending: Option<BatchBuilder>,
    waiting: usize,
    active_since_tick: bool,
    closed: bool,
}

pub(crate) struct Stream {
    group: GroupId,
    state: Mutex<StreamState>,
    last_ts: AtomicU64,
}

pub(crate) struct FabricInner {
    k: usize,
    batch_limit: Option<usize>,
    null_period: u64,
    clock: AtomicU64,
    streams: Vec<Stream>,
    app_messages: AtomicU64,
    batches: AtomicU64,
    nulls: AtomicU64,
    closed: AtomicBool,
}

/// Handle to an in-process multicast fabric. Cheap to clone; all clones
/// address the same groups.
#[derive(Clone)]
pub struct MulticastFabric {
    inner: Arc<FabricInner>,
}

impl std::fmt::Debug for MulticastFabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MulticastFabric")
            .field("groups", &self.inner.k)
            .field("stats", &self.stats())
            .finish()
    }
}

impl MulticastFabric {
    pub fn new(config: FabricConfig) -> Result<Self, MulticastError> {
        if config.groups < 1 || config.groups > MAX_GROUPS {
            return Err(MulticastError::GroupCount(config.groups));
        }
        let streams = (1..=config.groups)
            .map(|i| GroupId::Index(i as u8))
            .chain(std::iter::once(GroupId::All))
            .map(|group| Stream {
                group,
                state: Mutex::new(StreamState {
                    next_seq: 1,
                    last_ts: 0,
                    subscribers: Vec::new(),
                    pending: config.batch_limit.map(BatchBuilder::new),
                    waiting: 0,
                    active_since_tick: false,
                    closed: false,
                }),
                last_ts: AtomicU64::new(0),
            })
            .collect();
        Ok(Self {
            inner: Arc::new(FabricInner {
                k: config.groups,
                batch_limit: config.batch_limit,
                null_period: config.null_period,
                clock: AtomicU64::new(0),
                streams,
                app_messages: AtomicU64::new(0),
                batches: AtomicU64::new(0),
                nulls: AtomicU64::new(0),
                closed: AtomicBool::new(false),
            }),
        })
    }

    /// Number of numbered groups.
    pub fn group_count(&self) -> usize {
        self.inner.k
    }

    /// Every group of the fabric, `All` included.
    pub fn groups(&self) -> Vec<GroupId> {
        self.inner.streams.iter().map(|s| s.group).collect()
    }

    /// Multicasts `payload` to `dest`. Multi-group destinations are sent to
    /// [`GroupId::All`].
    pub fn multicast(&self, dest: GroupSet, payload: Bytes) -> Result<(), MulticastError> {
        let target = self.inner.route(dest)?;
        if let Some(limit) = self.inner.batch_limit {
            if payload.len() > limit {
                return Err(MulticastError::PayloadTooLarge {
                    size: payload.len(),
                    limit,
                });
            }
        }
        let stream = self.inner.stream(target)?;
        {
            let mut st = stream.lock();
            if st.closed {
                return Err(MulticastError::Shutdown);
            }
            st.active_since_tick = true;
            match st.pending.as_mut() {
                Some(builder) => {
                    let sealed = builder.push(payload);
                    let flush_now = st.waiting > 0;
                    if let Some(batch) = sealed {
                        self.inner.publish(stream, &mut st, batch.messages);
                    }
                    if flush_now {
                        self.inner.flush(stream, &mut st);
                    }
                }
                None => {
                    self.inner.publish(stream, &mut st, vec![payload]);
                }
            }
        }
        let n = self.inner.app_messages.fetch_add(1, Ordering::Relaxed) + 1;
        if self.inner.null_period > 0 && n.is_multiple_of(self.inner.null_period) {
            self.inner.tick();
        }
        Ok(())
    }

    /// Stamps `payload` on `group` immediately, bypassing batching (pending
    /// batched messages on the group are stamped first to keep their order).
    pub fn stamp(&self, group: GroupId, payload: Bytes) -> Result<StampedMessage, MulticastError> {
        let stream = self.inner.stream(group)?;
        let mut st = stream.lock();
        if st.closed {
            return Err(MulticastError::Shutdown);
        }
        st.active_since_tick = true;
        self.inner.flush(stream, &mut st);
        let entry = self.inner.publish(stream, &mut st, vec![payload]);
        drop(st);
        self.inner.app_messages.fetch_add(1, Ordering::Relaxed);
        Ok(StampedMessage {
            payload: entry.payloads[0].clone(),
            group,
            group_seq: entry.first_seq,
            merge_ts: entry.merge_ts,
            is_null: false,
        })
    }

    /// Emits one null on every group that has stamped nothing since the last
    /// round. Called automatically every `null_period` messages.
    pub fn emit_nulls(&self) {
        self.inner.tick();
    }

    /// Emits a null on `group` unconditionally.
    pub fn emit_null(&self, group: GroupId) -> Result<(), MulticastError> {
        let stream = self.inner.stream(group)?;
        let mut st = stream.lock();
        if !st.closed {
            self.inner.publish(stream, &mut st, Vec::new());
        }
        Ok(())
    }

    /// Seals and stamps pending batches on every group.
    pub fn flush(&self) {
        for stream in &self.inner.streams {
            let mut st = stream.lock();
            self.inner.flush(stream, &mut st);
        }
    }

    /// Opens a delivery stream over `groups`. Subscriptions only see
    /// messages stamped after they were opened, so engines subscribe before
    /// any client traffic starts.
    pub fn subscribe(
        &self,
        groups: GroupSet,
        id: SubscriberId,
        record_log: bool,
    ) -> Result<Subscription, MulticastError> {
        if groups.is_empty() {
            return Err(MulticastError::EmptyDestination);
        }
        if self.inner.closed.load(Ordering::Acquire) {
            return Err(MulticastError::Shutdown);
        }
        let mut lanes = Vec::with_capacity(groups.len());
        for g in groups.iter() {
            let stream_idx = self.inner.stream_index(g)?;
            let (tx, rx) = unbounded();
            self.inner.streams[stream_idx].lock().subscribers.push(tx);
            lanes.push((g, stream_idx, rx));
        }
        Ok(Subscription::new(self.inner.clone(), id, lanes, record_log))
    }

    /// Closes every group. Subscribers drain what was already stamped and
    /// then observe end of stream.
    pub fn shutdown(&self) {
        self.inner.closed.store(true, Ordering::Release);
        for stream in &self.inner.streams {
            let mut st = stream.lock();
            self.inner.flush(stream, &mut st);
            st.closed = true;
            st.subscribers.clear();
        }
    }

    #[cfg(test)]
    pub(crate) fn inner(&self) -> &Arc<FabricInner> {
        &self.inner
    }

    pub fn is_shut_down(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    pub fn stats(&self) -> FabricStats {
        FabricStats {
            app_messages: self.inner.app_messages.load(Ordering::Relaxed),
            batches: self.inner.batches.load(Ordering::Relaxed),
            nulls: self.inner.nulls.load(Ordering::Relaxed),
        }
    }
}

impl Stream {
    fn lock(&self) -> MutexGuard<'_, StreamState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl FabricInner {
    pub(crate) fn route(&self, dest: GroupSet) -> Result<GroupId, MulticastError> {
        if dest.is_empty() {
            return Err(MulticastError::EmptyDestination);
        }
        if let Some(max) = dest.max_index() {
            if max > self.k {
                return Err(MulticastError::UnknownGroup(GroupId::Index(max as u8)));
            }
        }
        Ok(if dest.is_singleton() {
            dest.iter().next().expect("non-empty")
        } else {
            GroupId::All
        })
    }

    pub(crate) fn stream_index(&self, g: GroupId) -> Result<usize, MulticastError> {
        match g {
            GroupId::Index(i) if i >= 1 && (i as usize) <= self.k => Ok(i as usize - 1),
            GroupId::Index(_) => Err(MulticastError::UnknownGroup(g)),
            GroupId::All => Ok(self.k),
        }
    }

    fn stream(&self, g: GroupId) -> Result<&Stream, MulticastError> {
        Ok(&self.streams[self.stream_index(g)?])
    }

    /// Stamps `payloads` as one stream entry and fans it out. The clock is
    /// read under the stream lock, so timestamps increase along the stream.
    fn publish(
        &self,
        stream: &Stream,
        st: &mut StreamState,
        payloads: Vec<Bytes>,
    ) -> Arc<StreamEntry> {
        let merge_ts = self.clock.fetch_add(1, Ordering::AcqRel) + 1;
        let entry = Arc::new(StreamEntry {
            group: stream.group,
            first_seq: st.next_seq,
            merge_ts,
            payloads,
        });
        st.next_seq += entry.payloads.len() as u64;
        st.last_ts = merge_ts;
        if entry.is_null() {
            self.nulls.fetch_add(1, Ordering::Relaxed);
        } else {
            self.batches.fetch_add(1, Ordering::Relaxed);
        }
        for sub in &st.subscribers {
            let _ = sub.send(entry.clone());
        }
        stream.last_ts.store(merge_ts, Ordering::Release);
        entry
    }

    fn flush(&self, stream: &Stream, st: &mut StreamState) {
        if let Some(batch) = st.pending.as_mut().and_then(BatchBuilder::take) {
            self.publish(stream, st, batch.messages);
        }
    }

    fn tick(&self) {
        for stream in &self.streams {
            let mut st = stream.lock();
            if st.closed {
                continue;
            }
            if !st.active_since_tick {
                self.publish(stream, &mut st, Vec::new());
            }
            st.active_since_tick = false;
        }
    }

    /// Called by a subscriber whose lane for `stream_idx` is empty. Seals a
    /// pending batch if there is one; otherwise, when the subscriber holds an
    /// application message stamped at `need`, emits a null past it so the
    /// merge can make progress.
    pub(crate) fn nudge(&self, stream_idx: usize, need: Option<u64>) {
        let stream = &self.streams[stream_idx];
        if let Some(n) = need {
            if stream.last_ts.load(Ordering::Acquire) > n {
                return;
            }
        }
        let mut st = stream.lock();
        if st.closed {
            return;
        }
        if st.pending.as_ref().is_some_and(|b| !b.is_empty()) {
            self.flush(stream, &mut st);
        } else if need.is_some_and(|n| st.last_ts <= n) {
            self.publish(stream, &mut st, Vec::new());
        }
    }

    pub(crate) fn is_batched(&self) -> bool {
        self.batch_limit.is_some()
    }

    /// Marks a subscriber as blocked on `stream_idx` so producers flush
    /// immediately instead of waiting for a full batch.
    pub(crate) fn set_waiting(&self, stream_idx: usize, waiting: bool) {
        let stream = &self.streams[stream_idx];
        let mut st = stream.lock();
        if waiting {
            st.waiting += 1;
            self.flush(stream, &mut st);
        } else {
            st.waiting -= 1;
        }
    }
}
