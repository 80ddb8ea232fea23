use std::sync::Arc;

use crossbeam_channel::{Receiver, Select, TryRecvError};

use super::fabric::{FabricInner, StampedMessage, StreamEntry};
use super::group::GroupId;
use super::log::DeliveryRecord;
use crate::digest::fingerprint;

/// Identifies a delivery stream in logs: which replica and which thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriberId {
    pub replica: u32,
    pub thread: u32,
}

/// Returned by [`Subscription::deliver`] once the fabric is shut down and
/// every stamped message has been delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("end of stream")]
pub struct EndOfStream;

struct Lane {
    group: GroupId,
    stream_idx: usize,
    rx: Receiver<Arc<StreamEntry>>,
    head: Option<(Arc<StreamEntry>, usize)>,
    closed: bool,
}

impl Lane {
    fn poll(&mut self) -> bool {
        if self.head.is_some() || self.closed {
            return true;
        }
        match self.rx.try_recv() {
            Ok(entry) => {
                self.head = Some((entry, 0));
                true
            }
            Err(TryRecvError::Empty) => false,
            Err(TryRecvError::Disconnected) => {
                self.closed = true;
                true
            }
        }
    }

    fn head_key(&self) -> Option<(u64, GroupId)> {
        self.head.as_ref().map(|(e, _)| (e.merge_ts, self.group))
    }
}

/// One consumer's merged view of a fixed set of groups. Owned by a single
/// thread; `deliver` is not meant to be called concurrently.
pub struct Subscription {
    fabric: Arc<FabricInner>,
    id: SubscriberId,
    lanes: Vec<Lane>,
    log: Option<Vec<DeliveryRecord>>,
    delivered: u64,
    nulls_skipped: u64,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("id", &self.id)
            .field("groups", &self.lanes.iter().map(|l| l.group).collect::<Vec<_>>())
            .field("delivered", &self.delivered)
            .finish()
    }
}

impl Subscription {
    pub(crate) fn new(
        fabric: Arc<FabricInner>,
        id: SubscriberId,
        lanes: Vec<(GroupId, usize, Receiver<Arc<StreamEntry>>)>,
        record_log: bool,
    ) -> Self {
        Self {
            fabric,
            id,
            lanes: lanes
                .into_iter()
                .map(|(group, stream_idx, rx)| Lane {
                    group,
                    stream_idx,
                    rx,
                    head: None,
                    closed: false,
                })
                .collect(),
            log: record_log.then(Vec::new),
            delivered: 0,
            nulls_skipped: 0,
        }
    }

    pub fn id(&self) -> SubscriberId {
        self.id
    }

    pub fn groups(&self) -> Vec<GroupId> {
        self.lanes.iter().map(|l| l.group).collect()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn nulls_skipped(&self) -> u64 {
        self.nulls_skipped
    }

    /// Hands over the delivery records collected so far.
    pub fn take_log(&mut self) -> Vec<DeliveryRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Next application message under the deterministic merge. Blocks until
    /// one is available.
    pub fn deliver(&mut self) -> Result<StampedMessage, EndOfStream> {
        loop {
            if let Some(msg) = self.step()? {
                return Ok(msg);
            }
        }
    }

    /// Like [`deliver`](Self::deliver), but returns `Ok(None)` instead of
    /// blocking when the merge cannot make progress right now.
    pub fn try_deliver(&mut self) -> Result<Option<StampedMessage>, EndOfStream> {
        loop {
            let ready = self.poll_lanes();
            if !ready {
                self.nudge_empty_lanes();
                if !self.poll_lanes() {
                    return Ok(None);
                }
            }
            if let Some(msg) = self.take_min()? {
                return Ok(Some(msg));
            }
        }
    }

    /// One round of the merge: returns a message, or `None` after consuming
    /// a null or after blocking for new stream entries.
    fn step(&mut self) -> Result<Option<StampedMessage>, EndOfStream> {
        let ready = self.poll_lanes();
        if ready {
            return self.take_min();
        }
        self.nudge_empty_lanes();
        if self.poll_lanes() {
            return Ok(None);
        }
        self.block_on_empty_lanes();
        Ok(None)
    }

    /// Timestamp of the oldest application message currently at a head.
    /// Polls every lane (no short-circuit) and reports whether all are ready.
    fn poll_lanes(&mut self) -> bool {
        let mut ready = true;
        for lane in &mut self.lanes {
            ready &= lane.poll();
        }
        ready
    }

    fn pending_need(&self) -> Option<u64> {
        self.lanes
            .iter()
            .filter_map(|l| l.head.as_ref())
            .filter(|(e, _)| !e.is_null())
            .map(|(e, _)| e.merge_ts)
            .min()
    }

    /// Asks the fabric to fill empty lanes. A nudge can flush a batch into
    /// one lane and thereby raise what the other lanes must pass, so this
    /// repeats until the oldest held message stops changing.
    fn nudge_empty_lanes(&mut self) {
        let mut need = self.pending_need();
        loop {
            if need.is_none() && !self.fabric.is_batched() {
                return;
            }
            for lane in self.lanes.iter().filter(|l| l.head.is_none() && !l.closed) {
                self.fabric.nudge(lane.stream_idx, need);
            }
            if self.poll_lanes() {
                return;
            }
            let now = self.pending_need();
            if now == need {
                return;
            }
            need = now;
        }
    }

    fn block_on_empty_lanes(&mut self) {
        // With no application message held, a null head only says that its
        // stream moved on; keeping it would hide entries queued behind it.
        if self.pending_need().is_none() {
            for lane in &mut self.lanes {
                if lane.head.as_ref().is_some_and(|(e, _)| e.is_null()) {
                    lane.head = None;
                    self.nulls_skipped += 1;
                }
            }
        }
        let empty: Vec<usize> = (0..self.lanes.len())
            .filter(|&i| self.lanes[i].head.is_none() && !self.lanes[i].closed)
            .collect();
        let batched = self.fabric.is_batched();
        if batched {
            for &i in &empty {
                self.fabric.set_waiting(self.lanes[i].stream_idx, true);
            }
        }
        // A flush triggered by registering may already have filled a lane.
        if !empty.iter().any(|&i| !self.lanes[i].rx.is_empty()) {
            let rxs: Vec<_> = empty.iter().map(|&i| self.lanes[i].rx.clone()).collect();
            let mut sel = Select::new();
            for rx in &rxs {
                sel.recv(rx);
            }
            let op = sel.select();
            let pick = op.index();
            let received = op.recv(&rxs[pick]);
            let lane = &mut self.lanes[empty[pick]];
            match received {
                Ok(entry) => lane.head = Some((entry, 0)),
                Err(_) => lane.closed = true,
            }
        }
        if batched {
            for &i in &empty {
                self.fabric.set_waiting(self.lanes[i].stream_idx, false);
            }
        }
    }

    /// All lanes have a head or are closed: consume the smallest head.
    fn take_min(&mut self) -> Result<Option<StampedMessage>, EndOfStream> {
        let Some(idx) = (0..self.lanes.len())
            .filter(|&i| self.lanes[i].head.is_some())
            .min_by_key(|&i| self.lanes[i].head_key())
        else {
            return Err(EndOfStream);
        };
        let lane = &mut self.lanes[idx];
        let (entry, pos) = lane.head.take().expect("selected lane has a head");
        if entry.is_null() {
            self.nulls_skipped += 1;
            return Ok(None);
        }
        let msg = StampedMessage {
            payload: entry.payloads[pos].clone(),
            group: entry.group,
            group_seq: entry.first_seq + pos as u64,
            merge_ts: entry.merge_ts,
            is_null: false,
        };
        if pos + 1 < entry.payloads.len() {
            lane.head = Some((entry, pos + 1));
        }
        self.delivered += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(DeliveryRecord {
                replica: self.id.replica,
                thread: self.id.thread,
                group: msg.group,
                group_seq: msg.group_seq,
                merge_ts: msg.merge_ts,
                payload_hash: fingerprint(&msg.payload),
            });
        }
        Ok(Some(msg))
    }
}

#[cfg(test)]
mod tests {
    use bytes::Bytes;
    use crossbeam_channel::unbounded;

    use super::*;
    use crate::multicast::{FabricConfig, MulticastFabric};

    fn entry(group: GroupId, ts: u64, seq: u64, tag: u8) -> Arc<StreamEntry> {
        Arc::new(StreamEntry {
            group,
            first_seq: seq,
            merge_ts: ts,
            payloads: vec![Bytes::from(vec![tag])],
        })
    }

    /// Builds a subscription over hand-fed streams; each inner vec is one lane.
    fn synthetic(streams: Vec<(GroupId, Vec<Arc<StreamEntry>>)>) -> Vec<u8> {
        let fabric = MulticastFabric::new(FabricConfig::new(4).unbatched().with_null_period(0)).unwrap();
        let mut lanes = Vec::new();
        for (g, entries) in streams {
            let (tx, rx) = unbounded();
            for e in entries {
                tx.send(e).unwrap();
            }
            let idx = fabric.inner().stream_index(g).unwrap();
            lanes.push((g, idx, rx));
        }
        let mut sub = Subscription::new(
            fabric.inner().clone(),
            SubscriberId { replica: 0, thread: 0 },
            lanes,
            false,
        );
        let mut out = Vec::new();
        while let Ok(m) = sub.deliver() {
            out.push(m.payload[0]);
        }
        out
    }

    #[test]
    fn equal_timestamps_break_ties_by_group_with_all_last() {
        let order = synthetic(vec![
            (GroupId::All, vec![entry(GroupId::All, 5, 1, 0xA)]),
            (GroupId::Index(2), vec![entry(GroupId::Index(2), 5, 1, 2)]),
        ]);
        assert_eq!(order, vec![2, 0xA]);
    }

    #[test]
    fn identical_inputs_give_identical_merges() {
        // ties everywhere; lane order in the subscription must not matter
        let mk = |rev: bool| {
            let mut s = vec![
                (GroupId::Index(1), vec![entry(GroupId::Index(1), 1, 1, 1), entry(GroupId::Index(1), 3, 2, 3)]),
                (GroupId::All, vec![entry(GroupId::All, 1, 1, 10), entry(GroupId::All, 2, 2, 11)]),
            ];
            if rev {
                s.reverse();
            }
            synthetic(s)
        };
        assert_eq!(mk(false), vec![1, 10, 11, 3]);
        assert_eq!(mk(false), mk(true));
    }
}
