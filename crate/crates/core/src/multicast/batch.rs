use bytes::Bytes;

/// Default maximum batch size in bytes.
pub const DEFAULT_BATCH_LIMIT: usize = 8192;

/// Greedy batch accumulator: payloads are appended in arrival order until the
/// next one would push the batch past `limit`, at which point the current
/// batch is handed back and a new one starts.
#[derive(Debug)]
pub struct BatchBuilder {
    limit: usize,
    payloads: Vec<Bytes>,
    bytes: usize,
}

/// A sealed batch. `byte_size` never exceeds the builder's limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub messages: Vec<Bytes>,
    pub byte_size: usize,
}

impl BatchBuilder {
    pub fn new(limit: usize) -> Self {
        assert!(limit > 0, "batch limit must be positive");
        Self {
            limit,
            payloads: Vec::new(),
            bytes: 0,
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn fits(&self, payload_len: usize) -> bool {
        payload_len <= self.limit
    }

    /// Adds `payload`, returning the previous batch if it had to be sealed to
    /// make room. The caller must check [`fits`](Self::fits) first.
    pub fn push(&mut self, payload: Bytes) -> Option<Batch> {
        debug_assert!(self.fits(payload.len()));
        let sealed = if self.bytes + payload.len() > self.limit && !self.payloads.is_empty() {
            self.take()
        } else {
            None
        };
        self.bytes += payload.len();
        self.payloads.push(payload);
        sealed
    }

    /// Seals whatever is pending.
    pub fn take(&mut self) -> Option<Batch> {
        if self.payloads.is_empty() {
            return None;
        }
        let byte_size = std::mem::take(&mut self.bytes);
        Some(Batch {
            messages: std::mem::take(&mut self.payloads),
            byte_size,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(n: usize) -> Bytes {
        Bytes::from(vec![0u8; n])
    }

    #[test]
    fn greedy_split_of_three_3000_byte_payloads() {
        // 3000 + 3000 = 6000 fits; adding a third gives 9000 > 8192.
        let mut b = BatchBuilder::new(DEFAULT_BATCH_LIMIT);
        assert!(b.push(payload(3000)).is_none());
        assert!(b.push(payload(3000)).is_none());
        let first = b.push(payload(3000)).expect("third payload seals the batch");
        assert_eq!(first.messages.len(), 2);
        assert_eq!(first.byte_size, 6000);
        let second = b.take().unwrap();
        assert_eq!(second.messages.len(), 1);
        assert!(b.take().is_none());
    }

    #[test]
    fn exact_fit_stays_in_one_batch() {
        let mut b = BatchBuilder::new(8);
        assert!(b.push(payload(4)).is_none());
        assert!(b.push(payload(4)).is_none());
        assert_eq!(b.take().unwrap().byte_size, 8);
    }

    #[test]
    fn order_is_preserved() {
        let mut b = BatchBuilder::new(100);
        for i in 0..5u8 {
            b.push(Bytes::from(vec![i]));
        }
        let batch = b.take().unwrap();
        let seen: Vec<u8> = batch.messages.iter().map(|m| m[0]).collect();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }
}
