use bytes::{Buf, BufMut, Bytes, BytesMut};

use crate::dependency::CommandId;
use crate::multicast::GroupSet;

/// Size of the fixed request header on the wire.
pub const REQUEST_HEADER_LEN: usize = 4 + 8 + 2 + 8;

/// A marshaled client command. `groups` is the destination set computed by
/// the issuing proxy; servers read it instead of recomputing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub client_id: u32,
    pub client_seq: u64,
    pub cid: CommandId,
    pub groups: GroupSet,
    pub input: Bytes,
}

impl Request {
    pub fn encode(&self) -> Bytes {
        let mut b = BytesMut::with_capacity(REQUEST_HEADER_LEN + self.input.len());
        b.put_u32_le(self.client_id);
        b.put_u64_le(self.client_seq);
        b.put_u16_le(self.cid.0);
        b.put_u64_le(self.groups.bits());
        b.put_slice(&self.input);
        b.freeze()
    }

    pub fn decode(mut bytes: Bytes) -> Option<Self> {
        if bytes.len() < REQUEST_HEADER_LEN {
            return None;
        }
        let client_id = bytes.get_u32_le();
        let client_seq = bytes.get_u64_le();
        let cid = CommandId(bytes.get_u16_le());
        let groups = GroupSet::from_bits(bytes.get_u64_le());
        Some(Self {
            client_id,
            client_seq,
            cid,
            groups,
            input: bytes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub client_id: u32,
    pub client_seq: u64,
    pub replica: u32,
    pub output: Bytes,
}
