use std::io::{self, BufRead, Write};

use super::group::GroupId;

/// One delivery event: `(replica, thread, group, group_seq, merge_ts, payload_hash)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeliveryRecord {
    pub replica: u32,
    pub thread: u32,
    pub group: GroupId,
    pub group_seq: u64,
    pub merge_ts: u64,
    pub payload_hash: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LogParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes one tab-separated record per line, in the given order.
pub fn write_delivery_log<W: Write>(mut w: W, records: &[DeliveryRecord]) -> io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{:016x}",
            r.replica, r.thread, r.group, r.group_seq, r.merge_ts, r.payload_hash
        )?;
    }
    Ok(())
}

pub fn parse_delivery_log<R: BufRead>(r: R) -> Result<Vec<DeliveryRecord>, LogParseError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| LogParseError::Malformed {
            line: n + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 tab-separated fields"));
        }
        out.push(DeliveryRecord {
            replica: f[0].parse().map_err(|_| bad("replica"))?,
            thread: f[1].parse().map_err(|_| bad("thread"))?,
            group: f[2].parse().map_err(|_| bad("group"))?,
            group_seq: f[3].parse().map_err(|_| bad("group_seq"))?,
            merge_ts: f[4].parse().map_err(|_| bad("merge_ts"))?,
            payload_hash: u64::from_str_radix(f[5], 16).map_err(|_| bad("payload_hash"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_parse() {
        let recs = vec![
            DeliveryRecord {
                replica: 0,
                thread: 2,
                group: GroupId::Index(2),
                group_seq: 1,
                merge_ts: 5,
                payload_hash: 0xdead_beef,
            },
            DeliveryRecord {
                replica: 1,
                thread: 1,
                group: GroupId::All,
                group_seq: 7,
                merge_ts: 9,
                payload_hash: u64::MAX,
            },
        ];
        let mut buf = Vec::new();
        write_delivery_log(&mut buf, &recs).unwrap();
        assert_eq!(parse_delivery_log(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn rejects_short_lines() {
        assert!(parse_delivery_log("0\t1\tg1\n".as_bytes()).is_err());
    }
}
