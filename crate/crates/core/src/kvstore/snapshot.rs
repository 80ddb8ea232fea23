use std::io::{self, BufRead, Write};

use super::tree::{Key, Value};

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes one `key<TAB>value` line per entry, value as 16 hex digits.
pub fn write_snapshot<W: Write>(
    mut out: W,
    entries: impl IntoIterator<Item = (Key, Value)>,
) -> io::Result<()> {
    for (k, v) in entries {
        writeln!(out, "{k}\t{v:016x}")?;
    }
    Ok(())
}

/// Parses a snapshot dump, requiring strictly ascending keys.
pub fn parse_snapshot<R: BufRead>(input: R) -> Result<Vec<(Key, Value)>, SnapshotError> {
    let mut out: Vec<(Key, Value)> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| SnapshotError::Malformed {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (k, v) = line.split_once('\t').ok_or_else(|| bad("expected two fields"))?;
        let k: Key = k.parse().map_err(|_| bad("bad key"))?;
        let v = Value::from_str_radix(v, 16).map_err(|_| bad("bad value"))?;
        if out.last().is_some_and(|&(p, _)| p >= k) {
            return Err(bad("keys not ascending"));
        }
        out.push((k, v));
    }
    Ok(out)
}
