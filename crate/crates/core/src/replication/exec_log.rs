use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

/// How a command was executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecMode {
    /// P-SMR, single destination group.
    Parallel,
    /// P-SMR, executed by the elected thread after the barrier.
    Synchronous,
    /// SMR's single thread.
    Sequential,
    /// A worker fed by the sP-SMR / no-rep scheduler.
    Scheduled,
}

impl ExecMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecMode::Parallel => "parallel",
            ExecMode::Synchronous => "sync",
            ExecMode::Sequential => "seq",
            ExecMode::Scheduled => "sched",
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "parallel" => ExecMode::Parallel,
            "sync" => ExecMode::Synchronous,
            "seq" => ExecMode::Sequential,
            "sched" => ExecMode::Scheduled,
            _ => return Err(format!("unknown mode {s:?}")),
        })
    }
}

/// `(replica, thread, client_id, client_seq, cid, t_start, t_end, mode)`;
/// times are nanoseconds on the harness clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExecRecord {
    pub replica: u32,
    pub thread: u32,
    pub client_id: u32,
    pub client_seq: u64,
    pub cid: u16,
    pub t_start: u64,
    pub t_end: u64,
    pub mode: ExecMode,
}

impl ExecRecord {
    /// Whether the two execution intervals intersect.
    pub fn overlaps(&self, other: &ExecRecord) -> bool {
        self.t_start < other.t_end && other.t_start < self.t_end
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecLogError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_exec_log<W: Write>(mut w: W, records: &[ExecRecord]) -> io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.replica, r.thread, r.client_id, r.client_seq, r.cid, r.t_start, r.t_end, r.mode
        )?;
    }
    Ok(())
}

pub fn parse_exec_log<R: BufRead>(r: R) -> Result<Vec<ExecRecord>, ExecLogError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| ExecLogError::Malformed { line: n + 1, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} {s:?}"))
        }
        let rec = (|| -> Result<ExecRecord, String> {
            Ok(ExecRecord {
                replica: num(f[0], "replica")?,
                thread: num(f[1], "thread")?,
                client_id: num(f[2], "client id")?,
                client_seq: num(f[3], "client seq")?,
                cid: num(f[4], "command id")?,
                t_start: num(f[5], "start time")?,
                t_end: num(f[6], "end time")?,
                mode: f[7].parse()?,
            })
        })()
        .map_err(bad)?;
        out.push(rec);
    }
    Ok(out)
}
