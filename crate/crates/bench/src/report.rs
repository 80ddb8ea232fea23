//! CSV/JSON result tables and latency CDF files.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::runner::RunResult;

/// One result row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub engine: String,
    pub k: usize,
    pub n_replicas: usize,
    pub clients: usize,
    pub mix: String,
    pub dependent_pct: f64,
    pub key_dist: String,
    pub seed: u64,
    pub throughput_cps: f64,
    pub lat_mean_us: f64,
    pub lat_p50_us: f64,
    pub lat_p99_us: f64,
    pub per_thread_cps: f64,
    pub tainted: bool,
}

impl ReportRow {
    pub fn from_run(r: &RunResult) -> Self {
        let s = &r.spec;
        let m = &r.metrics;
        Self {
            engine: s.engine.to_string(),
            k: s.threads,
            n_replicas: r.output.replicas.len(),
            clients: s.clients,
            mix: s.mix.to_string(),
            dependent_pct: s.mix.dependent_pct(),
            key_dist: s.dist.to_string(),
            seed: s.seed,
            throughput_cps: m.throughput_cps,
            lat_mean_us: m.lat_mean_us,
            lat_p50_us: m.lat_p50_us,
            lat_p99_us: m.lat_p99_us,
            per_thread_cps: m.per_thread_cps,
            tainted: r.tainted(),
        }
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[ReportRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(r: R) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// One JSON object per run, as an array.
pub fn write_json<W: Write>(w: W, rows: &[ReportRow]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(w, rows)
}

/// Latency samples sorted ascending with their cumulative fraction:
/// `latency_us<TAB>fraction`, one sample per line.
pub fn write_cdf<W: Write>(mut w: W, latencies_us: &[f64]) -> io::Result<()> {
    let mut sorted = latencies_us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    writeln!(w, "latency_us\tfraction")?;
    for (i, l) in sorted.iter().enumerate() {
        writeln!(w, "{l:.3}\t{:.6}", (i + 1) as f64 / n)?;
    }
    Ok(())
}

pub fn write_reports(dir: &Path, rows: &[ReportRow]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(std::fs::File::create(dir.join("metrics.csv"))?, rows)?;
    write_json(std::fs::File::create(dir.join("metrics.json"))?, rows)?;
    Ok(())
}
