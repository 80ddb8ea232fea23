use psmr_bench::report::{read_csv, write_cdf, write_csv, write_json, write_reports, ReportRow};

fn row(engine: &str, k: usize) -> ReportRow {
    ReportRow {
        engine: engine.into(),
        k,
        n_replicas: 2,
        clients: 8,
        mix: "read=1,update=0,insert=0,delete=0".into(),
        dependent_pct: 0.0,
        key_dist: "uniform".into(),
        seed: 1,
        throughput_cps: 1234.5,
        lat_mean_us: 10.0,
        lat_p50_us: 9.0,
        lat_p99_us: 30.0,
        per_thread_cps: 1234.5 / k as f64,
        tainted: false,
    }
}

#[test]
fn csv_columns_and_round_trip() {
    let rows = vec![row("psmr", 4), row("smr", 1)];
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "engine,k,n_replicas,clients,mix,dependent_pct,key_dist,seed,throughput_cps,lat_mean_us,lat_p50_us,lat_p99_us,per_thread_cps,tainted"
    );
    assert_eq!(lines.count(), 2);
    assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn json_is_an_array_of_rows() {
    let mut buf = Vec::new();
    write_json(&mut buf, &[row("spsmr", 2)]).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["engine"], "spsmr");
    assert_eq!(v[0]["k"], 2);
}

#[test]
fn cdf_is_sorted_and_ends_at_one() {
    let mut buf = Vec::new();
    write_cdf(&mut buf, &[5.0, 1.0, 3.0, 3.0]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("latency_us\tfraction"));
    let pts: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(pts.len(), 4);
    assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    assert_eq!(pts.last().unwrap().1, 1.0);
}

#[test]
fn reports_land_in_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_reports(dir.path(), &[row("norep", 4)]).unwrap();
    assert!(dir.path().join("metrics.csv").exists());
    assert!(dir.path().join("metrics.json").exists());
}
