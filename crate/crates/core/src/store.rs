//! Line-oriented text files for flows, metric series, events, ground truth
//! and forecaster snapshots.
//!
//! Tables are UTF-8, tab-separated, one record per line after a fixed header
//! line. Snapshots are `key=value` lines grouped under `[metric]` headings;
//! reals are written in shortest round-trip form.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::{Advisory, AdvisorySet, AnomalyEvent, FlagVector, Label, LabelSet};
use crate::flow::{FlowError, FlowRecord};
use crate::forecast::{HwParams, HwState};
use crate::metrics::{Metric, MetricVector};
use crate::sim::{AttackKind, GroundTruth, GroundTruthEntry};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: empty file, expected a header line", path.display())]
    Empty { path: PathBuf },
    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: invalid flow: {source}", path.display())]
    InvalidFlow {
        path: PathBuf,
        line: usize,
        source: FlowError,
    },
}

pub const FLOW_HEADER: &str = "src_addr\tdst_addr\tsrc_port\tdst_port\tprotocol\tflow_label\tfirst_time_ms\tlast_time_ms\toctets\tpackets";
pub const SERIES_HEADER: &str = "bin\ttotal_bytes\ttotal_packets\tdsocket\tdport";
pub const EVENT_HEADER: &str = "first_bin\tlast_bin\tlabels\tadvisories\tflags";
pub const TRUTH_HEADER: &str = "kind\tstart_bin\tend_bin";

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_table<T>(
    path: &Path,
    header: &str,
    rows: &[T],
    append: bool,
    format: impl Fn(&T) -> String,
) -> Result<usize, StoreError> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io_err(path))?;
    let fresh = file.metadata().map_err(io_err(path))?.len() == 0;
    let mut w = BufWriter::new(file);
    let mut write = || -> io::Result<()> {
        if fresh {
            writeln!(w, "{header}")?;
        }
        for row in rows {
            writeln!(w, "{}", format(row))?;
        }
        w.flush()
    };
    write().map_err(io_err(path))?;
    Ok(rows.len())
}

/// Reads a table, checking the header and field count of every line.
/// `parse` receives the 1-based line number and the fields.
fn read_table<T>(
    path: &Path,
    header: &str,
    mut parse: impl FnMut(usize, &[&str]) -> Result<T, StoreError>,
) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        None => return Err(StoreError::Empty { path: path.to_path_buf() }),
        Some(l) => l.map_err(io_err(path))?,
    };
    let parse_err = |line: usize, reason: String| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    if first != header {
        return Err(parse_err(1, format!("expected header `{}`", header.replace('\t', " "))));
    }
    let width = header.split('\t').count();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(io_err(path))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(parse_err(n, format!("expected {width} fields, found {}", fields.len())));
        }
        out.push(parse(n, &fields)?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T, StoreError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("{name} `{raw}`: {e}"),
    })
}

pub fn format_flow(f: &FlowRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        f.src_addr,
        f.dst_addr,
        f.src_port,
        f.dst_port,
        f.protocol,
        f.flow_label,
        f.first_time,
        f.last_time,
        f.octets,
        f.packets
    )
}

/// Writes flows; with `append`, adds to an existing log without repeating
/// the header. Returns the number of records written.
pub fn write_flow_log(records: &[FlowRecord], path: &Path, append: bool) -> Result<usize, StoreError> {
    write_table(path, FLOW_HEADER, records, append, format_flow)
}

pub fn read_flow_log(path: &Path) -> Result<Vec<FlowRecord>, StoreError> {
    read_table(path, FLOW_HEADER, |n, f| {
        let record = FlowRecord {
            src_addr: field(path, n, "src_addr", f[0])?,
            dst_addr: field(path, n, "dst_addr", f[1])?,
            src_port: field(path, n, "src_port", f[2])?,
            dst_port: field(path, n, "dst_port", f[3])?,
            protocol: field(path, n, "protocol", f[4])?,
            flow_label: field(path, n, "flow_label", f[5])?,
            first_time: field(path, n, "first_time_ms", f[6])?,
            last_time: field(path, n, "last_time_ms", f[7])?,
            octets: field(path, n, "octets", f[8])?,
            packets: field(path, n, "packets", f[9])?,
        };
        record.validate().map_err(|source| StoreError::InvalidFlow {
            path: path.to_path_buf(),
            line: n,
            source,
        })?;
        Ok(record)
    })
}

/// Appends flows to a log one batch at a time, writing the header once.
pub struct FlowLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FlowLogWriter {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let fresh = file.metadata().map_err(io_err(path))?.len() == 0;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{FLOW_HEADER}").map_err(io_err(path))?;
        }
        Ok(FlowLogWriter {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn write(&mut self, records: &[FlowRecord]) -> Result<(), StoreError> {
        let path = self.path.clone();
        for r in records {
            writeln!(self.out, "{}", format_flow(r)).map_err(io_err(&path))?;
        }
        self.out.flush().map_err(io_err(&path))
    }
}

pub fn format_metrics(v: &MetricVector) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        v.bin, v.total_bytes, v.total_packets, v.dsocket, v.dport
    )
}

pub fn write_series(series: &[MetricVector], path: &Path) -> Result<usize, StoreError> {
    write_table(path, SERIES_HEADER, series, false, format_metrics)
}

pub fn read_series(path: &Path) -> Result<Vec<MetricVector>, StoreError> {
    read_table(path, SERIES_HEADER, |n, f| {
        Ok(MetricVector {
            bin: field(path, n, "bin", f[0])?,
            total_bytes: field(path, n, "total_bytes", f[1])?,
            total_packets: field(path, n, "total_packets", f[2])?,
            dsocket: field(path, n, "dsocket", f[3])?,
            dport: field(path, n, "dport", f[4])?,
        })
    })
}

fn join_set<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let parts: Vec<String> = items.into_iter().map(|i| i.to_string()).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(",")
    }
}

fn split_set<T: Ord + std::str::FromStr<Err = String>>(raw: &str) -> Result<std::collections::BTreeSet<T>, String> {
    if raw == "-" {
        return Ok(Default::default());
    }
    raw.split(',').map(str::parse).collect()
}

/// One event-log line, also used for live output.
pub fn format_event(e: &AnomalyEvent) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        e.first_bin,
        e.last_bin,
        join_set(&e.labels),
        join_set(&e.advisories),
        e.flags.to_field()
    )
}

pub fn write_events(events: &[AnomalyEvent], path: &Path) -> Result<usize, StoreError> {
    write_table(path, EVENT_HEADER, events, false, format_event)
}

pub fn read_events(path: &Path) -> Result<Vec<AnomalyEvent>, StoreError> {
    read_table(path, EVENT_HEADER, |n, f| {
        let bad = |reason: String| StoreError::Parse {
            path: path.to_path_buf(),
            line: n,
            reason,
        };
        let first_bin: i64 = field(path, n, "first_bin", f[0])?;
        let last_bin: i64 = field(path, n, "last_bin", f[1])?;
        if last_bin < first_bin {
            return Err(bad(format!("last_bin {last_bin} precedes first_bin {first_bin}")));
        }
        let labels: LabelSet = split_set::<Label>(f[2]).map_err(|e| bad(format!("labels: {e}")))?;
        let advisories: AdvisorySet =
            split_set::<Advisory>(f[3]).map_err(|e| bad(format!("advisories: {e}")))?;
        let flags = FlagVector::parse_field(first_bin, f[4]).map_err(|e| bad(format!("flags: {e}")))?;
        Ok(AnomalyEvent {
            first_bin,
            last_bin,
            labels,
            advisories,
            flags,
        })
    })
}

pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<usize, StoreError> {
    write_table(path, TRUTH_HEADER, truth, false, |t| {
        format!("{}\t{}\t{}", t.kind, t.start_bin, t.end_bin)
    })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, StoreError> {
    read_table(path, TRUTH_HEADER, |n, f| {
        Ok(GroundTruthEntry {
            kind: field::<AttackKind>(path, n, "kind", f[0])?,
            start_bin: field(path, n, "start_bin", f[1])?,
            end_bin: field(path, n, "end_bin", f[2])?,
        })
    })
}

/// Parameters and state of one metric's forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSnapshot {
    pub metric: Metric,
    pub params: HwParams,
    pub state: HwState,
}

fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_snapshot(monitors: &[MonitorSnapshot]) -> String {
    let mut s = String::new();
    for m in monitors {
        let p = &m.params;
        let st = &m.state;
        s.push_str(&format!("[{}]\n", m.metric));
        for (k, v) in [
            ("alpha", p.alpha.to_string()),
            ("beta", p.beta.to_string()),
            ("gamma", p.gamma.to_string()),
            ("gamma_dev", p.gamma_dev.to_string()),
            ("delta", p.delta.to_string()),
            ("period", p.period.to_string()),
            ("floor_ratio", p.floor_ratio.to_string()),
            ("seasonal_mode", p.seasonal.as_str().to_string()),
            ("freeze_on_anomaly", p.freeze_on_anomaly.to_string()),
            ("baseline", st.baseline.to_string()),
            ("slope", st.slope.to_string()),
            ("t", st.t.to_string()),
            ("floor", st.floor.to_string()),
            ("seasonal", join_reals(&st.seasonal)),
            ("deviation", join_reals(&st.deviation)),
        ] {
            s.push_str(&format!("{k}={v}\n"));
        }
    }
    s
}

pub fn write_snapshot(monitors: &[MonitorSnapshot], path: &Path) -> Result<(), StoreError> {
    std::fs::write(path, format_snapshot(monitors)).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<Vec<MonitorSnapshot>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if text.is_empty() {
        return Err(StoreError::Empty { path: path.to_path_buf() });
    }
    parse_snapshot(&text).map_err(|(line, reason)| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

fn parse_snapshot(text: &str) -> Result<Vec<MonitorSnapshot>, (usize, String)> {
    type Block = (usize, Metric, Vec<(usize, String, String)>);
    let mut blocks: Vec<Block> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let metric: Metric = name.parse().map_err(|e: String| (n, e))?;
            blocks.push((n, metric, Vec::new()));
        } else if let Some((k, v)) = line.split_once('=') {
            let block = blocks.last_mut().ok_or((n, "key before any [metric] heading".to_string()))?;
            block.2.push((n, k.to_string(), v.to_string()));
        } else {
            return Err((n, format!("expected `key=value` or `[metric]`, found `{line}`")));
        }
    }
    blocks.into_iter().map(|(n, metric, kv)| parse_block(n, metric, &kv)).collect()
}

fn parse_block(heading: usize, metric: Metric, kv: &[(usize, String, String)]) -> Result<MonitorSnapshot, (usize, String)> {
    let get = |key: &str| -> Result<(usize, &str), (usize, String)> {
        kv.iter()
            .find(|(_, k, _)| k == key)
            .map(|(n, _, v)| (*n, v.as_str()))
            .ok_or((heading, format!("[{metric}] is missing `{key}`")))
    };
    fn val<T: std::str::FromStr>(key: &str, (n, raw): (usize, &str)) -> Result<T, (usize, String)>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse().map_err(|e| (n, format!("{key} `{raw}`: {e}")))
    }
    let reals = |key: &str| -> Result<Vec<f64>, (usize, String)> {
        let (n, raw) = get(key)?;
        raw.split(',').map(|x| val(key, (n, x))).collect()
    };
    if let Some((n, k, _)) = kv.iter().find(|(_, k, _)| {
        ![
            "alpha", "beta", "gamma", "gamma_dev", "delta", "period", "floor_ratio", "seasonal_mode",
            "freeze_on_anomaly", "baseline", "slope", "t", "floor", "seasonal", "deviation",
        ]
        .contains(&k.as_str())
    }) {
        return Err((*n, format!("unknown key `{k}`")));
    }
    let params = HwParams {
        alpha: val("alpha", get("alpha")?)?,
        beta: val("beta", get("beta")?)?,
        gamma: val("gamma", get("gamma")?)?,
        gamma_dev: val("gamma_dev", get("gamma_dev")?)?,
        delta: val("delta", get("delta")?)?,
        period: val("period", get("period")?)?,
        floor_ratio: val("floor_ratio", get("floor_ratio")?)?,
        seasonal: val("seasonal_mode", get("seasonal_mode")?)?,
        freeze_on_anomaly: val("freeze_on_anomaly", get("freeze_on_anomaly")?)?,
    };
    params.validate().map_err(|e| (heading, e.to_string()))?;
    let state = HwState {
        baseline: val("baseline", get("baseline")?)?,
        slope: val("slope", get("slope")?)?,
        t: val("t", get("t")?)?,
        floor: val("floor", get("floor")?)?,
        seasonal: reals("seasonal")?,
        deviation: reals("deviation")?,
    };
    if state.seasonal.len() != params.period || state.deviation.len() != params.period {
        return Err((heading, format!("[{metric}] rings must hold {} entries", params.period)));
    }
    if state.deviation.iter().any(|d| *d < 0.0) {
        return Err((heading, format!("[{metric}] deviation entries must be non-negative")));
    }
    Ok(MonitorSnapshot {
        metric,
        params,
        state,
    })
}
