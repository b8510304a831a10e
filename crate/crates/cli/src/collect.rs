//! Live collector: one thread receives and decodes datagrams, the caller's
//! thread bins, detects and writes, connected by a channel.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use anyhow::{Context, Result};

use flowguard::classify::AnomalyEvent;
use flowguard::config::RunConfig;
use flowguard::flow::FlowRecord;
use flowguard::pipeline::{snapshots, Binner, Detector, EVENTS_FILE, FLOWS_FILE, SERIES_FILE, SNAPSHOT_FILE};
use flowguard::store::{self, FlowLogWriter, EVENT_HEADER};
use flowguard::wire::{convert_v9_to_ipfix, IpfixDecoder, V9Decoder, WireError, NETFLOW_V9_VERSION};

#[derive(Debug, Clone, Copy, Default)]
pub struct Limits {
    pub max_datagrams: Option<u64>,
    pub idle_timeout: Option<Duration>,
}

/// Decoding state of one exporter session, for either protocol.
#[derive(Default)]
pub struct Ingest {
    ipfix: IpfixDecoder,
    v9: V9Decoder,
}

impl Ingest {
    /// Picks the protocol from the version field.
    pub fn decode(&mut self, datagram: &[u8]) -> Result<Vec<FlowRecord>, WireError> {
        let version = match datagram {
            [a, b, ..] => u16::from_be_bytes([*a, *b]),
            _ => {
                return Err(WireError::Truncated {
                    offset: 0,
                    needed: 2,
                    available: datagram.len(),
                })
            }
        };
        if version == NETFLOW_V9_VERSION {
            let (_, records) = self.v9.decode(datagram)?;
            Ok(records.iter().map(convert_v9_to_ipfix).collect())
        } else {
            // Other versions are rejected by the IPFIX decoder.
            Ok(self.ipfix.decode(datagram)?.records)
        }
    }
}

fn receive(socket: UdpSocket, limits: Limits, tx: mpsc::Sender<Vec<FlowRecord>>) {
    let mut ingest = Ingest::default();
    let mut buf = vec![0u8; 65536];
    let mut seen = 0u64;
    while limits.max_datagrams.is_none_or(|m| seen < m) {
        let (len, peer) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                log::info!("idle timeout reached");
                break;
            }
            Err(e) => {
                log::error!("receive failed: {e}");
                break;
            }
        };
        seen += 1;
        match ingest.decode(&buf[..len]) {
            Ok(records) => {
                if tx.send(records).is_err() {
                    break;
                }
            }
            Err(e) => log::warn!("skipping datagram {seen} from {peer}: {e}"),
        }
    }
}

fn emit(events: impl IntoIterator<Item = AnomalyEvent>, log: &mut BufWriter<File>) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for e in events {
        let line = store::format_event(&e);
        writeln!(out, "{line}")?;
        writeln!(log, "{line}")?;
    }
    out.flush()?;
    log.flush()
}

pub fn run(addr: SocketAddr, cfg: &RunConfig, out_dir: &Path, limits: Limits) -> Result<()> {
    let socket = UdpSocket::bind(addr).with_context(|| format!("binding {addr}"))?;
    socket.set_read_timeout(limits.idle_timeout)?;
    eprintln!("listening on {}", socket.local_addr()?);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut flows = FlowLogWriter::open(&out_dir.join(FLOWS_FILE))?;
    let events_path = out_dir.join(EVENTS_FILE);
    let mut events = BufWriter::new(File::create(&events_path).with_context(|| format!("creating {}", events_path.display()))?);
    writeln!(events, "{EVENT_HEADER}")?;

    let (tx, rx) = mpsc::channel();
    let receiver = thread::spawn(move || receive(socket, limits, tx));

    let mut binner = Binner::new(cfg.bins, cfg.lateness_secs);
    let mut detector = Detector::new(cfg.clone());
    let mut series = Vec::new();
    let mut analyse = |bins: Vec<(i64, Vec<FlowRecord>)>, events: &mut BufWriter<File>| -> Result<()> {
        for (bin, flows) in bins {
            let o = detector.push_flows(bin, &flows)?;
            series.push(o.metrics);
            emit(o.closed, events)?;
        }
        Ok(())
    };
    for batch in rx {
        flows.write(&batch)?;
        for f in batch {
            let released = binner.push(f);
            analyse(released, &mut events)?;
        }
    }
    let rest = binner.finish();
    analyse(rest, &mut events)?;
    emit(detector.finish(), &mut events)?;
    receiver.join().map_err(|_| anyhow::anyhow!("receiver thread panicked"))?;

    store::write_series(&series, &out_dir.join(SERIES_FILE))?;
    if let Some(states) = detector.states() {
        store::write_snapshot(&snapshots(cfg, states), &out_dir.join(SNAPSHOT_FILE))?;
    }
    if binner.dropped() > 0 {
        log::warn!("{} late flows were logged but left out of detection", binner.dropped());
    }
    Ok(())
}
