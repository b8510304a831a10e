//! Synthetic labeled traffic: a diurnal baseline plus scripted attacks.
//!
//! Generation is deterministic in the profile seed. The baseline and each
//! attack draw from separate ChaCha streams of that seed, so injecting an
//! attack never perturbs the baseline flows.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{BinSpec, FlowRecord, PROTO_ICMP, PROTO_TCP, PROTO_UDP};
use crate::metrics::volume_bucket;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid baseline profile: {0}")]
    InvalidProfile(String),
    #[error("attack {index}: {reason}")]
    InvalidAttack { index: usize, reason: String },
    #[error("attack {index}: bins {start}..{end} fall outside the stream's {n_bins} bins")]
    OutOfBounds {
        index: usize,
        start: u64,
        end: u64,
        n_bins: u64,
    },
    #[error("scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

/// One entry of the legitimate service mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Service {
    pub protocol: u8,
    pub port: u16,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineProfile {
    pub seed: u64,
    /// Epoch seconds of the first bin; a multiple of the bin width.
    pub start_secs: u64,
    pub bin_width_secs: u64,
    /// Bins per synthetic day.
    pub period_bins: u64,
    pub mean_flows_per_bin: f64,
    pub diurnal_amplitude: f64,
    /// Half-width of the uniform multiplicative noise on the per-bin count.
    pub noise: f64,
    pub median_bytes: f64,
    /// Sigma of the log-normal flow size.
    pub size_shape: f64,
    /// Per-flow mean packet size range; packets = ceil(octets / size).
    pub packet_size: [u64; 2],
    pub clients: u32,
    pub servers: Vec<IpAddr>,
    pub services: Vec<Service>,
}

impl Default for BaselineProfile {
    fn default() -> Self {
        BaselineProfile {
            seed: 1,
            start_secs: 1_700_000_040,
            bin_width_secs: 60,
            period_bins: 48,
            mean_flows_per_bin: 300.0,
            diurnal_amplitude: 0.4,
            noise: 0.05,
            median_bytes: 1500.0,
            size_shape: 1.0,
            packet_size: [200, 1200],
            clients: 400,
            servers: (1..=4).map(|i| IpAddr::V4(Ipv4Addr::new(10, 0, 0, i))).collect(),
            services: vec![
                Service { protocol: PROTO_TCP, port: 443, weight: 0.35 },
                Service { protocol: PROTO_TCP, port: 80, weight: 0.2 },
                Service { protocol: PROTO_TCP, port: 25, weight: 0.1 },
                Service { protocol: PROTO_TCP, port: 993, weight: 0.1 },
                Service { protocol: PROTO_TCP, port: 5432, weight: 0.1 },
                Service { protocol: PROTO_TCP, port: 21, weight: 0.05 },
                Service { protocol: PROTO_UDP, port: 53, weight: 0.1 },
            ],
        }
    }
}

impl BaselineProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidProfile(m));
        if self.bin_width_secs == 0 {
            return bad("bin_width_secs must be positive".into());
        }
        if !self.start_secs.is_multiple_of(self.bin_width_secs) {
            return bad(format!(
                "start_secs {} is not a multiple of bin_width_secs {}",
                self.start_secs, self.bin_width_secs
            ));
        }
        if self.period_bins == 0 {
            return bad("period_bins must be positive".into());
        }
        if !(self.mean_flows_per_bin > 0.0 && self.mean_flows_per_bin.is_finite()) {
            return bad("mean_flows_per_bin must be positive".into());
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal_amplitude must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)".into());
        }
        if !(self.median_bytes >= 1.0 && self.median_bytes.is_finite()) {
            return bad("median_bytes must be at least 1".into());
        }
        if !(self.size_shape >= 0.0 && self.size_shape.is_finite()) {
            return bad("size_shape must be non-negative".into());
        }
        let [lo, hi] = self.packet_size;
        if lo == 0 || lo > hi {
            return bad("packet_size must be a non-empty positive range".into());
        }
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        if self.servers.is_empty() {
            return bad("servers must not be empty".into());
        }
        if self.servers.iter().any(|s| s.is_ipv4() != self.servers[0].is_ipv4()) {
            return bad("servers must share one address family".into());
        }
        if self.services.is_empty()
            || self.services.iter().any(|s| !(s.weight > 0.0 && s.weight.is_finite()))
        {
            return bad("services must be non-empty with positive weights".into());
        }
        Ok(())
    }

    pub fn bin_spec(&self) -> BinSpec {
        BinSpec::new(self.bin_width_secs, 0).expect("validated width")
    }

    pub fn first_bin(&self) -> i64 {
        (self.start_secs / self.bin_width_secs) as i64
    }

    /// Expected flow count of relative bin `r` before noise:
    /// `mean * (1 + amplitude * sin(2 pi phase))`.
    pub fn expected_flows(&self, r: u64) -> f64 {
        let phase = (r % self.period_bins) as f64 / self.period_bins as f64;
        self.mean_flows_per_bin
            * (1.0 + self.diurnal_amplitude * (2.0 * std::f64::consts::PI * phase).sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    UdpFlood,
    IcmpFlood,
    DistributedFlood,
    TcpSyn,
    Portscan,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::UdpFlood,
        AttackKind::IcmpFlood,
        AttackKind::DistributedFlood,
        AttackKind::TcpSyn,
        AttackKind::Portscan,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::UdpFlood => "udp_flood",
            AttackKind::IcmpFlood => "icmp_flood",
            AttackKind::DistributedFlood => "distributed_flood",
            AttackKind::TcpSyn => "tcp_syn",
            AttackKind::Portscan => "portscan",
        }
    }

    pub fn is_flood(&self) -> bool {
        matches!(
            self,
            AttackKind::UdpFlood | AttackKind::IcmpFlood | AttackKind::DistributedFlood
        )
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown attack kind `{s}`"))
    }
}

/// A scripted attack. Bins are relative to the first bin of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub start_bin: u64,
    pub duration_bins: u64,
    pub flows_per_bin: u64,
    pub bytes_per_flow: u64,
    pub packets_per_flow: u64,
    #[serde(default = "one")]
    pub sources: u32,
    /// Inclusive destination port range; random ports for UDP floods,
    /// sequential ports for portscans.
    #[serde(default = "full_port_range")]
    pub port_range: [u16; 2],
    pub victim: SocketAddr,
}

fn one() -> u32 {
    1
}

fn full_port_range() -> [u16; 2] {
    [1, 65535]
}

impl AttackSpec {
    pub fn validate(&self, index: usize) -> Result<(), SimError> {
        let bad = |reason: &str| {
            Err(SimError::InvalidAttack {
                index,
                reason: reason.to_string(),
            })
        };
        if self.flows_per_bin == 0 && self.duration_bins > 0 {
            return bad("flows_per_bin must be positive");
        }
        if self.packets_per_flow == 0 || self.bytes_per_flow < self.packets_per_flow {
            return bad("need packets_per_flow >= 1 and bytes_per_flow >= packets_per_flow");
        }
        if self.sources == 0 {
            return bad("sources must be positive");
        }
        if self.port_range[0] > self.port_range[1] {
            return bad("port_range is empty");
        }
        match self.kind {
            AttackKind::DistributedFlood if self.sources < 2 => {
                bad("distributed_flood needs at least 2 sources")
            }
            AttackKind::TcpSyn if self.packets_per_flow > 3 => {
                bad("tcp_syn flows carry at most 3 packets")
            }
            AttackKind::Portscan if !(2..=3).contains(&self.packets_per_flow) => {
                bad("portscan flows carry 2 or 3 packets")
            }
            AttackKind::TcpSyn | AttackKind::Portscan if self.bytes_per_flow > 255 => {
                bad("tcp_syn and portscan flows must be small (at most 255 bytes)")
            }
            _ => Ok(()),
        }
    }
}

/// One labeled attack window in absolute bins, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroundTruthEntry {
    pub kind: AttackKind,
    pub start_bin: i64,
    pub end_bin: i64,
}

pub type GroundTruth = Vec<GroundTruthEntry>;

/// Generated flows, sorted by `(last_time, first_time)`, with the origin of
/// each flow: `None` for baseline traffic, `Some(i)` for the i-th injection.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStream {
    pub spec: BinSpec,
    pub first_bin: i64,
    pub n_bins: u64,
    pub seed: u64,
    pub flows: Vec<FlowRecord>,
    pub origins: Vec<Option<usize>>,
    injected: usize,
}

impl FlowStream {
    pub fn baseline_flows(&self) -> Vec<FlowRecord> {
        self.flows
            .iter()
            .zip(&self.origins)
            .filter(|(_, o)| o.is_none())
            .map(|(f, _)| f.clone())
            .collect()
    }

    fn bin_start_ms(&self, r: u64) -> u64 {
        self.spec.bin_start_ms(self.first_bin + r as i64) as u64
    }
}

fn time_key(f: &FlowRecord) -> (u64, u64) {
    (f.last_time, f.first_time)
}

/// Whole-second `(first, last)` timestamps inside the bin starting at `start_ms`.
fn bin_times(rng: &mut ChaCha8Rng, start_ms: u64, width_secs: u64) -> (u64, u64) {
    let last = rng.random_range(0..width_secs);
    let first = last - rng.random_range(0..=last.min(width_secs / 4));
    (start_ms + first * 1000, start_ms + last * 1000)
}

fn client_addr(i: u32, v4: bool) -> IpAddr {
    if v4 {
        IpAddr::V4(Ipv4Addr::new(192, 168, (i >> 8) as u8, i as u8))
    } else {
        IpAddr::V6(std::net::Ipv6Addr::new(0xfd00, 0, 0, 1, 0, 0, (i >> 16) as u16, i as u16))
    }
}

fn attacker_addr(i: u32, v4: bool) -> IpAddr {
    if v4 {
        IpAddr::V4(Ipv4Addr::new(203, 0, (113 + (i >> 8)) as u8, i as u8))
    } else {
        IpAddr::V6(std::net::Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, (i >> 16) as u16, i as u16))
    }
}

/// Seasonal legitimate traffic over `n_bins` bins.
pub fn gen_baseline(profile: &BaselineProfile, n_bins: u64) -> Result<FlowStream, SimError> {
    profile.validate()?;
    if n_bins == 0 {
        return Err(SimError::InvalidProfile("n_bins must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let size = LogNormal::new(profile.median_bytes.ln(), profile.size_shape)
        .map_err(|e| SimError::InvalidProfile(e.to_string()))?;
    let total_weight: f64 = profile.services.iter().map(|s| s.weight).sum();
    let v4 = profile.servers[0].is_ipv4();
    let spec = profile.bin_spec();
    let first_bin = profile.first_bin();

    let mut flows = Vec::new();
    for r in 0..n_bins {
        let start_ms = spec.bin_start_ms(first_bin + r as i64) as u64;
        let noise = 1.0 + profile.noise * rng.random_range(-1.0..=1.0);
        let count = (profile.expected_flows(r) * noise).round().max(0.0) as u64;
        let mut bin = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut pick = rng.random_range(0.0..total_weight);
            let service = profile
                .services
                .iter()
                .find(|s| {
                    pick -= s.weight;
                    pick < 0.0
                })
                .unwrap_or(&profile.services[profile.services.len() - 1]);
            let server = profile.servers[rng.random_range(0..profile.servers.len())];
            let client = client_addr(rng.random_range(0..profile.clients), v4);
            let octets = (size.sample(&mut rng).round() as u64).max(1);
            let pkt = rng.random_range(profile.packet_size[0]..=profile.packet_size[1]);
            let packets = octets.div_ceil(pkt).clamp(1, octets);
            let (first_time, last_time) = bin_times(&mut rng, start_ms, profile.bin_width_secs);
            let (src_port, dst_port) = if service.protocol == PROTO_ICMP {
                (0, 0)
            } else {
                (rng.random_range(49152..=65535), service.port)
            };
            bin.push(FlowRecord {
                src_addr: client,
                dst_addr: server,
                src_port,
                dst_port,
                protocol: service.protocol,
                flow_label: 0,
                first_time,
                last_time,
                octets,
                packets,
            });
        }
        bin.sort_by_key(time_key);
        flows.extend(bin);
    }
    let origins = vec![None; flows.len()];
    Ok(FlowStream {
        spec,
        first_bin,
        n_bins,
        seed: profile.seed,
        flows,
        origins,
        injected: 0,
    })
}

/// Octets near `base`, kept inside `base`'s volume bucket.
fn near(rng: &mut ChaCha8Rng, base: u64, spread: u64) -> u64 {
    let bucket = volume_bucket(base);
    let top = if bucket >= 63 { u64::MAX } else { (1u64 << (bucket + 1)) - 1 };
    rng.random_range(base..=base.saturating_add(spread).min(top))
}

fn attack_flows(stream: &FlowStream, spec: &AttackSpec, rng: &mut ChaCha8Rng) -> Vec<FlowRecord> {
    let v4 = spec.victim.is_ipv4();
    let victim = spec.victim.ip();
    let width = stream.spec.width_secs();
    let [port_lo, port_hi] = spec.port_range;
    let port_span = (port_hi - port_lo) as u64 + 1;
    let mut out = Vec::new();
    let mut scanned = 0u64;
    for r in spec.start_bin..spec.start_bin + spec.duration_bins {
        let start_ms = stream.bin_start_ms(r);
        for i in 0..spec.flows_per_bin {
            let source = attacker_addr((i % spec.sources as u64) as u32, v4);
            let (first_time, last_time) = bin_times(rng, start_ms, width);
            let flow = |src_port, dst_port, protocol, octets, packets| FlowRecord {
                src_addr: source,
                dst_addr: victim,
                src_port,
                dst_port,
                protocol,
                flow_label: 0,
                first_time,
                last_time,
                octets,
                packets,
            };
            let jitter = |rng: &mut ChaCha8Rng, v: u64| {
                let d = v / 20;
                rng.random_range(v - d..=v + d).max(1)
            };
            let record = match spec.kind {
                AttackKind::UdpFlood | AttackKind::DistributedFlood => {
                    let packets = jitter(rng, spec.packets_per_flow);
                    let octets = jitter(rng, spec.bytes_per_flow).max(packets);
                    let dst_port = port_lo + rng.random_range(0..port_span) as u16;
                    flow(rng.random_range(1024..=65535), dst_port, PROTO_UDP, octets, packets)
                }
                AttackKind::IcmpFlood => {
                    let packets = jitter(rng, spec.packets_per_flow);
                    let octets = jitter(rng, spec.bytes_per_flow).max(packets);
                    flow(0, 0, PROTO_ICMP, octets, packets)
                }
                AttackKind::TcpSyn => {
                    let octets = near(rng, spec.bytes_per_flow, 8);
                    let src_port = rng.random_range(1024..=65535);
                    flow(src_port, spec.victim.port(), PROTO_TCP, octets, spec.packets_per_flow)
                }
                AttackKind::Portscan => {
                    let dst_port = port_lo + (scanned % port_span) as u16;
                    scanned += 1;
                    let octets = near(rng, spec.bytes_per_flow, 4);
                    flow(rng.random_range(1024..=65535), dst_port, PROTO_TCP, octets, spec.packets_per_flow)
                }
            };
            out.push(record);
        }
    }
    out
}

/// Adds an attack to the stream. Returns its ground-truth entry, or `None`
/// for a zero-duration spec.
pub fn inject(stream: &mut FlowStream, spec: &AttackSpec) -> Result<Option<GroundTruthEntry>, SimError> {
    let index = stream.injected;
    spec.validate(index)?;
    let end = spec.start_bin.saturating_add(spec.duration_bins);
    if end > stream.n_bins {
        return Err(SimError::OutOfBounds {
            index,
            start: spec.start_bin,
            end,
            n_bins: stream.n_bins,
        });
    }
    stream.injected += 1;
    if spec.duration_bins == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream.seed);
    rng.set_stream(index as u64 + 1);
    let mut attack = attack_flows(stream, spec, &mut rng);
    attack.sort_by_key(time_key);

    let old_flows = std::mem::take(&mut stream.flows);
    let old_origins = std::mem::take(&mut stream.origins);
    let mut base = old_flows.into_iter().zip(old_origins).peekable();
    let mut extra = attack.into_iter().peekable();
    loop {
        let take_base = match (base.peek(), extra.peek()) {
            (Some((b, _)), Some(a)) => time_key(b) <= time_key(a),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_base {
            let (f, o) = base.next().expect("peeked");
            stream.flows.push(f);
            stream.origins.push(o);
        } else {
            stream.flows.push(extra.next().expect("peeked"));
            stream.origins.push(Some(index));
        }
    }
    let first = stream.first_bin + spec.start_bin as i64;
    Ok(Some(GroundTruthEntry {
        kind: spec.kind,
        start_bin: first,
        end_bin: first + spec.duration_bins as i64 - 1,
    }))
}

/// A baseline profile plus its attack script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_bins: u64,
    #[serde(default)]
    pub baseline: BaselineProfile,
    #[serde(default, rename = "attack")]
    pub attacks: Vec<AttackSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.baseline.validate()?;
        for (i, a) in scenario.attacks.iter().enumerate() {
            a.validate(i)?;
        }
        Ok(scenario)
    }

    pub fn run(&self) -> Result<(FlowStream, GroundTruth), SimError> {
        run_scenario(&self.baseline, &self.attacks, self.n_bins)
    }
}

/// Baseline generation followed by every injection, in order. Ground truth
/// comes back sorted.
pub fn run_scenario(
    profile: &BaselineProfile,
    specs: &[AttackSpec],
    n_bins: u64,
) -> Result<(FlowStream, GroundTruth), SimError> {
    let mut stream = gen_baseline(profile, n_bins)?;
    let mut truth = Vec::new();
    for spec in specs {
        truth.extend(inject(&mut stream, spec)?);
    }
    truth.sort();
    Ok((stream, truth))
}
