//! Canonical flow record and time-bin arithmetic shared by every stage of
//! the pipeline.

use std::fmt;
use std::net::IpAddr;

use thiserror::Error;

/// Errors raised when a flow record or bin specification violates its
/// invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("last_time {last} precedes first_time {first}")]
    TimeOrder { first: u64, last: u64 },
    #[error("octets must be at least 1")]
    ZeroOctets,
    #[error("packets must be at least 1")]
    ZeroPackets,
    #[error("octets {octets} below packet count {packets}")]
    OctetsBelowPackets { octets: u64, packets: u64 },
    #[error("source and destination address families differ")]
    MixedFamily,
    #[error("bin width must be positive")]
    ZeroBinWidth,
}

/// IP address family of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressFamily {
    V4,
    V6,
}

impl AddressFamily {
    pub fn of(addr: &IpAddr) -> Self {
        match addr {
            IpAddr::V4(_) => AddressFamily::V4,
            IpAddr::V6(_) => AddressFamily::V6,
        }
    }
}

impl fmt::Display for AddressFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressFamily::V4 => f.write_str("v4"),
            AddressFamily::V6 => f.write_str("v6"),
        }
    }
}

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// One unidirectional flow as exported by a router.
///
/// Timestamps are unix epoch milliseconds. Port-less protocols such as ICMP
/// carry port 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowRecord {
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub flow_label: u32,
    pub first_time: u64,
    pub last_time: u64,
    pub octets: u64,
    pub packets: u64,
}

impl FlowRecord {
    /// Checks the record invariants: ordered timestamps, non-zero counters,
    /// at least one byte per packet and a single address family.
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.last_time < self.first_time {
            return Err(FlowError::TimeOrder {
                first: self.first_time,
                last: self.last_time,
            });
        }
        if self.octets == 0 {
            return Err(FlowError::ZeroOctets);
        }
        if self.packets == 0 {
            return Err(FlowError::ZeroPackets);
        }
        if self.octets < self.packets {
            return Err(FlowError::OctetsBelowPackets {
                octets: self.octets,
                packets: self.packets,
            });
        }
        if AddressFamily::of(&self.src_addr) != AddressFamily::of(&self.dst_addr) {
            return Err(FlowError::MixedFamily);
        }
        Ok(())
    }

    pub fn family(&self) -> AddressFamily {
        AddressFamily::of(&self.src_addr)
    }
}

/// Fixed-width time bins anchored at an epoch-aligned origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinSpec {
    width_secs: u64,
    origin_secs: i64,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            width_secs: 60,
            origin_secs: 0,
        }
    }
}

impl BinSpec {
    pub fn new(width_secs: u64, origin_secs: i64) -> Result<Self, FlowError> {
        if width_secs == 0 {
            return Err(FlowError::ZeroBinWidth);
        }
        Ok(BinSpec {
            width_secs,
            origin_secs,
        })
    }

    pub fn width_secs(&self) -> u64 {
        self.width_secs
    }

    pub fn origin_secs(&self) -> i64 {
        self.origin_secs
    }

    pub fn width_ms(&self) -> i64 {
        self.width_secs as i64 * 1000
    }

    /// Epoch milliseconds at which `bin` starts.
    pub fn bin_start_ms(&self, bin: i64) -> i64 {
        self.origin_secs * 1000 + bin * self.width_ms()
    }

    /// Index of the half-open bin `[start, start + width)` containing `t`.
    pub fn bin_index(&self, t_ms: u64) -> i64 {
        bin_index(t_ms, self)
    }
}

/// Maps an epoch-millisecond timestamp to its bin: `floor((t - origin) / width)`.
pub fn bin_index(t_ms: u64, spec: &BinSpec) -> i64 {
    let offset = t_ms as i128 - spec.origin_secs as i128 * 1000;
    offset.div_euclid(spec.width_ms() as i128) as i64
}

/// A flow belongs to the bin of its `last_time`, the moment the exporter
/// finalizes it.
pub fn assign_flow(record: &FlowRecord, spec: &BinSpec) -> i64 {
    bin_index(record.last_time, spec)
}
