//! Per-bin flow metrics: total bytes, total packets, `dsocket` and `dport`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use crate::flow::FlowRecord;

/// The four monitored series, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TotalBytes,
    TotalPackets,
    DSocket,
    DPort,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::TotalBytes,
        Metric::TotalPackets,
        Metric::DSocket,
        Metric::DPort,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::TotalBytes => "total_bytes",
            Metric::TotalPackets => "total_packets",
            Metric::DSocket => "dsocket",
            Metric::DPort => "dport",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// "Similar volume": flows whose `floor(log2(octets))` buckets differ by at
/// most `radius` are similar. A group of mutually similar flows therefore
/// spans at most `radius + 1` consecutive buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VolumeBucketing {
    pub radius: u32,
}

impl VolumeBucketing {
    pub fn new(radius: u32) -> Self {
        VolumeBucketing { radius }
    }

    pub fn bucket(&self, octets: u64) -> u32 {
        volume_bucket(octets)
    }

    pub fn similar(&self, a: u64, b: u64) -> bool {
        volume_bucket(a).abs_diff(volume_bucket(b)) <= self.radius
    }
}

/// `floor(log2(octets))`; zero maps to bucket 0.
pub fn volume_bucket(octets: u64) -> u32 {
    if octets == 0 {
        0
    } else {
        63 - octets.leading_zeros()
    }
}

/// The four metric values of one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricVector {
    pub bin: i64,
    pub total_bytes: u64,
    pub total_packets: u64,
    pub dsocket: u64,
    pub dport: u64,
}

impl MetricVector {
    pub fn empty(bin: i64) -> Self {
        MetricVector {
            bin,
            ..Default::default()
        }
    }

    pub fn get(&self, metric: Metric) -> u64 {
        match metric {
            Metric::TotalBytes => self.total_bytes,
            Metric::TotalPackets => self.total_packets,
            Metric::DSocket => self.dsocket,
            Metric::DPort => self.dport,
        }
    }

    pub fn values(&self) -> [u64; 4] {
        [self.total_bytes, self.total_packets, self.dsocket, self.dport]
    }
}

pub fn total_bytes(flows: &[FlowRecord]) -> u64 {
    flows.iter().map(|f| f.octets).sum()
}

pub fn total_packets(flows: &[FlowRecord]) -> u64 {
    flows.iter().map(|f| f.packets).sum()
}

/// Largest total weight inside any window of `radius + 1` consecutive
/// buckets.
fn max_window<W>(buckets: &BTreeMap<u32, W>, radius: u32, weight: impl Fn(&[&W]) -> u64) -> u64 {
    let mut best = 0;
    for &lo in buckets.keys() {
        let hi = lo.saturating_add(radius);
        let members: Vec<&W> = buckets.range(lo..=hi).map(|(_, w)| w).collect();
        best = best.max(weight(&members));
    }
    best
}

/// Largest number of similar-volume flows aimed at one destination socket
/// `(dst_addr, dst_port)`.
pub fn dsocket(flows: &[FlowRecord], bucketing: &VolumeBucketing) -> u64 {
    let mut sockets: HashMap<(IpAddr, u16), BTreeMap<u32, u64>> = HashMap::new();
    for f in flows {
        *sockets
            .entry((f.dst_addr, f.dst_port))
            .or_default()
            .entry(bucketing.bucket(f.octets))
            .or_default() += 1;
    }
    sockets
        .values()
        .map(|b| max_window(b, bucketing.radius, |ws| ws.iter().copied().sum()))
        .max()
        .unwrap_or(0)
}

/// Largest number of distinct destination ports reached by similar-volume
/// flows between one `(src_addr, dst_addr)` pair.
pub fn dport(flows: &[FlowRecord], bucketing: &VolumeBucketing) -> u64 {
    let mut pairs: HashMap<(IpAddr, IpAddr), BTreeMap<u32, HashSet<u16>>> = HashMap::new();
    for f in flows {
        pairs
            .entry((f.src_addr, f.dst_addr))
            .or_default()
            .entry(bucketing.bucket(f.octets))
            .or_default()
            .insert(f.dst_port);
    }
    pairs
        .values()
        .map(|b| {
            max_window(b, bucketing.radius, |sets| match sets {
                [only] => only.len() as u64,
                _ => {
                    let union: HashSet<u16> = sets.iter().flat_map(|s| s.iter().copied()).collect();
                    union.len() as u64
                }
            })
        })
        .max()
        .unwrap_or(0)
}

pub fn metric_vector(bin: i64, flows: &[FlowRecord], bucketing: &VolumeBucketing) -> MetricVector {
    MetricVector {
        bin,
        total_bytes: total_bytes(flows),
        total_packets: total_packets(flows),
        dsocket: dsocket(flows, bucketing),
        dport: dport(flows, bucketing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{PROTO_TCP, PROTO_UDP};
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn flow(src: [u8; 4], dst: [u8; 4], dst_port: u16, octets: u64, packets: u64) -> FlowRecord {
        FlowRecord {
            src_addr: IpAddr::V4(Ipv4Addr::from(src)),
            dst_addr: IpAddr::V4(Ipv4Addr::from(dst)),
            src_port: 40000,
            dst_port,
            protocol: PROTO_TCP,
            flow_label: 0,
            first_time: 0,
            last_time: 1000,
            octets,
            packets,
        }
    }

    /// Exhaustive oracle: every flow anchors a candidate group containing
    /// all flows with the same key whose bucket lies in
    /// `[bucket(anchor), bucket(anchor) + radius]`.
    fn oracle_dsocket(flows: &[FlowRecord], radius: u32) -> u64 {
        let mut best = 0;
        for anchor in flows {
            let lo = volume_bucket(anchor.octets);
            let n = flows
                .iter()
                .filter(|f| f.dst_addr == anchor.dst_addr && f.dst_port == anchor.dst_port)
                .filter(|f| {
                    let b = volume_bucket(f.octets);
                    b >= lo && b <= lo + radius
                })
                .count() as u64;
            best = best.max(n);
        }
        best
    }

    fn oracle_dport(flows: &[FlowRecord], radius: u32) -> u64 {
        let mut best = 0;
        for anchor in flows {
            let lo = volume_bucket(anchor.octets);
            let mut ports: Vec<u16> = flows
                .iter()
                .filter(|f| f.src_addr == anchor.src_addr && f.dst_addr == anchor.dst_addr)
                .filter(|f| {
                    let b = volume_bucket(f.octets);
                    b >= lo && b <= lo + radius
                })
                .map(|f| f.dst_port)
                .collect();
            ports.sort_unstable();
            ports.dedup();
            best = best.max(ports.len() as u64);
        }
        best
    }

    #[test]
    fn log2_buckets() {
        assert_eq!(volume_bucket(1), 0);
        assert_eq!(volume_bucket(40), 5);
        assert_eq!(volume_bucket(41), 5);
        assert_eq!(volume_bucket(63), 5);
        assert_eq!(volume_bucket(64), 6);
        assert_eq!(volume_bucket(5000), 12);
        assert_eq!(volume_bucket(5001), 12);
    }

    #[test]
    fn empty_bin_is_all_zero() {
        let v = metric_vector(7, &[], &VolumeBucketing::default());
        assert_eq!(v, MetricVector::empty(7));
    }

    #[test]
    fn totals() {
        let flows = [
            flow([1, 1, 1, 1], [10, 0, 0, 1], 80, 100, 1),
            flow([1, 1, 1, 2], [10, 0, 0, 1], 80, 250, 2),
            flow([1, 1, 1, 3], [10, 0, 0, 1], 80, 650, 3),
        ];
        assert_eq!(total_bytes(&flows), 1000);
        assert_eq!(total_packets(&flows), 6);
        let ones: Vec<_> = (1..=4).map(|k| flow([1, 1, 1, 1], [2, 2, 2, 2], 1, k, k)).collect();
        assert_eq!(total_bytes(&ones), total_packets(&ones));
    }

    #[test]
    fn dsocket_counts_largest_socket_cluster() {
        let b = VolumeBucketing::default();
        let mut flows: Vec<_> = (1..=5).map(|s| flow([192, 0, 2, s], [10, 0, 0, 1], 80, 60, 1)).collect();
        flows.push(flow([192, 0, 2, 9], [10, 0, 0, 1], 22, 60, 1));
        assert_eq!(oracle_dsocket(&flows, 0), 5);
        assert_eq!(dsocket(&flows, &b), 5);

        let split: Vec<_> = [40, 41, 5000, 5001]
            .into_iter()
            .map(|o| flow([192, 0, 2, 1], [10, 0, 0, 1], 80, o, 1))
            .collect();
        assert_eq!(oracle_dsocket(&split, 0), 2);
        assert_eq!(dsocket(&split, &b), 2);
    }

    #[test]
    fn dport_counts_distinct_ports() {
        let b = VolumeBucketing::default();
        let scan: Vec<_> = (1..=100).map(|p| flow([203, 0, 113, 5], [10, 0, 0, 1], p, 64, 2)).collect();
        assert_eq!(oracle_dport(&scan, 0), 100);
        assert_eq!(dport(&scan, &b), 100);

        let same: Vec<_> = (0..100).map(|_| flow([203, 0, 113, 5], [10, 0, 0, 1], 80, 64, 2)).collect();
        assert_eq!(oracle_dport(&same, 0), 1);
        assert_eq!(dport(&same, &b), 1);
    }

    #[test]
    fn radius_merges_neighbouring_buckets() {
        let flows: Vec<_> = [40, 70, 130, 300]
            .into_iter()
            .map(|o| flow([192, 0, 2, 1], [10, 0, 0, 1], 80, o, 1))
            .collect();
        // buckets 5, 6, 7, 8
        assert_eq!(dsocket(&flows, &VolumeBucketing::new(0)), 1);
        assert_eq!(dsocket(&flows, &VolumeBucketing::new(1)), 2);
        assert_eq!(dsocket(&flows, &VolumeBucketing::new(3)), 4);
        assert!(VolumeBucketing::new(0).similar(40, 41));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("bytes".parse::<Metric>().is_err());
    }

    fn arb_flow() -> impl Strategy<Value = FlowRecord> {
        (0u8..4, 0u8..3, 0u16..6, 1u64..20_000, 1u64..4, prop::bool::ANY).prop_map(
            |(s, d, port, octets, packets, udp)| {
                let mut f = flow([192, 0, 2, s], [10, 0, 0, d], port, octets.max(packets), packets);
                if udp {
                    f.protocol = PROTO_UDP;
                }
                f
            },
        )
    }

    proptest! {
        #[test]
        fn grouping_matches_oracle(flows in prop::collection::vec(arb_flow(), 0..200), radius in 0u32..3) {
            let b = VolumeBucketing::new(radius);
            prop_assert_eq!(dsocket(&flows, &b), oracle_dsocket(&flows, radius));
            prop_assert_eq!(dport(&flows, &b), oracle_dport(&flows, radius));
        }

        #[test]
        fn permutation_invariant(mut flows in prop::collection::vec(arb_flow(), 0..80), seed in any::<u64>()) {
            let b = VolumeBucketing::default();
            let before = metric_vector(0, &flows, &b);
            let n = flows.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    flows.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(metric_vector(0, &flows, &b), before);
        }

        #[test]
        fn adding_a_flow_never_decreases(flows in prop::collection::vec(arb_flow(), 0..80), extra in arb_flow()) {
            let b = VolumeBucketing::default();
            let before = metric_vector(0, &flows, &b);
            let mut more = flows.clone();
            more.push(extra);
            let after = metric_vector(0, &more, &b);
            for (x, y) in before.values().iter().zip(after.values()) {
                prop_assert!(y >= *x);
            }
        }

        #[test]
        fn dport_bounded_by_distinct_ports(flows in prop::collection::vec(arb_flow(), 0..80)) {
            let distinct: HashSet<u16> = flows.iter().map(|f| f.dst_port).collect();
            prop_assert!(dport(&flows, &VolumeBucketing::default()) <= distinct.len() as u64);
        }
    }
}
