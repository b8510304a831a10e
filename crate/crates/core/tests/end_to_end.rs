use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use flowguard::classify::Label;
use flowguard::config::RunConfig;
use flowguard::flow::{AddressFamily, FlowRecord};
use flowguard::pipeline::{detect, replay, EVENTS_FILE, SERIES_FILE};
use flowguard::report::score;
use flowguard::sim::{AttackKind, AttackSpec, BaselineProfile, Scenario};
use flowguard::store;
use flowguard::wire::{convert_v9_to_ipfix, decode_ipfix, decode_netflow_v9, encode_ipfix, encode_netflow_v9, IpfixMessageHeader, NetflowV9Header};
use proptest::prelude::*;

fn config() -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
        [forecast.total_bytes]
        floor_ratio = 0.2
        [forecast.total_packets]
        floor_ratio = 0.2
        [forecast.dsocket]
        floor_ratio = 0.5
        [forecast.dport]
        floor_ratio = 0.5
        "#,
    )
    .unwrap();
    cfg.set_period(12);
    cfg
}

fn scenario() -> Scenario {
    let attack = |kind, start_bin, flows_per_bin, bytes_per_flow, packets_per_flow, victim: &str| AttackSpec {
        kind,
        start_bin,
        duration_bins: 2,
        flows_per_bin,
        bytes_per_flow,
        packets_per_flow,
        sources: 1,
        port_range: [1, 1024],
        victim: victim.parse().unwrap(),
    };
    Scenario {
        n_bins: 60,
        baseline: BaselineProfile {
            period_bins: 12,
            mean_flows_per_bin: 200.0,
            size_shape: 0.6,
            ..Default::default()
        },
        attacks: vec![
            attack(AttackKind::UdpFlood, 30, 1, 3_000_000, 6000, "10.0.0.2:0"),
            attack(AttackKind::TcpSyn, 40, 300, 44, 1, "10.0.0.1:80"),
            attack(AttackKind::Portscan, 50, 60, 88, 2, "10.0.0.4:0"),
        ],
    }
}

#[test]
fn simulated_attacks_are_labelled() {
    let (stream, truth) = scenario().run().unwrap();
    let out = detect(stream.flows, &config()).unwrap();
    let scoring = score(&out.episodes, &truth);
    for kind in [AttackKind::UdpFlood, AttackKind::TcpSyn, AttackKind::Portscan] {
        let row = scoring.row(kind);
        assert_eq!((row.detected, row.inserted), (1, 1), "{kind}");
    }
    assert_eq!(scoring.false_positives, 0, "{:?}", out.episodes);
    assert!(out.episodes.iter().all(|e| !e.labels.contains(&Label::Other)));
}

#[test]
fn replay_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let (stream, _) = scenario().run().unwrap();
    let log = dir.path().join("flows.tsv");
    store::write_flow_log(&stream.flows, &log, false).unwrap();
    let cfg = config();
    let direct = detect(stream.flows, &cfg).unwrap();
    let replayed = replay(&log, &cfg, dir.path()).unwrap();
    assert_eq!(direct, replayed);
    assert_eq!(store::read_events(&dir.path().join(EVENTS_FILE)).unwrap(), direct.episodes);
    assert_eq!(store::read_series(&dir.path().join(SERIES_FILE)).unwrap(), direct.series);
}

fn arb_flow(v6: bool) -> impl Strategy<Value = FlowRecord> {
    (
        any::<(u128, u128, u16, u16, u8)>(),
        0u32..1 << 20,
        1_700_000_000u64..1_701_000_000,
        0u64..86_400,
        1u64..=u32::MAX as u64,
        1u64..1000,
    )
        .prop_map(move |((s, d, sp, dp, proto), label, first, dur, octets, pkts)| {
            let (src_addr, dst_addr, flow_label) = if v6 {
                (IpAddr::V6(Ipv6Addr::from(s)), IpAddr::V6(Ipv6Addr::from(d)), label)
            } else {
                (IpAddr::V4(Ipv4Addr::from(s as u32)), IpAddr::V4(Ipv4Addr::from(d as u32)), 0)
            };
            FlowRecord {
                src_addr,
                dst_addr,
                src_port: sp,
                dst_port: dp,
                protocol: proto,
                flow_label,
                first_time: first * 1000,
                last_time: (first + dur) * 1000,
                octets,
                packets: pkts.min(octets),
            }
        })
}

fn arb_batch() -> impl Strategy<Value = (bool, Vec<FlowRecord>)> {
    any::<bool>().prop_flat_map(|v6| (Just(v6), prop::collection::vec(arb_flow(v6), 0..30)))
}

proptest! {
    #[test]
    fn both_codecs_agree((v6, flows) in arb_batch(), lag in 0u32..3600) {
        let family = if v6 { AddressFamily::V6 } else { AddressFamily::V4 };
        let export = flows.iter().map(|f| (f.last_time / 1000) as u32).max().unwrap_or(1_700_000_000) + lag;
        let ipfix = encode_ipfix(&flows, &IpfixMessageHeader::new(export, 1, 2), family).unwrap();
        prop_assert_eq!(&decode_ipfix(&ipfix).unwrap().records, &flows);

        let header = NetflowV9Header::new(u32::MAX, export, 1, 2);
        let v9 = encode_netflow_v9(&flows, &header, family).unwrap();
        let back: Vec<FlowRecord> = decode_netflow_v9(&v9).unwrap().iter().map(convert_v9_to_ipfix).collect();
        prop_assert_eq!(back, flows);
    }
}
