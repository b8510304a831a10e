use std::collections::HashMap;
use std::net::IpAddr;

use crate::flow::{AddressFamily, FlowRecord};

use super::{
    element, for_each_record, parse_templates, put_addr, put_uint, FieldSpec, Reader,
    TemplateRecord, WireError,
};

pub const NETFLOW_V9_VERSION: u16 = 9;
pub const V9_HEADER_LEN: usize = 20;
const TEMPLATE_FLOWSET_ID: u16 = 0;
const OPTIONS_FLOWSET_ID: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetflowV9Header {
    pub version: u16,
    pub count: u16,
    /// Milliseconds since the exporter booted.
    pub sys_uptime: u32,
    /// Export time, unix epoch seconds.
    pub unix_secs: u32,
    pub sequence: u32,
    pub source_id: u32,
}

impl NetflowV9Header {
    pub fn new(sys_uptime: u32, unix_secs: u32, sequence: u32, source_id: u32) -> Self {
        NetflowV9Header {
            version: NETFLOW_V9_VERSION,
            count: 0,
            sys_uptime,
            unix_secs,
            sequence,
            source_id,
        }
    }

    fn parse(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let version = r.u16()?;
        if version != NETFLOW_V9_VERSION {
            return Err(WireError::Version {
                found: version,
                expected: NETFLOW_V9_VERSION,
            });
        }
        Ok(NetflowV9Header {
            version,
            count: r.u16()?,
            sys_uptime: r.u32()?,
            unix_secs: r.u32()?,
            sequence: r.u32()?,
            source_id: r.u32()?,
        })
    }
}

/// Flow timing as carried by a v9 record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V9Timestamps {
    /// FIRST_SWITCHED / LAST_SWITCHED in exporter uptime milliseconds, with
    /// the packet header values needed to rebase them.
    Uptime {
        first_switched: u32,
        last_switched: u32,
        sys_uptime: u32,
        unix_secs: u32,
    },
    /// Already epoch milliseconds.
    Absolute { first_ms: u64, last_ms: u64 },
}

/// A v9 data record reduced to the fields the detector needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct V9Record {
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub flow_label: u32,
    pub octets: u64,
    pub packets: u64,
    pub timestamps: V9Timestamps,
}

fn rebase(export_secs: u32, sys_uptime: u32, switched: u32) -> u64 {
    let export_ms = export_secs as u64 * 1000;
    // Wrapping keeps the age right across a 32-bit uptime rollover.
    let age = sys_uptime.wrapping_sub(switched) as u64;
    export_ms.saturating_sub(age)
}

/// Maps a decoded v9 record onto the canonical flow record. Counters, ports
/// and addresses are copied; uptime timestamps become epoch milliseconds.
pub fn convert_v9_to_ipfix(record: &V9Record) -> FlowRecord {
    let (first_time, last_time) = match record.timestamps {
        V9Timestamps::Uptime {
            first_switched,
            last_switched,
            sys_uptime,
            unix_secs,
        } => (
            rebase(unix_secs, sys_uptime, first_switched),
            rebase(unix_secs, sys_uptime, last_switched),
        ),
        V9Timestamps::Absolute { first_ms, last_ms } => (first_ms, last_ms),
    };
    FlowRecord {
        src_addr: record.src_addr,
        dst_addr: record.dst_addr,
        src_port: record.src_port,
        dst_port: record.dst_port,
        protocol: record.protocol,
        flow_label: record.flow_label,
        first_time,
        last_time,
        octets: record.octets,
        packets: record.packets,
    }
}

/// Template-caching v9 decoder for one exporter stream.
#[derive(Debug, Default)]
pub struct V9Decoder {
    templates: HashMap<(u32, u16), TemplateRecord>,
}

impl V9Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decode(&mut self, bytes: &[u8]) -> Result<(NetflowV9Header, Vec<V9Record>), WireError> {
        let mut r = Reader::new(bytes, 0);
        let header = NetflowV9Header::parse(&mut r)?;
        let mut records = Vec::new();
        while r.remaining() > 0 {
            if r.remaining() < 4 {
                // Trailing pad after the last flowset.
                break;
            }
            let set_offset = r.offset();
            let set_id = r.u16()?;
            let set_length = r.u16()? as usize;
            if set_length < 4 {
                return Err(WireError::InvalidSet {
                    offset: set_offset,
                    reason: format!("flowset length {set_length} below 4"),
                });
            }
            let payload = r.take(set_length - 4).map_err(|_| WireError::Truncated {
                offset: set_offset,
                needed: set_length,
                available: bytes.len() - set_offset,
            })?;
            let mut body = Reader::new(payload, set_offset + 4);
            match set_id {
                TEMPLATE_FLOWSET_ID => {
                    for t in parse_templates(&mut body, false)? {
                        self.templates.insert((header.source_id, t.template_id), t);
                    }
                }
                OPTIONS_FLOWSET_ID => {}
                id if id >= 256 => {
                    let template = self
                        .templates
                        .get(&(header.source_id, id))
                        .ok_or(WireError::UnknownTemplate { template_id: id })?;
                    for_each_record(&mut body, template, |fields| {
                        let index = records.len();
                        let (src_addr, dst_addr) = fields.require_addrs()?;
                        let (octets, packets) = fields.require_counters()?;
                        let timestamps = match (fields.first_switched, fields.last_switched) {
                            (None, None) => {
                                let export_ms = header.unix_secs as u64 * 1000;
                                V9Timestamps::Absolute {
                                    first_ms: fields.start_ms.unwrap_or(export_ms),
                                    last_ms: fields.end_ms.unwrap_or(export_ms),
                                }
                            }
                            (first, last) => {
                                let first = first.or(last).unwrap_or_default() as u32;
                                let last = last.or(Some(first as u64)).unwrap_or_default() as u32;
                                V9Timestamps::Uptime {
                                    first_switched: first,
                                    last_switched: last,
                                    sys_uptime: header.sys_uptime,
                                    unix_secs: header.unix_secs,
                                }
                            }
                        };
                        let rec = V9Record {
                            src_addr,
                            dst_addr,
                            src_port: fields.src_port.unwrap_or(0),
                            dst_port: fields.dst_port.unwrap_or(0),
                            protocol: fields.protocol.or(fields.next_header).unwrap_or(0),
                            flow_label: fields.flow_label.unwrap_or(0),
                            octets,
                            packets,
                            timestamps,
                        };
                        convert_v9_to_ipfix(&rec)
                            .validate()
                            .map_err(|source| WireError::InvalidRecord { index, source })?;
                        records.push(rec);
                        Ok(())
                    })?;
                }
                _ => {}
            }
        }
        Ok((header, records))
    }
}

/// Decodes one self-contained v9 export packet.
pub fn decode_netflow_v9(bytes: &[u8]) -> Result<Vec<V9Record>, WireError> {
    V9Decoder::new().decode(bytes).map(|(_, records)| records)
}

fn v9_template(family: AddressFamily) -> TemplateRecord {
    use element::*;
    let mut field_specs = match family {
        AddressFamily::V4 => vec![
            FieldSpec::new(SOURCE_IPV4_ADDRESS, 4),
            FieldSpec::new(DESTINATION_IPV4_ADDRESS, 4),
        ],
        AddressFamily::V6 => vec![
            FieldSpec::new(SOURCE_IPV6_ADDRESS, 16),
            FieldSpec::new(DESTINATION_IPV6_ADDRESS, 16),
            FieldSpec::new(FLOW_LABEL_IPV6, 3),
        ],
    };
    field_specs.extend([
        FieldSpec::new(SOURCE_TRANSPORT_PORT, 2),
        FieldSpec::new(DESTINATION_TRANSPORT_PORT, 2),
        FieldSpec::new(PROTOCOL_IDENTIFIER, 1),
        FieldSpec::new(OCTET_DELTA_COUNT, 4),
        FieldSpec::new(PACKET_DELTA_COUNT, 4),
        FieldSpec::new(FIRST_SWITCHED, 4),
        FieldSpec::new(LAST_SWITCHED, 4),
    ]);
    TemplateRecord {
        template_id: 256,
        field_specs,
    }
}

/// Encodes records as a v9 export packet with standard field lengths.
/// Record times must lie within the exporter uptime window ending at the
/// header's export time.
pub fn encode_netflow_v9(
    records: &[FlowRecord],
    header: &NetflowV9Header,
    family: AddressFamily,
) -> Result<Vec<u8>, WireError> {
    let template = v9_template(family);
    let mut out = Vec::new();
    put_uint(&mut out, NETFLOW_V9_VERSION as u64, 2);
    put_uint(&mut out, (records.len() + 1) as u64, 2);
    put_uint(&mut out, header.sys_uptime as u64, 4);
    put_uint(&mut out, header.unix_secs as u64, 4);
    put_uint(&mut out, header.sequence as u64, 4);
    put_uint(&mut out, header.source_id as u64, 4);

    put_uint(&mut out, TEMPLATE_FLOWSET_ID as u64, 2);
    put_uint(&mut out, (8 + 4 * template.field_specs.len()) as u64, 2);
    put_uint(&mut out, template.template_id as u64, 2);
    put_uint(&mut out, template.field_specs.len() as u64, 2);
    for f in &template.field_specs {
        put_uint(&mut out, f.element_id as u64, 2);
        put_uint(&mut out, f.field_length as u64, 2);
    }

    if records.is_empty() {
        return Ok(out);
    }
    let export_ms = header.unix_secs as u64 * 1000;
    let to_switched = |index: usize, field: &'static str, t: u64| {
        let age = export_ms.checked_sub(t).filter(|a| *a <= header.sys_uptime as u64);
        age.map(|a| header.sys_uptime - a as u32)
            .ok_or(WireError::EncodeRange {
                index,
                field,
                value: t,
            })
    };
    let set_start = out.len();
    put_uint(&mut out, template.template_id as u64, 2);
    put_uint(&mut out, 0, 2);
    for (index, rec) in records.iter().enumerate() {
        if rec.family() != family {
            return Err(WireError::FamilyMismatch {
                index,
                expected: family,
                found: rec.family(),
            });
        }
        rec.validate()
            .map_err(|source| WireError::InvalidRecord { index, source })?;
        for (field, value) in [("octets", rec.octets), ("packets", rec.packets)] {
            if value > u32::MAX as u64 {
                return Err(WireError::EncodeRange { index, field, value });
            }
        }
        if rec.flow_label > 0xFF_FFFF {
            return Err(WireError::EncodeRange {
                index,
                field: "flow_label",
                value: rec.flow_label as u64,
            });
        }
        put_addr(&mut out, &rec.src_addr);
        put_addr(&mut out, &rec.dst_addr);
        if family == AddressFamily::V6 {
            put_uint(&mut out, rec.flow_label as u64, 3);
        }
        put_uint(&mut out, rec.src_port as u64, 2);
        put_uint(&mut out, rec.dst_port as u64, 2);
        put_uint(&mut out, rec.protocol as u64, 1);
        put_uint(&mut out, rec.octets, 4);
        put_uint(&mut out, rec.packets, 4);
        put_uint(&mut out, to_switched(index, "first_time", rec.first_time)? as u64, 4);
        put_uint(&mut out, to_switched(index, "last_time", rec.last_time)? as u64, 4);
    }
    while (out.len() - set_start) % 4 != 0 {
        out.push(0);
    }
    let set_len = out.len() - set_start;
    if set_len > u16::MAX as usize {
        return Err(WireError::MessageTooLarge { length: out.len() });
    }
    out[set_start + 2..set_start + 4].copy_from_slice(&(set_len as u16).to_be_bytes());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPORT: u32 = 1_700_000_000;
    const UPTIME: u32 = 3_600_000;

    /// Hand-assembled v9 packet: one template flowset (id 0) followed by a
    /// data flowset with one IPv4 TCP record, laid out per the public v9
    /// format (20-byte header, type/length pairs, big-endian values).
    fn hand_packet() -> Vec<u8> {
        let mut p: Vec<u8> = vec![
            0x00, 0x09, // version 9
            0x00, 0x02, // count: template + 1 record
            0x00, 0x36, 0xEE, 0x80, // sys_uptime 3_600_000 ms
            0x65, 0x53, 0xF1, 0x00, // unix_secs 1_700_000_000
            0x00, 0x00, 0x00, 0x2A, // sequence 42
            0x00, 0x00, 0x00, 0x01, // source id 1
            // template flowset, 8 + 9 * 4 = 44 bytes
            0x00, 0x00, 0x00, 0x2C, //
            0x01, 0x00, 0x00, 0x09, // template 256, 9 fields
            0x00, 0x08, 0x00, 0x04, // IPV4_SRC_ADDR
            0x00, 0x0C, 0x00, 0x04, // IPV4_DST_ADDR
            0x00, 0x07, 0x00, 0x02, // L4_SRC_PORT
            0x00, 0x0B, 0x00, 0x02, // L4_DST_PORT
            0x00, 0x04, 0x00, 0x01, // PROTOCOL
            0x00, 0x01, 0x00, 0x04, // IN_BYTES
            0x00, 0x02, 0x00, 0x04, // IN_PKTS
            0x00, 0x16, 0x00, 0x04, // FIRST_SWITCHED
            0x00, 0x15, 0x00, 0x04, // LAST_SWITCHED
        ];
        // data flowset: 4 header + 29 record + 3 pad = 36 bytes
        p.extend_from_slice(&[0x01, 0x00, 0x00, 0x24]);
        p.extend_from_slice(&[192, 0, 2, 10, 10, 0, 0, 1]);
        p.extend_from_slice(&[0xC3, 0x50, 0x00, 0x50]); // 50000 -> 80
        p.push(6);
        p.extend_from_slice(&[0x00, 0x00, 0x05, 0xDC]); // 1500 bytes
        p.extend_from_slice(&[0x00, 0x00, 0x00, 0x05]); // 5 packets
        p.extend_from_slice(&[0x00, 0x36, 0xE6, 0xB0]); // uptime - 2000
        p.extend_from_slice(&[0x00, 0x36, 0xEA, 0x98]); // uptime - 1000
        p.extend_from_slice(&[0, 0, 0]);
        p
    }

    #[test]
    fn decodes_hand_built_packet() {
        let records = decode_netflow_v9(&hand_packet()).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.src_addr, "192.0.2.10".parse::<IpAddr>().unwrap());
        assert_eq!(r.dst_addr, "10.0.0.1".parse::<IpAddr>().unwrap());
        assert_eq!((r.src_port, r.dst_port, r.protocol), (50000, 80, 6));
        assert_eq!((r.octets, r.packets), (1500, 5));
        assert_eq!(r.flow_label, 0);
        assert_eq!(
            r.timestamps,
            V9Timestamps::Uptime {
                first_switched: UPTIME - 2000,
                last_switched: UPTIME - 1000,
                sys_uptime: UPTIME,
                unix_secs: EXPORT,
            }
        );
    }

    #[test]
    fn conversion_rebases_onto_export_time() {
        let records = decode_netflow_v9(&hand_packet()).unwrap();
        let flow = convert_v9_to_ipfix(&records[0]);
        let e = EXPORT as u64 * 1000;
        assert_eq!(flow.first_time, e - 2000);
        assert_eq!(flow.last_time, e - 1000);
        assert_eq!((flow.octets, flow.packets), (1500, 5));
    }

    #[test]
    fn absolute_timestamps_pass_through() {
        let rec = V9Record {
            src_addr: "192.0.2.1".parse().unwrap(),
            dst_addr: "192.0.2.2".parse().unwrap(),
            src_port: 1,
            dst_port: 2,
            protocol: 17,
            flow_label: 0,
            octets: 99,
            packets: 1,
            timestamps: V9Timestamps::Absolute {
                first_ms: 1_700_000_000_123,
                last_ms: 1_700_000_000_456,
            },
        };
        let flow = convert_v9_to_ipfix(&rec);
        assert_eq!(flow.first_time, 1_700_000_000_123);
        assert_eq!(flow.last_time, 1_700_000_000_456);
    }

    #[test]
    fn uptime_rollover_rebases_correctly() {
        // Flow switched 500 ms before the counter wrapped to 1000.
        let e = rebase(EXPORT, 1000, u32::MAX - 499);
        assert_eq!(e, EXPORT as u64 * 1000 - 1500);
    }

    #[test]
    fn empty_data_flowset_yields_nothing() {
        let mut p = hand_packet();
        p.truncate(20 + 44);
        p.extend_from_slice(&[0x01, 0x00, 0x00, 0x04]);
        assert!(decode_netflow_v9(&p).unwrap().is_empty());
    }

    #[test]
    fn version_ten_is_rejected() {
        let mut p = hand_packet();
        p[1] = 10;
        assert_eq!(
            decode_netflow_v9(&p).unwrap_err(),
            WireError::Version { found: 10, expected: 9 }
        );
    }

    #[test]
    fn truncated_flowset_is_rejected() {
        let p = hand_packet();
        let err = decode_netflow_v9(&p[..p.len() - 10]).unwrap_err();
        assert!(matches!(err, WireError::Truncated { .. }));
    }

    #[test]
    fn encoder_matches_hand_layout() {
        let records = decode_netflow_v9(&hand_packet()).unwrap();
        let flow = convert_v9_to_ipfix(&records[0]);
        let header = NetflowV9Header::new(UPTIME, EXPORT, 42, 1);
        let encoded = encode_netflow_v9(&[flow], &header, AddressFamily::V4).unwrap();
        assert_eq!(encoded, hand_packet());
    }

    #[test]
    fn v6_round_trip_keeps_flow_label() {
        let flow = FlowRecord {
            src_addr: "2001:db8::10".parse().unwrap(),
            dst_addr: "2001:db8::1".parse().unwrap(),
            src_port: 0,
            dst_port: 0,
            protocol: 58,
            flow_label: 0xABCDE,
            first_time: EXPORT as u64 * 1000 - 10_000,
            last_time: EXPORT as u64 * 1000 - 250,
            octets: 640,
            packets: 10,
        };
        let header = NetflowV9Header::new(UPTIME, EXPORT, 0, 9);
        let bytes = encode_netflow_v9(std::slice::from_ref(&flow), &header, AddressFamily::V6).unwrap();
        let back = decode_netflow_v9(&bytes).unwrap();
        assert_eq!(convert_v9_to_ipfix(&back[0]), flow);
    }
}
