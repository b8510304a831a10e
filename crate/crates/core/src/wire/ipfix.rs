use std::collections::HashMap;

use crate::flow::{AddressFamily, FlowRecord};

use super::{
    element, for_each_record, parse_templates, put_addr, put_uint, FieldSpec, Reader,
    TemplateRecord, WireError,
};

pub const IPFIX_VERSION: u16 = 10;
pub const IPFIX_HEADER_LEN: usize = 16;
const TEMPLATE_SET_ID: u16 = 2;
const OPTIONS_TEMPLATE_SET_ID: u16 = 3;
const CANONICAL_TEMPLATE_ID: u16 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpfixMessageHeader {
    pub version: u16,
    pub length: u16,
    /// Unix epoch seconds.
    pub export_time: u32,
    pub sequence_number: u32,
    pub source_id: u32,
}

impl IpfixMessageHeader {
    /// Header for a message about to be encoded; the length is filled in by
    /// [`encode_ipfix`].
    pub fn new(export_time: u32, sequence_number: u32, source_id: u32) -> Self {
        IpfixMessageHeader {
            version: IPFIX_VERSION,
            length: 0,
            export_time,
            sequence_number,
            source_id,
        }
    }

    fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes, 0);
        let version = r.u16()?;
        if version != IPFIX_VERSION {
            return Err(WireError::Version {
                found: version,
                expected: IPFIX_VERSION,
            });
        }
        Ok(IpfixMessageHeader {
            version,
            length: r.u16()?,
            export_time: r.u32()?,
            sequence_number: r.u32()?,
            source_id: r.u32()?,
        })
    }
}

/// A set as it appears on the wire, before template interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFlowSet<'a> {
    pub set_id: u16,
    pub set_length: u16,
    pub payload: &'a [u8],
}

/// The 11-field export template: protocol, addresses, ports, next header,
/// flow label, first/last time, octets, packets.
pub fn canonical_template(family: AddressFamily) -> TemplateRecord {
    use element::*;
    let (src, dst, addr_len) = match family {
        AddressFamily::V4 => (SOURCE_IPV4_ADDRESS, DESTINATION_IPV4_ADDRESS, 4),
        AddressFamily::V6 => (SOURCE_IPV6_ADDRESS, DESTINATION_IPV6_ADDRESS, 16),
    };
    TemplateRecord {
        template_id: CANONICAL_TEMPLATE_ID,
        field_specs: vec![
            FieldSpec::new(PROTOCOL_IDENTIFIER, 1),
            FieldSpec::new(src, addr_len),
            FieldSpec::new(dst, addr_len),
            FieldSpec::new(SOURCE_TRANSPORT_PORT, 4),
            FieldSpec::new(DESTINATION_TRANSPORT_PORT, 4),
            FieldSpec::new(NEXT_HEADER_IPV6, 4),
            FieldSpec::new(FLOW_LABEL_IPV6, 4),
            FieldSpec::new(FIRST_SWITCHED, 4),
            FieldSpec::new(LAST_SWITCHED, 4),
            FieldSpec::new(OCTET_DELTA_COUNT, 4),
            FieldSpec::new(PACKET_DELTA_COUNT, 4),
        ],
    }
}

fn fits_u32(index: usize, field: &'static str, value: u64) -> Result<u64, WireError> {
    if value > u32::MAX as u64 {
        Err(WireError::EncodeRange {
            index,
            field,
            value,
        })
    } else {
        Ok(value)
    }
}

/// Encodes one IPFIX message: header, a template set with the canonical
/// template and, when `records` is non-empty, one data set in input order.
///
/// Timestamps go on the wire as whole epoch seconds (sub-second parts are
/// truncated). IPv4 records carry 0 in the next-header field.
pub fn encode_ipfix(
    records: &[FlowRecord],
    header: &IpfixMessageHeader,
    family: AddressFamily,
) -> Result<Vec<u8>, WireError> {
    let template = canonical_template(family);
    let mut out = Vec::with_capacity(128 + records.len() * 65);

    put_uint(&mut out, IPFIX_VERSION as u64, 2);
    put_uint(&mut out, 0, 2); // patched below
    put_uint(&mut out, header.export_time as u64, 4);
    put_uint(&mut out, header.sequence_number as u64, 4);
    put_uint(&mut out, header.source_id as u64, 4);

    let template_set_len = 4 + 4 + 4 * template.field_specs.len();
    put_uint(&mut out, TEMPLATE_SET_ID as u64, 2);
    put_uint(&mut out, template_set_len as u64, 2);
    put_uint(&mut out, template.template_id as u64, 2);
    put_uint(&mut out, template.field_specs.len() as u64, 2);
    for f in &template.field_specs {
        put_uint(&mut out, f.element_id as u64, 2);
        put_uint(&mut out, f.field_length as u64, 2);
    }

    if !records.is_empty() {
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
            let next_header = match family {
                AddressFamily::V4 => 0,
                AddressFamily::V6 => rec.protocol as u64,
            };
            put_uint(&mut out, rec.protocol as u64, 1);
            put_addr(&mut out, &rec.src_addr);
            put_addr(&mut out, &rec.dst_addr);
            put_uint(&mut out, rec.src_port as u64, 4);
            put_uint(&mut out, rec.dst_port as u64, 4);
            put_uint(&mut out, next_header, 4);
            put_uint(&mut out, rec.flow_label as u64, 4);
            put_uint(&mut out, fits_u32(index, "first_time", rec.first_time / 1000)?, 4);
            put_uint(&mut out, fits_u32(index, "last_time", rec.last_time / 1000)?, 4);
            put_uint(&mut out, fits_u32(index, "octets", rec.octets)?, 4);
            put_uint(&mut out, fits_u32(index, "packets", rec.packets)?, 4);
        }
        let set_len = out.len() - set_start;
        if set_len > u16::MAX as usize {
            return Err(WireError::MessageTooLarge { length: out.len() });
        }
        out[set_start + 2..set_start + 4].copy_from_slice(&(set_len as u16).to_be_bytes());
    }

    if out.len() > u16::MAX as usize {
        return Err(WireError::MessageTooLarge { length: out.len() });
    }
    let len = out.len() as u16;
    out[2..4].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

/// Splits a message into its sets without interpreting them. Never reads
/// past the header's declared length or any set's declared length.
pub fn raw_sets(bytes: &[u8]) -> Result<(IpfixMessageHeader, Vec<RawFlowSet<'_>>), WireError> {
    let header = IpfixMessageHeader::parse(bytes)?;
    let declared = header.length as usize;
    if declared > bytes.len() {
        return Err(WireError::Truncated {
            offset: 0,
            needed: declared,
            available: bytes.len(),
        });
    }
    if declared < IPFIX_HEADER_LEN {
        return Err(WireError::InvalidSet {
            offset: 0,
            reason: format!("message length {declared} shorter than header"),
        });
    }
    let body = &bytes[IPFIX_HEADER_LEN..declared];
    let mut sets = Vec::new();
    let mut offset = 0;
    while offset < body.len() {
        let mut r = Reader::new(&body[offset..], IPFIX_HEADER_LEN + offset);
        let set_id = r.u16()?;
        let set_length = r.u16()?;
        if set_length < 4 {
            return Err(WireError::InvalidSet {
                offset: IPFIX_HEADER_LEN + offset,
                reason: format!("set length {set_length} below 4"),
            });
        }
        let end = offset + set_length as usize;
        if end > body.len() {
            return Err(WireError::Truncated {
                offset: IPFIX_HEADER_LEN + offset,
                needed: set_length as usize,
                available: body.len() - offset,
            });
        }
        sets.push(RawFlowSet {
            set_id,
            set_length,
            payload: &body[offset + 4..end],
        });
        offset = end;
    }
    Ok((header, sets))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMessage {
    pub header: IpfixMessageHeader,
    pub templates: Vec<TemplateRecord>,
    pub records: Vec<FlowRecord>,
}

/// Template-caching IPFIX decoder for one ingestion stream.
#[derive(Debug, Default)]
pub struct IpfixDecoder {
    templates: HashMap<(u32, u16), TemplateRecord>,
}

impl IpfixDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decode(&mut self, bytes: &[u8]) -> Result<DecodedMessage, WireError> {
        let (header, sets) = raw_sets(bytes)?;
        let mut templates = Vec::new();
        let mut records = Vec::new();
        let mut offset = IPFIX_HEADER_LEN;
        for set in sets {
            let mut r = Reader::new(set.payload, offset + 4);
            match set.set_id {
                TEMPLATE_SET_ID => {
                    for t in parse_templates(&mut r, true)? {
                        self.templates
                            .insert((header.source_id, t.template_id), t.clone());
                        templates.push(t);
                    }
                }
                OPTIONS_TEMPLATE_SET_ID => {}
                id if id >= 256 => {
                    let template = self
                        .templates
                        .get(&(header.source_id, id))
                        .ok_or(WireError::UnknownTemplate { template_id: id })?;
                    for_each_record(&mut r, template, |fields| {
                        let index = records.len();
                        let (src_addr, dst_addr) = fields.require_addrs()?;
                        let (octets, packets) = fields.require_counters()?;
                        let export_ms = header.export_time as u64 * 1000;
                        let first_time = fields
                            .first_switched
                            .map(|s| s.saturating_mul(1000))
                            .or(fields.start_ms)
                            .unwrap_or(export_ms);
                        let last_time = fields
                            .last_switched
                            .map(|s| s.saturating_mul(1000))
                            .or(fields.end_ms)
                            .unwrap_or(export_ms);
                        let rec = FlowRecord {
                            src_addr,
                            dst_addr,
                            src_port: fields.src_port.unwrap_or(0),
                            dst_port: fields.dst_port.unwrap_or(0),
                            protocol: fields.protocol.or(fields.next_header).unwrap_or(0),
                            flow_label: fields.flow_label.unwrap_or(0),
                            first_time,
                            last_time,
                            octets,
                            packets,
                        };
                        rec.validate()
                            .map_err(|source| WireError::InvalidRecord { index, source })?;
                        records.push(rec);
                        Ok(())
                    })?;
                }
                // Reserved set ids are skipped by length.
                _ => {}
            }
            offset += set.set_length as usize;
        }
        Ok(DecodedMessage {
            header,
            templates,
            records,
        })
    }
}

/// Decodes a self-contained message (templates must precede their data sets
/// within `bytes`).
pub fn decode_ipfix(bytes: &[u8]) -> Result<DecodedMessage, WireError> {
    IpfixDecoder::new().decode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PROTO_UDP;
    use std::net::IpAddr;

    fn v4_record() -> FlowRecord {
        FlowRecord {
            src_addr: "192.0.2.7".parse().unwrap(),
            dst_addr: "10.0.0.1".parse().unwrap(),
            src_port: 5353,
            dst_port: 53,
            protocol: PROTO_UDP,
            flow_label: 0,
            first_time: 1_700_000_000_000,
            last_time: 1_700_000_004_000,
            octets: 1200,
            packets: 3,
        }
    }

    fn header() -> IpfixMessageHeader {
        IpfixMessageHeader::new(1_700_000_010, 0, 12_345_678)
    }

    #[test]
    fn template_matches_published_layout() {
        let v4 = canonical_template(AddressFamily::V4);
        let v6 = canonical_template(AddressFamily::V6);
        assert_eq!(v4.template_id, 256);
        assert_eq!(v4.field_specs.len(), 11);
        let ids = |t: &TemplateRecord| t.field_specs.iter().map(|f| f.element_id).collect::<Vec<_>>();
        let lens = |t: &TemplateRecord| t.field_specs.iter().map(|f| f.field_length).collect::<Vec<_>>();
        assert_eq!(ids(&v4), [4, 8, 12, 7, 11, 193, 31, 22, 21, 1, 2]);
        assert_eq!(ids(&v6), [4, 27, 28, 7, 11, 193, 31, 22, 21, 1, 2]);
        assert_eq!(lens(&v4), [1, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4]);
        assert_eq!(lens(&v6), [1, 16, 16, 4, 4, 4, 4, 4, 4, 4, 4]);
        assert_eq!(v4.field_specs[1], FieldSpec::new(8, 4));
        assert_eq!(v6.field_specs[1], FieldSpec::new(27, 16));
        assert_eq!(v4.field_specs[0], FieldSpec::new(4, 1));
    }

    #[test]
    fn empty_message_has_no_data_set() {
        let bytes = encode_ipfix(&[], &header(), AddressFamily::V4).unwrap();
        // 16 header + 4 set header + 4 template header + 11 * 4 field specs
        assert_eq!(bytes.len(), 16 + 52);
        assert_eq!(u16::from_be_bytes([bytes[0], bytes[1]]), 10);
        assert_eq!(u16::from_be_bytes([bytes[2], bytes[3]]) as usize, bytes.len());
        let (_, sets) = raw_sets(&bytes).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].set_id, 2);
    }

    #[test]
    fn single_v4_record_data_set_is_45_bytes() {
        // 1 (protocol) + 10 four-byte fields = 41 payload bytes.
        let expected_payload: usize = [1, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4].iter().sum();
        assert_eq!(expected_payload, 41);
        let bytes = encode_ipfix(&[v4_record()], &header(), AddressFamily::V4).unwrap();
        let (_, sets) = raw_sets(&bytes).unwrap();
        assert_eq!(sets[1].set_id, 256);
        assert_eq!(sets[1].payload.len(), expected_payload);
        assert_eq!(sets[1].set_length as usize, expected_payload + 4);
        assert_eq!(bytes.len(), 16 + 52 + 45);
    }

    #[test]
    fn round_trip_v4() {
        let rec = v4_record();
        let bytes = encode_ipfix(&[rec.clone(), rec.clone()], &header(), AddressFamily::V4).unwrap();
        let msg = decode_ipfix(&bytes).unwrap();
        assert_eq!(msg.records, vec![rec.clone(), rec]);
        assert_eq!(msg.header.source_id, 12_345_678);
        assert_eq!(msg.templates, vec![canonical_template(AddressFamily::V4)]);
    }

    #[test]
    fn family_mismatch_names_record() {
        let mut v6 = v4_record();
        v6.src_addr = "2001:db8::1".parse().unwrap();
        v6.dst_addr = "2001:db8::2".parse().unwrap();
        let err = encode_ipfix(&[v4_record(), v6], &header(), AddressFamily::V4).unwrap_err();
        assert!(matches!(err, WireError::FamilyMismatch { index: 1, .. }));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_ipfix(&[v4_record()], &header(), AddressFamily::V4).unwrap();
        bytes[1] = 9;
        assert_eq!(
            decode_ipfix(&bytes).unwrap_err(),
            WireError::Version { found: 9, expected: 10 }
        );
    }

    #[test]
    fn declared_length_beyond_bytes_is_truncation() {
        let bytes = encode_ipfix(&[v4_record()], &header(), AddressFamily::V4).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_ipfix(cut).unwrap_err(), WireError::Truncated { .. }));
    }

    #[test]
    fn data_before_template_is_unknown() {
        let bytes = encode_ipfix(&[v4_record()], &header(), AddressFamily::V4).unwrap();
        // Drop the template set, keep header + data set.
        let mut msg = bytes[..16].to_vec();
        msg.extend_from_slice(&bytes[16 + 52..]);
        let len = msg.len() as u16;
        msg[2..4].copy_from_slice(&len.to_be_bytes());
        assert_eq!(
            decode_ipfix(&msg).unwrap_err(),
            WireError::UnknownTemplate { template_id: 256 }
        );
    }

    #[test]
    fn session_remembers_templates() {
        let bytes = encode_ipfix(&[v4_record()], &header(), AddressFamily::V4).unwrap();
        let mut data_only = bytes[..16].to_vec();
        data_only.extend_from_slice(&bytes[16 + 52..]);
        let len = data_only.len() as u16;
        data_only[2..4].copy_from_slice(&len.to_be_bytes());

        let mut session = IpfixDecoder::new();
        session.decode(&bytes).unwrap();
        let msg = session.decode(&data_only).unwrap();
        assert_eq!(msg.records, vec![v4_record()]);
    }

    /// A message laid out the IANA way (two-byte ports, reordered fields and
    /// an unknown element) decodes through the template.
    #[test]
    fn standard_length_ports_decode() {
        let mut m = Vec::new();
        put_uint(&mut m, 10, 2);
        put_uint(&mut m, 0, 2);
        put_uint(&mut m, 1_700_000_100, 4);
        put_uint(&mut m, 7, 4);
        put_uint(&mut m, 1, 4);
        let fields: [(u16, u16); 9] = [
            (8, 4),
            (12, 4),
            (7, 2),
            (11, 2),
            (4, 1),
            (210, 3), // padding octets, unknown to us
            (1, 8),
            (2, 8),
            (152, 8),
        ];
        put_uint(&mut m, 2, 2);
        put_uint(&mut m, (8 + fields.len() * 4) as u64, 2);
        put_uint(&mut m, 300, 2);
        put_uint(&mut m, fields.len() as u64, 2);
        for (id, len) in fields {
            put_uint(&mut m, id as u64, 2);
            put_uint(&mut m, len as u64, 2);
        }
        let rec_len = 4 + 4 + 2 + 2 + 1 + 3 + 8 + 8 + 8;
        put_uint(&mut m, 300, 2);
        put_uint(&mut m, (4 + rec_len) as u64, 2);
        m.extend_from_slice(&[198, 51, 100, 1, 10, 0, 0, 9]);
        put_uint(&mut m, 1234, 2);
        put_uint(&mut m, 443, 2);
        put_uint(&mut m, 6, 1);
        m.extend_from_slice(&[0, 0, 0]);
        put_uint(&mut m, 5000, 8);
        put_uint(&mut m, 7, 8);
        put_uint(&mut m, 1_700_000_050_250, 8);
        let len = m.len() as u16;
        m[2..4].copy_from_slice(&len.to_be_bytes());

        let msg = decode_ipfix(&m).unwrap();
        assert_eq!(msg.records.len(), 1);
        let r = &msg.records[0];
        assert_eq!(r.src_addr, "198.51.100.1".parse::<IpAddr>().unwrap());
        assert_eq!((r.src_port, r.dst_port, r.protocol), (1234, 443, 6));
        assert_eq!((r.octets, r.packets), (5000, 7));
        assert_eq!(r.first_time, 1_700_000_050_250);
        // No end element: the export time stands in.
        assert_eq!(r.last_time, 1_700_000_100_000);
    }

    #[test]
    fn set_shorter_than_header_is_invalid() {
        let mut bytes = encode_ipfix(&[], &header(), AddressFamily::V4).unwrap();
        bytes[18..20].copy_from_slice(&2u16.to_be_bytes());
        assert!(matches!(decode_ipfix(&bytes).unwrap_err(), WireError::InvalidSet { .. }));
    }
}
