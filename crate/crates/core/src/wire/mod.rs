//! Flow export codecs.
//!
//! The IPFIX side encodes and decodes the fixed 11-field template used by
//! this project (template 256, L4 ports on four bytes, timestamps as epoch
//! seconds). Decoding is template-driven so messages from exporters that use
//! the standard two-byte ports are accepted as well. The NetFlow v9 side is a
//! minimal decoder for the same semantic fields plus the conversion that
//! rebases its uptime-relative timestamps onto the epoch.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use crate::flow::{AddressFamily, FlowError};

mod ipfix;
mod netflow_v9;

pub use ipfix::{
    canonical_template, decode_ipfix, encode_ipfix, DecodedMessage, IpfixDecoder,
    IpfixMessageHeader, RawFlowSet, raw_sets, IPFIX_HEADER_LEN, IPFIX_VERSION,
};
pub use netflow_v9::{
    convert_v9_to_ipfix, decode_netflow_v9, encode_netflow_v9, NetflowV9Header, V9Decoder,
    V9Record, V9Timestamps, NETFLOW_V9_VERSION, V9_HEADER_LEN,
};

/// Information element ids understood by the decoders.
pub mod element {
    pub const OCTET_DELTA_COUNT: u16 = 1;
    pub const PACKET_DELTA_COUNT: u16 = 2;
    pub const PROTOCOL_IDENTIFIER: u16 = 4;
    pub const SOURCE_TRANSPORT_PORT: u16 = 7;
    pub const SOURCE_IPV4_ADDRESS: u16 = 8;
    pub const DESTINATION_TRANSPORT_PORT: u16 = 11;
    pub const DESTINATION_IPV4_ADDRESS: u16 = 12;
    pub const LAST_SWITCHED: u16 = 21;
    pub const FIRST_SWITCHED: u16 = 22;
    pub const SOURCE_IPV6_ADDRESS: u16 = 27;
    pub const DESTINATION_IPV6_ADDRESS: u16 = 28;
    pub const FLOW_LABEL_IPV6: u16 = 31;
    pub const FLOW_START_SECONDS: u16 = 150;
    pub const FLOW_END_SECONDS: u16 = 151;
    pub const FLOW_START_MILLISECONDS: u16 = 152;
    pub const FLOW_END_MILLISECONDS: u16 = 153;
    pub const NEXT_HEADER_IPV6: u16 = 193;
}

/// Variable-length marker in a template field length.
pub const VARIABLE_LENGTH: u16 = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },
    #[error("truncated message: need {needed} bytes at offset {offset}, have {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("data set references unknown template {template_id}")]
    UnknownTemplate { template_id: u16 },
    #[error("invalid set at offset {offset}: {reason}")]
    InvalidSet { offset: usize, reason: String },
    #[error("invalid template {template_id}: {reason}")]
    InvalidTemplate { template_id: u16, reason: String },
    #[error("element {element} has unsupported length {length}")]
    FieldLength { element: u16, length: u16 },
    #[error("element {element} value {value} out of range")]
    FieldRange { element: u16, value: u64 },
    #[error("record lacks required element {element}")]
    MissingField { element: u16 },
    #[error("record {index}: {source}")]
    InvalidRecord {
        index: usize,
        #[source]
        source: FlowError,
    },
    #[error("record {index} is {found}, message family is {expected}")]
    FamilyMismatch {
        index: usize,
        expected: AddressFamily,
        found: AddressFamily,
    },
    #[error("record {index}: {field} value {value} does not fit the wire field")]
    EncodeRange {
        index: usize,
        field: &'static str,
        value: u64,
    },
    #[error("encoded message of {length} bytes exceeds the 16-bit length field")]
    MessageTooLarge { length: usize },
}

/// One `(element id, field length)` pair of a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub element_id: u16,
    pub field_length: u16,
    /// Private enterprise number when the enterprise bit is set.
    pub enterprise: Option<u32>,
}

impl FieldSpec {
    pub const fn new(element_id: u16, field_length: u16) -> Self {
        FieldSpec {
            element_id,
            field_length,
            enterprise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplateRecord {
    pub template_id: u16,
    pub field_specs: Vec<FieldSpec>,
}

impl TemplateRecord {
    /// Fixed record length, or `None` when the template has a
    /// variable-length field.
    pub fn record_length(&self) -> Option<usize> {
        self.field_specs.iter().try_fold(0usize, |acc, f| {
            (f.field_length != VARIABLE_LENGTH).then_some(acc + f.field_length as usize)
        })
    }

    fn check(&self) -> Result<(), WireError> {
        if self.template_id < 256 {
            return Err(WireError::InvalidTemplate {
                template_id: self.template_id,
                reason: "template id below 256".into(),
            });
        }
        if self.field_specs.is_empty() {
            return Err(WireError::InvalidTemplate {
                template_id: self.template_id,
                reason: "no fields".into(),
            });
        }
        Ok(())
    }
}

/// Bounds-checked big-endian cursor.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], base: usize) -> Self {
        Reader { buf, pos: 0, base }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated {
                offset: self.offset(),
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads a template body (after the set header) into template records.
pub(crate) fn parse_templates(
    reader: &mut Reader<'_>,
    allow_enterprise: bool,
) -> Result<Vec<TemplateRecord>, WireError> {
    let mut out = Vec::new();
    // Anything shorter than a template header is padding.
    while reader.remaining() >= 4 {
        let template_id = reader.u16()?;
        let field_count = reader.u16()?;
        let mut field_specs = Vec::with_capacity(field_count as usize);
        for _ in 0..field_count {
            let raw_id = reader.u16()?;
            let field_length = reader.u16()?;
            let (element_id, enterprise) = if allow_enterprise && raw_id & 0x8000 != 0 {
                (raw_id & 0x7FFF, Some(reader.u32()?))
            } else {
                (raw_id, None)
            };
            field_specs.push(FieldSpec {
                element_id,
                field_length,
                enterprise,
            });
        }
        let template = TemplateRecord {
            template_id,
            field_specs,
        };
        template.check()?;
        out.push(template);
    }
    Ok(out)
}

/// Semantic fields gathered from one data record, before protocol-specific
/// timestamp interpretation.
#[derive(Debug, Default, Clone)]
pub(crate) struct RecordFields {
    pub src_addr: Option<IpAddr>,
    pub dst_addr: Option<IpAddr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<u8>,
    pub next_header: Option<u8>,
    pub flow_label: Option<u32>,
    pub first_switched: Option<u64>,
    pub last_switched: Option<u64>,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub octets: Option<u64>,
    pub packets: Option<u64>,
}

fn unsigned(element: u16, bytes: &[u8]) -> Result<u64, WireError> {
    if bytes.is_empty() || bytes.len() > 8 {
        return Err(WireError::FieldLength {
            element,
            length: bytes.len() as u16,
        });
    }
    Ok(bytes.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64))
}

fn narrow<T: TryFrom<u64>>(element: u16, value: u64) -> Result<T, WireError> {
    T::try_from(value).map_err(|_| WireError::FieldRange { element, value })
}

fn ipv4(element: u16, bytes: &[u8]) -> Result<IpAddr, WireError> {
    let arr: [u8; 4] = bytes.try_into().map_err(|_| WireError::FieldLength {
        element,
        length: bytes.len() as u16,
    })?;
    Ok(IpAddr::V4(Ipv4Addr::from(arr)))
}

fn ipv6(element: u16, bytes: &[u8]) -> Result<IpAddr, WireError> {
    let arr: [u8; 16] = bytes.try_into().map_err(|_| WireError::FieldLength {
        element,
        length: bytes.len() as u16,
    })?;
    Ok(IpAddr::V6(Ipv6Addr::from(arr)))
}

impl RecordFields {
    pub(crate) fn apply(&mut self, spec: &FieldSpec, bytes: &[u8]) -> Result<(), WireError> {
        use element::*;
        if spec.enterprise.is_some() {
            return Ok(());
        }
        let id = spec.element_id;
        match id {
            OCTET_DELTA_COUNT => self.octets = Some(unsigned(id, bytes)?),
            PACKET_DELTA_COUNT => self.packets = Some(unsigned(id, bytes)?),
            PROTOCOL_IDENTIFIER => self.protocol = Some(narrow(id, unsigned(id, bytes)?)?),
            NEXT_HEADER_IPV6 => self.next_header = Some(narrow(id, unsigned(id, bytes)?)?),
            SOURCE_TRANSPORT_PORT => self.src_port = Some(narrow(id, unsigned(id, bytes)?)?),
            DESTINATION_TRANSPORT_PORT => {
                self.dst_port = Some(narrow(id, unsigned(id, bytes)?)?)
            }
            SOURCE_IPV4_ADDRESS => self.src_addr = Some(ipv4(id, bytes)?),
            DESTINATION_IPV4_ADDRESS => self.dst_addr = Some(ipv4(id, bytes)?),
            SOURCE_IPV6_ADDRESS => self.src_addr = Some(ipv6(id, bytes)?),
            DESTINATION_IPV6_ADDRESS => self.dst_addr = Some(ipv6(id, bytes)?),
            FLOW_LABEL_IPV6 => self.flow_label = Some(narrow(id, unsigned(id, bytes)?)?),
            FIRST_SWITCHED => self.first_switched = Some(unsigned(id, bytes)?),
            LAST_SWITCHED => self.last_switched = Some(unsigned(id, bytes)?),
            FLOW_START_SECONDS => {
                self.start_ms = Some(unsigned(id, bytes)?.saturating_mul(1000))
            }
            FLOW_END_SECONDS => self.end_ms = Some(unsigned(id, bytes)?.saturating_mul(1000)),
            FLOW_START_MILLISECONDS => self.start_ms = Some(unsigned(id, bytes)?),
            FLOW_END_MILLISECONDS => self.end_ms = Some(unsigned(id, bytes)?),
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn require_addrs(&self) -> Result<(IpAddr, IpAddr), WireError> {
        let src = self.src_addr.ok_or(WireError::MissingField {
            element: element::SOURCE_IPV4_ADDRESS,
        })?;
        let dst = self.dst_addr.ok_or(WireError::MissingField {
            element: element::DESTINATION_IPV4_ADDRESS,
        })?;
        Ok((src, dst))
    }

    pub(crate) fn require_counters(&self) -> Result<(u64, u64), WireError> {
        let octets = self.octets.ok_or(WireError::MissingField {
            element: element::OCTET_DELTA_COUNT,
        })?;
        let packets = self.packets.ok_or(WireError::MissingField {
            element: element::PACKET_DELTA_COUNT,
        })?;
        Ok((octets, packets))
    }
}

/// Walks the data records of one data set, calling `each` with the gathered
/// fields. Trailing bytes shorter than a record are treated as padding.
pub(crate) fn for_each_record<F>(
    reader: &mut Reader<'_>,
    template: &TemplateRecord,
    mut each: F,
) -> Result<(), WireError>
where
    F: FnMut(RecordFields) -> Result<(), WireError>,
{
    let min_len = template
        .field_specs
        .iter()
        .map(|f| {
            if f.field_length == VARIABLE_LENGTH {
                1
            } else {
                f.field_length as usize
            }
        })
        .sum::<usize>()
        .max(1);
    while reader.remaining() >= min_len {
        let mut fields = RecordFields::default();
        for spec in &template.field_specs {
            let len = if spec.field_length == VARIABLE_LENGTH {
                match reader.u8()? {
                    255 => reader.u16()? as usize,
                    n => n as usize,
                }
            } else {
                spec.field_length as usize
            };
            let bytes = reader.take(len)?;
            fields.apply(spec, bytes)?;
        }
        each(fields)?;
    }
    Ok(())
}

/// Big-endian writer for `value` in exactly `width` bytes.
pub(crate) fn put_uint(out: &mut Vec<u8>, value: u64, width: usize) {
    let bytes = value.to_be_bytes();
    out.extend_from_slice(&bytes[8 - width..]);
}

pub(crate) fn put_addr(out: &mut Vec<u8>, addr: &IpAddr) {
    match addr {
        IpAddr::V4(a) => out.extend_from_slice(&a.octets()),
        IpAddr::V6(a) => out.extend_from_slice(&a.octets()),
    }
}
