use std::net::Ipv4Addr;

use thiserror::Error;

use super::{Label, PacketRecord, Protocol, RawPacket};

const ETH_HEADER_LEN: usize = 14;
const ETHERTYPE_IPV4: u16 = 0x0800;
const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;

/// Why a packet was skipped. Skips are counted, never fatal.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("malformed header at offset {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("unsupported frame at offset {offset}: {reason}")]
    Unsupported { offset: u64, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extracted {
    pub record: PacketRecord,
    /// The transport payload was longer than `n_p` and got cut.
    pub truncated: bool,
}

/// Decodes Ethernet → IPv4 → TCP/UDP/other and renders the transport
/// payload as exactly `n_p` byte values.
pub fn extract_features(pkt: &RawPacket, n_p: usize) -> Result<Extracted, DecodeError> {
    let malformed = |reason: String| DecodeError::Malformed {
        offset: pkt.offset,
        reason,
    };
    let frame = &pkt.link_payload;
    if frame.len() < ETH_HEADER_LEN {
        return Err(malformed(format!("{}-byte frame has no Ethernet header", frame.len())));
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Err(DecodeError::Unsupported {
            offset: pkt.offset,
            reason: format!("ethertype 0x{ethertype:04x} is not IPv4"),
        });
    }
    let ip = &frame[ETH_HEADER_LEN..];
    if ip.len() < 20 {
        return Err(malformed(format!("{} bytes left for the IPv4 header", ip.len())));
    }
    let version = ip[0] >> 4;
    if version != 4 {
        return Err(malformed(format!("IP version {version} in an IPv4 frame")));
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ihl < 20 || ihl > total_len || total_len > ip.len() {
        return Err(malformed(format!(
            "IHL {ihl} / total length {total_len} inconsistent with {} captured bytes",
            ip.len()
        )));
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    // Ethernet trailer padding past the IP total length is not payload.
    let l4 = &ip[ihl..total_len];

    let (protocol, src_port, dst_port, payload) = match ip[9] {
        IPPROTO_TCP if frag_offset == 0 => {
            if l4.len() < 20 {
                return Err(malformed(format!("{}-byte TCP segment", l4.len())));
            }
            let data_off = ((l4[12] >> 4) as usize) * 4;
            if data_off < 20 || data_off > l4.len() {
                return Err(malformed(format!(
                    "TCP data offset {data_off} with {}-byte segment",
                    l4.len()
                )));
            }
            (Protocol::Tcp, be16(l4, 0), be16(l4, 2), &l4[data_off..])
        }
        IPPROTO_UDP if frag_offset == 0 => {
            if l4.len() < 8 {
                return Err(malformed(format!("{}-byte UDP datagram", l4.len())));
            }
            (Protocol::Udp, be16(l4, 0), be16(l4, 2), &l4[8..])
        }
        _ => (Protocol::Other, 0, 0, l4),
    };

    let truncated = payload.len() > n_p;
    let mut bytes = payload[..payload.len().min(n_p)].to_vec();
    bytes.resize(n_p, 0);
    Ok(Extracted {
        record: PacketRecord {
            timestamp: pkt.timestamp,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol,
            payload: bytes,
            flow_id: String::new(),
            label: Label::Unlabeled,
        },
        truncated,
    })
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Builds a minimal Ethernet/IPv4/{TCP,UDP} frame, padded to 60 bytes.
/// `Protocol::Other` emits IP protocol 1 (ICMP) with the payload as body.
pub fn build_frame(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    protocol: Protocol,
    payload: &[u8],
) -> Vec<u8> {
    let mut l4 = Vec::new();
    let proto_num = match protocol {
        Protocol::Tcp => {
            l4.extend_from_slice(&src_port.to_be_bytes());
            l4.extend_from_slice(&dst_port.to_be_bytes());
            l4.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 0]);
            l4.extend_from_slice(&[0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0]);
            IPPROTO_TCP
        }
        Protocol::Udp => {
            l4.extend_from_slice(&src_port.to_be_bytes());
            l4.extend_from_slice(&dst_port.to_be_bytes());
            l4.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
            l4.extend_from_slice(&[0, 0]);
            IPPROTO_UDP
        }
        Protocol::Other => 1,
    };
    l4.extend_from_slice(payload);
    let total_len = (20 + l4.len()) as u16;

    let mut frame = Vec::with_capacity(60.max(ETH_HEADER_LEN + total_len as usize));
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02]);
    frame.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    frame.extend_from_slice(&[0x45, 0]);
    frame.extend_from_slice(&total_len.to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0x40, 0, 64, proto_num, 0, 0]);
    frame.extend_from_slice(&src.octets());
    frame.extend_from_slice(&dst.octets());
    frame.extend_from_slice(&l4);
    if frame.len() < 60 {
        frame.resize(60, 0);
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(frame: Vec<u8>) -> RawPacket {
        RawPacket {
            timestamp: 1.5,
            link_payload: frame,
            offset: 40,
        }
    }

    fn a() -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, 1)
    }
    fn b() -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, 2)
    }

    #[test]
    fn short_payload_is_zero_padded() {
        let f = build_frame(a(), b(), 1234, 80, Protocol::Tcp, &[0x41, 0x42]);
        let out = extract_features(&raw(f), 4).unwrap();
        assert_eq!(out.record.payload, vec![65, 66, 0, 0]);
        assert!(!out.truncated);
        assert_eq!(out.record.src_port, 1234);
        assert_eq!(out.record.dst_port, 80);
        assert_eq!(out.record.protocol, Protocol::Tcp);
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        // 14 + 20 + 8 + 0 = 42 bytes, padded to 60 on the wire.
        let f = build_frame(a(), b(), 53, 5353, Protocol::Udp, &[]);
        assert_eq!(f.len(), 60);
        let out = extract_features(&raw(f), 3).unwrap();
        assert_eq!(out.record.payload, vec![0, 0, 0]);
    }

    #[test]
    fn long_payload_is_truncated_and_flagged() {
        let f = build_frame(a(), b(), 1, 2, Protocol::Udp, &[1, 2, 3, 4, 5, 6]);
        let out = extract_features(&raw(f), 4).unwrap();
        assert_eq!(out.record.payload, vec![1, 2, 3, 4]);
        assert!(out.truncated);
    }

    #[test]
    fn other_protocol_has_zero_ports() {
        let f = build_frame(a(), b(), 9, 9, Protocol::Other, &[8, 0, 7]);
        let out = extract_features(&raw(f), 3).unwrap();
        assert_eq!(out.record.protocol, Protocol::Other);
        assert_eq!((out.record.src_port, out.record.dst_port), (0, 0));
        assert_eq!(out.record.payload, vec![8, 0, 7]);
    }

    #[test]
    fn inconsistent_total_length_is_malformed() {
        let mut f = build_frame(a(), b(), 1, 2, Protocol::Udp, &[1, 2, 3]);
        f[16..18].copy_from_slice(&500u16.to_be_bytes());
        let err = extract_features(&raw(f), 4).unwrap_err();
        assert!(matches!(err, DecodeError::Malformed { offset: 40, .. }));
    }

    #[test]
    fn ipv6_is_unsupported() {
        let mut f = build_frame(a(), b(), 1, 2, Protocol::Udp, &[]);
        f[12..14].copy_from_slice(&0x86ddu16.to_be_bytes());
        assert!(matches!(
            extract_features(&raw(f), 4),
            Err(DecodeError::Unsupported { .. })
        ));
    }
}
