//! Classic libpcap reader (and a small writer used to build fixtures).
//!
//! Only the microsecond-resolution format with an Ethernet link layer is
//! accepted; pcapng and other link types are rejected.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::RawPacket;

const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown capture magic 0x{0:08x} at offset 0")]
    UnknownMagic(u32),
    #[error("capture shorter than the 24-byte global header ({0} bytes)")]
    ShortHeader(usize),
    #[error("truncated record at offset {offset}: needs {needed} bytes, {remaining} remain")]
    TruncatedRecord {
        offset: u64,
        needed: usize,
        remaining: usize,
    },
    #[error("unsupported link type {0} (only Ethernet is decoded)")]
    UnsupportedLinkType(u32),
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

pub fn parse_capture(path: &Path) -> Result<Vec<RawPacket>, CaptureError> {
    let bytes = std::fs::read(path).map_err(|source| CaptureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_capture_bytes(&bytes)
}

/// Parses an in-memory capture, one [`RawPacket`] per record in file order.
pub fn parse_capture_bytes(bytes: &[u8]) -> Result<Vec<RawPacket>, CaptureError> {
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(CaptureError::UnknownMagic(u32::from_be_bytes(m)));
    }
    let endian = match u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) {
        MAGIC_MICROS => Endian::Little,
        m if m.swap_bytes() == MAGIC_MICROS => Endian::Big,
        _ => {
            return Err(CaptureError::UnknownMagic(u32::from_be_bytes([
                bytes[0], bytes[1], bytes[2], bytes[3],
            ])))
        }
    };
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(CaptureError::ShortHeader(bytes.len()));
    }
    let link_type = endian.u32(&bytes[20..24]);
    if link_type != LINKTYPE_ETHERNET {
        return Err(CaptureError::UnsupportedLinkType(link_type));
    }

    let mut packets = Vec::new();
    let mut pos = GLOBAL_HEADER_LEN;
    while pos < bytes.len() {
        let remaining = bytes.len() - pos;
        if remaining < RECORD_HEADER_LEN {
            return Err(CaptureError::TruncatedRecord {
                offset: pos as u64,
                needed: RECORD_HEADER_LEN,
                remaining,
            });
        }
        let hdr = &bytes[pos..pos + RECORD_HEADER_LEN];
        let ts_sec = endian.u32(&hdr[0..4]);
        let ts_usec = endian.u32(&hdr[4..8]);
        let caplen = endian.u32(&hdr[8..12]) as usize;
        let body_start = pos + RECORD_HEADER_LEN;
        let body_remaining = bytes.len() - body_start;
        if caplen > body_remaining {
            return Err(CaptureError::TruncatedRecord {
                offset: pos as u64,
                needed: caplen,
                remaining: body_remaining,
            });
        }
        packets.push(RawPacket {
            timestamp: ts_sec as f64 + ts_usec as f64 * 1e-6,
            link_payload: bytes[body_start..body_start + caplen].to_vec(),
            offset: pos as u64,
        });
        pos = body_start + caplen;
    }
    Ok(packets)
}

/// Writes classic pcap files, in either byte order.
pub struct PcapWriter<W: Write> {
    out: W,
    big_endian: bool,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W, big_endian: bool) -> std::io::Result<Self> {
        let mut hdr = Vec::with_capacity(GLOBAL_HEADER_LEN);
        let fields: [(u32, usize); 7] = [
            (MAGIC_MICROS, 4),
            (2, 2),
            (4, 2),
            (0, 4),
            (0, 4),
            (65535, 4),
            (LINKTYPE_ETHERNET, 4),
        ];
        for (v, width) in fields {
            push_int(&mut hdr, v, width, big_endian);
        }
        out.write_all(&hdr)?;
        Ok(Self { out, big_endian })
    }

    pub fn write_record(&mut self, ts_sec: u32, ts_usec: u32, frame: &[u8]) -> std::io::Result<()> {
        let mut hdr = Vec::with_capacity(RECORD_HEADER_LEN);
        for v in [ts_sec, ts_usec, frame.len() as u32, frame.len() as u32] {
            push_int(&mut hdr, v, 4, self.big_endian);
        }
        self.out.write_all(&hdr)?;
        self.out.write_all(frame)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn push_int(buf: &mut Vec<u8>, v: u32, width: usize, big_endian: bool) {
    match (width, big_endian) {
        (2, false) => buf.extend_from_slice(&(v as u16).to_le_bytes()),
        (2, true) => buf.extend_from_slice(&(v as u16).to_be_bytes()),
        (_, false) => buf.extend_from_slice(&v.to_le_bytes()),
        (_, true) => buf.extend_from_slice(&v.to_be_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capture_with(frames: &[&[u8]], big_endian: bool) -> Vec<u8> {
        let mut w = PcapWriter::new(Vec::new(), big_endian).unwrap();
        for (i, f) in frames.iter().enumerate() {
            w.write_record(1_700_000_000 + i as u32, 250_000, f).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn one_record_one_packet() {
        let frame = [0u8; 60];
        for be in [false, true] {
            let pkts = parse_capture_bytes(&capture_with(&[&frame], be)).unwrap();
            assert_eq!(pkts.len(), 1);
            assert_eq!(pkts[0].caplen(), 60);
            assert_eq!(pkts[0].timestamp, 1_700_000_000.25);
            assert_eq!(pkts[0].offset, 24);
        }
    }

    #[test]
    fn zero_magic_is_rejected() {
        let mut bytes = capture_with(&[], false);
        bytes[..4].copy_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            parse_capture_bytes(&bytes),
            Err(CaptureError::UnknownMagic(0))
        ));
    }

    #[test]
    fn record_longer_than_file_is_truncated() {
        let mut bytes = capture_with(&[], false);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&100u32.to_le_bytes());
        bytes.extend_from_slice(&100u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 40]);
        match parse_capture_bytes(&bytes) {
            Err(CaptureError::TruncatedRecord {
                offset,
                needed,
                remaining,
            }) => {
                assert_eq!((offset, needed, remaining), (24, 100, 40));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_ethernet_link_type() {
        let mut bytes = capture_with(&[], false);
        bytes[20..24].copy_from_slice(&101u32.to_le_bytes());
        assert!(matches!(
            parse_capture_bytes(&bytes),
            Err(CaptureError::UnsupportedLinkType(101))
        ));
    }

    #[test]
    fn empty_capture_has_no_packets() {
        assert!(parse_capture_bytes(&capture_with(&[], true)).unwrap().is_empty());
    }
}
