//! Packet capture ingest: libpcap parsing, per-packet feature extraction,
//! bidirectional flow grouping and ground-truth labeling.
//!
//! The canonical JSONL record format (see [`jsonl`]) is an alternative entry
//! point that skips the pcap path entirely.

mod decode;
mod flows;
pub mod jsonl;
mod labels;
pub mod pcap;

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub use decode::{build_frame, extract_features, DecodeError, Extracted};
pub use flows::{assemble_flows, flow_key_hash, group_flows, label_flows, LabelOutcome};
pub use labels::{LabelTable, LabelTableError};
pub use pcap::{parse_capture, parse_capture_bytes, CaptureError, PcapWriter};

/// Default payload window: the largest Ethernet payload.
pub const DEFAULT_PAYLOAD_LEN: usize = 1500;
/// Default inter-packet gap, in seconds, that closes a flow.
pub const DEFAULT_GAP_TIMEOUT: f64 = 60.0;

/// One captured frame as stored in the capture file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPacket {
    /// Seconds since the epoch, microsecond precision.
    pub timestamp: f64,
    pub link_payload: Vec<u8>,
    /// Byte offset of the record header in the source file.
    pub offset: u64,
}

impl RawPacket {
    pub fn caplen(&self) -> usize {
        self.link_payload.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Tcp,
    Udp,
    Other,
}

impl Protocol {
    pub fn index(self) -> usize {
        match self {
            Protocol::Tcp => 0,
            Protocol::Udp => 1,
            Protocol::Other => 2,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Other => "OTHER",
        })
    }
}

/// Ground-truth class of a packet or flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign,
    Malicious,
    Unlabeled,
}

impl Label {
    pub fn from_class(c: u8) -> Option<Self> {
        match c {
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    /// 0 for benign, 1 for malicious, `None` when unlabeled.
    pub fn class(self) -> Option<u8> {
        match self {
            Label::Benign => Some(0),
            Label::Malicious => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.class() {
            Some(c) => s.serialize_u8(c),
            None => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Option<u8> = Option::deserialize(d)?;
        match v {
            None => Ok(Label::Unlabeled),
            Some(c) => Label::from_class(c)
                .ok_or_else(|| serde::de::Error::custom(format!("label must be 0, 1 or null, got {c}"))),
        }
    }
}

/// One inspected packet with its fixed-length payload vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    #[serde(rename = "ts")]
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    #[serde(rename = "proto")]
    pub protocol: Protocol,
    /// Exactly `N_p` bytes, zero padded.
    pub payload: Vec<u8>,
    pub flow_id: String,
    pub label: Label,
}

impl PacketRecord {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// Payload scaled into `[0, 1]`.
    pub fn scaled_payload(&self) -> Vec<f64> {
        self.payload.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

/// Packets sharing a flow id, ordered by time, with a single label.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub flow_id: String,
    pub packets: Vec<PacketRecord>,
    pub label: Label,
}

impl Flow {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.packets.first().map_or(0.0, |p| p.timestamp)
    }

    /// `t_last - t_first`, in seconds.
    pub fn duration(&self) -> f64 {
        match (self.packets.first(), self.packets.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    /// Sets the flow label and stamps it on every packet.
    pub fn set_label(&mut self, label: Label) {
        self.label = label;
        for p in &mut self.packets {
            p.label = label;
        }
    }
}

/// Audit counters for one ingest run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub packets: usize,
    pub decoded: usize,
    pub malformed: usize,
    pub unsupported: usize,
    pub truncated: usize,
    pub flows: usize,
    pub dropped_flows: usize,
}

/// Decodes every raw packet, counting skipped and truncated ones.
pub fn extract_all(packets: &[RawPacket], n_p: usize, stats: &mut IngestStats) -> Vec<PacketRecord> {
    let mut out = Vec::with_capacity(packets.len());
    for pkt in packets {
        stats.packets += 1;
        match extract_features(pkt, n_p) {
            Ok(Extracted { record, truncated }) => {
                stats.decoded += 1;
                if truncated {
                    stats.truncated += 1;
                }
                out.push(record);
            }
            Err(DecodeError::Malformed { .. }) => stats.malformed += 1,
            Err(DecodeError::Unsupported { .. }) => stats.unsupported += 1,
        }
    }
    out
}
