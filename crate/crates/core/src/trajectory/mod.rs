//! Offline trajectory construction.
//!
//! A labeled, encoded flow plus a behavior policy becomes a trajectory of
//! `(return-to-go, observation, decision, wait)` steps with per-step rewards.

mod dataset;
mod policy;
mod reward;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::Embedding;
use crate::capture::{Label, PacketRecord};

pub use dataset::{
    balance_oversample, read_dataset, sample_window, split_dataset, write_dataset, DatasetMeta, Window,
};
pub use policy::{simulate_dataset, simulate_policy, BehaviorAgent, PolicyTag};
pub use reward::{compute_rtg, reward, RewardConfig};

/// Features appended to the payload embedding: 4 + 4 octets, 2 ports, 3 protocol slots.
pub const HEADER_FEATURES: usize = 13;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid decision {0} (expected 0, 1 or 2)")]
    InvalidDecision(u8),
    #[error("invalid label {0} (expected 0 or 1)")]
    InvalidLabel(u8),
    #[error("flow {0} has no ground-truth label")]
    UnlabeledFlow(String),
    #[error("flow {0} has no packets")]
    EmptyFlow(String),
    #[error("both classes are required, only {0:?} present")]
    MissingClass(Label),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid reward constants: {0}")]
    InvalidRewards(String),
    #[error("test fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

/// Detection decision: flag benign, flag malicious, or wait for another packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decision {
    Benign = 0,
    Malicious = 1,
    Wait = 2,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Benign, Decision::Malicious, Decision::Wait];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_terminal(self) -> bool {
        self != Decision::Wait
    }

    /// The terminal decision naming `label`.
    pub fn for_label(label: Label) -> Self {
        match label {
            Label::Malicious => Decision::Malicious,
            _ => Decision::Benign,
        }
    }

    /// The opposite terminal decision; `Wait` stays `Wait`.
    pub fn flipped(self) -> Self {
        match self {
            Decision::Benign => Decision::Malicious,
            Decision::Malicious => Decision::Benign,
            Decision::Wait => Decision::Wait,
        }
    }
}

impl TryFrom<u8> for Decision {
    type Error = TrajectoryError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Decision::from_index(v as usize).ok_or(TrajectoryError::InvalidDecision(v))
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl Serialize for Decision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Decision {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Decision::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// Per-packet model input: payload embedding plus normalized header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub z: Embedding,
    pub src_ip_octets: [f64; 4],
    pub dst_ip_octets: [f64; 4],
    pub src_port_norm: f64,
    pub dst_port_norm: f64,
    pub proto_onehot: [f64; 3],
}

impl Observation {
    pub fn new(record: &PacketRecord, z: Embedding) -> Self {
        let octets = |ip: std::net::Ipv4Addr| ip.octets().map(|o| o as f64 / 255.0);
        let mut proto_onehot = [0.0; 3];
        proto_onehot[record.protocol.index()] = 1.0;
        Self {
            z,
            src_ip_octets: octets(record.src_ip),
            dst_ip_octets: octets(record.dst_ip),
            src_port_norm: record.src_port as f64 / 65535.0,
            dst_port_norm: record.dst_port as f64 / 65535.0,
            proto_onehot,
        }
    }

    /// Flat feature vector of length `N_b + 13`.
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.z.len() + HEADER_FEATURES);
        v.extend_from_slice(&self.z.0);
        v.extend_from_slice(&self.src_ip_octets);
        v.extend_from_slice(&self.dst_ip_octets);
        v.push(self.src_port_norm);
        v.push(self.dst_port_norm);
        v.extend_from_slice(&self.proto_onehot);
        v
    }
}

/// A labeled flow ready for simulation or replay: per-packet times (seconds
/// since the first packet) and flat observation vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedFlow {
    pub flow_id: String,
    pub label: Label,
    pub times: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
}

impl EncodedFlow {
    /// Builds from time-ordered packets and their embeddings.
    pub fn new(flow_id: String, label: Label, packets: &[PacketRecord], embeddings: Vec<Embedding>) -> Self {
        let t0 = packets.first().map_or(0.0, |p| p.timestamp);
        Self {
            flow_id,
            label,
            times: packets.iter().map(|p| p.timestamp - t0).collect(),
            observations: packets
                .iter()
                .zip(embeddings)
                .map(|(p, z)| Observation::new(p, z).features())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t_last - t_first`.
    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }

    /// Inter-arrival gap after packet `i`; zero after the last packet.
    pub fn gap_after(&self, i: usize) -> f64 {
        if i + 1 < self.times.len() {
            self.times[i + 1] - self.times[i]
        } else {
            0.0
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Inspection time, seconds since the flow's first packet.
    pub t: f64,
    pub rtg: f64,
    pub obs: Vec<f64>,
    pub d: Decision,
    pub w: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub flow_id: String,
    pub label: Label,
    pub policy: PolicyTag,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Episode return, `R̂_1`.
    pub fn total_return(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.rtg)
    }

    pub fn terminal(&self) -> Option<&Step> {
        self.steps.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub policy: PolicyTag,
    pub reward_config: RewardConfig,
    pub split: Split,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Highest episode return, used as the evaluation RTG target.
    pub fn max_return(&self) -> Option<f64> {
        self.trajectories
            .iter()
            .map(Trajectory::total_return)
            .max_by(f64::total_cmp)
    }

    /// Mean inter-arrival gap over non-terminal steps (0 when there are none).
    pub fn mean_wait(&self) -> f64 {
        let waits: Vec<f64> = self
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter().filter(|s| !s.d.is_terminal()).map(|s| s.w))
            .collect();
        if waits.is_empty() {
            0.0
        } else {
            waits.iter().sum::<f64>() / waits.len() as f64
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|t| t.steps.first())
            .map_or(0, |s| s.obs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::Protocol;

    #[test]
    fn observation_layout() {
        let rec = PacketRecord {
            timestamp: 0.0,
            src_ip: [255, 0, 0, 0].into(),
            dst_ip: [0, 0, 0, 255].into(),
            src_port: 65535,
            dst_port: 0,
            protocol: Protocol::Udp,
            payload: vec![],
            flow_id: String::new(),
            label: Label::Benign,
        };
        let f = Observation::new(&rec, Embedding(vec![0.25, 0.5])).features();
        assert_eq!(f.len(), 2 + HEADER_FEATURES);
        assert_eq!(
            f,
            vec![0.25, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn decision_codes() {
        assert_eq!(Decision::try_from(2).unwrap(), Decision::Wait);
        assert_eq!(Decision::try_from(3), Err(TrajectoryError::InvalidDecision(3)));
        assert_eq!(serde_json::to_string(&Decision::Malicious).unwrap(), "1");
        assert!(serde_json::from_str::<Decision>("5").is_err());
        assert_eq!(Decision::Benign.flipped(), Decision::Malicious);
    }
}
