//! Synthetic labeled traffic for desk-scale runs.
//!
//! A flow is malicious iff some payload contains a run of `pattern_len`
//! copies of `pattern_byte`, placed at `pattern_offset` (anywhere when
//! unset). Benign payloads are printable ASCII (never the
//! pattern byte); malicious flows always carry the run in their first packet
//! and in each later packet with probability one half. Packet gaps are
//! exponential. Header fields are drawn from the same distribution for both
//! classes, so only the payload reveals the label.

use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::capture::{Label, LabelTable, PacketRecord, Protocol};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_flows: usize,
    pub max_len: usize,
    pub pattern_byte: u8,
    pub pattern_len: usize,
    /// Fixed start of the planted run; `None` places it uniformly.
    pub pattern_offset: Option<usize>,
    /// Mean inter-arrival gap, seconds.
    pub mean_gap: f64,
    pub malicious_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_flows: 2000,
            max_len: 16,
            pattern_byte: 0xFF,
            pattern_len: 8,
            pattern_offset: Some(0),
            mean_gap: 0.5,
            malicious_fraction: 0.5,
            seed: 2024,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, payload_len: usize) -> Result<(), String> {
        if self.max_len == 0 {
            return Err("max_len must be at least 1".into());
        }
        if self.pattern_len == 0 || self.pattern_end() > payload_len {
            return Err("pattern_offset + pattern_len must be in 1..=payload_len".into());
        }
        if !(self.mean_gap > 0.0 && self.mean_gap.is_finite()) {
            return Err("mean_gap must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err("malicious_fraction must be in [0, 1]".into());
        }
        Ok(())
    }

    fn pattern_end(&self) -> usize {
        self.pattern_offset.unwrap_or(0) + self.pattern_len
    }
}

/// True iff `payload` contains `len` consecutive `byte`s.
pub fn has_pattern(payload: &[u8], byte: u8, len: usize) -> bool {
    let mut run = 0;
    for &b in payload {
        run = if b == byte { run + 1 } else { 0 };
        if run >= len {
            return true;
        }
    }
    false
}

fn benign_byte(rng: &mut ChaCha8Rng, forbidden: u8) -> u8 {
    loop {
        let b = rng.random_range(0x20..0x7F);
        if b != forbidden {
            return b;
        }
    }
}

fn payload(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n_p: usize, plant: bool) -> Vec<u8> {
    let used = rng.random_range(cfg.pattern_end()..=n_p);
    let mut p = vec![0u8; n_p];
    for b in &mut p[..used] {
        *b = benign_byte(rng, cfg.pattern_byte);
    }
    if plant {
        let at = match cfg.pattern_offset {
            Some(at) => at,
            None => rng.random_range(0..=used - cfg.pattern_len),
        };
        p[at..at + cfg.pattern_len].fill(cfg.pattern_byte);
    }
    p
}

/// Generated packets with `payload_len`-byte payloads (time-ordered within
/// each flow, flows in id order) and the matching ground-truth table.
pub fn generate(cfg: &SynthConfig, payload_len: usize) -> Result<(Vec<PacketRecord>, LabelTable), String> {
    cfg.validate(payload_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap = Exp::new(1.0 / cfg.mean_gap).map_err(|e| e.to_string())?;
    let width = cfg.n_flows.max(1).to_string().len();
    let mut records = Vec::new();
    let mut truth = Vec::with_capacity(cfg.n_flows);
    for i in 0..cfg.n_flows {
        let flow_id = format!("synth-{i:0width$}");
        let malicious = rng.random_bool(cfg.malicious_fraction);
        let label = if malicious { Label::Malicious } else { Label::Benign };
        let len = rng.random_range(1..=cfg.max_len);
        let src_ip = Ipv4Addr::new(10, rng.random(), rng.random(), rng.random_range(1..255));
        let dst_ip = Ipv4Addr::new(192, 168, rng.random(), rng.random_range(1..255));
        let src_port = rng.random_range(1024..=65535);
        let dst_port = [22, 53, 80, 443, 8080][rng.random_range(0..5)];
        let protocol = if rng.random_bool(0.7) { Protocol::Tcp } else { Protocol::Udp };
        let mut t = i as f64 * 100.0 + rng.random_range(0.0..50.0);
        for k in 0..len {
            if k > 0 {
                t += gap.sample(&mut rng);
            }
            let plant = malicious && (k == 0 || rng.random_bool(0.5));
            records.push(PacketRecord {
                timestamp: t,
                src_ip,
                dst_ip,
                src_port,
                dst_port,
                protocol,
                payload: payload(&mut rng, cfg, payload_len, plant),
                flow_id: flow_id.clone(),
                label,
            });
        }
        truth.push((flow_id, label));
    }
    let table = LabelTable::from_pairs(truth).map_err(|e| e.to_string())?;
    Ok((records, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::assemble_flows;

    #[test]
    fn label_iff_pattern() {
        let cfg = SynthConfig {
            n_flows: 300,
            ..SynthConfig::default()
        };
        let (records, truth) = generate(&cfg, 64).unwrap();
        for f in assemble_flows(records) {
            let any = f.packets.iter().any(|p| has_pattern(&p.payload, 0xFF, 8));
            assert_eq!(any, f.label == Label::Malicious, "{}", f.flow_id);
            assert_eq!(truth.get(&f.flow_id), Some(f.label));
            assert!(f.len() <= 16);
            assert!(f.packets.iter().all(|p| p.payload.len() == 64));
        }
    }

    #[test]
    fn random_placement() {
        let cfg = SynthConfig {
            n_flows: 200,
            pattern_offset: None,
            ..SynthConfig::default()
        };
        let (records, _) = generate(&cfg, 64).unwrap();
        let mut offsets = std::collections::BTreeSet::new();
        for r in records.iter().filter(|r| r.label == Label::Malicious) {
            if let Some(at) = r.payload.windows(8).position(|w| w.iter().all(|&b| b == 0xFF)) {
                offsets.insert(at);
            }
        }
        assert!(offsets.len() > 10);
        assert!(generate(&SynthConfig { pattern_offset: Some(60), ..cfg }, 64).is_err());
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            n_flows: 50,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg, 64).unwrap().0, generate(&cfg, 64).unwrap().0);
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg, 64).unwrap().0, generate(&other, 64).unwrap().0);
    }

    #[test]
    fn printable_pattern_byte_is_excluded_from_benign_bytes() {
        let cfg = SynthConfig {
            n_flows: 200,
            pattern_byte: b'a',
            pattern_len: 2,
            ..SynthConfig::default()
        };
        let (records, _) = generate(&cfg, 64).unwrap();
        for r in records.iter().filter(|r| r.label == Label::Benign) {
            assert!(!r.payload.contains(&b'a'));
        }
    }

    #[test]
    fn pattern_detector() {
        assert!(has_pattern(&[1, 9, 9, 9, 2], 9, 3));
        assert!(!has_pattern(&[9, 9, 1, 9, 9], 9, 3));
        assert!(!has_pattern(&[], 9, 1));
    }

    #[test]
    fn default_run_is_balanced() {
        let (records, truth) = generate(&SynthConfig::default(), 64).unwrap();
        let flows = assemble_flows(records);
        assert_eq!(flows.len(), 2000);
        assert_eq!(truth.len(), 2000);
        let malicious = flows.iter().filter(|f| f.label == Label::Malicious).count() as f64 / 2000.0;
        assert!((malicious - 0.5).abs() < 0.05, "{malicious}");
        for f in &flows {
            assert!((1..=16).contains(&f.len()));
            assert_eq!(has_pattern(&f.packets[0].payload, 0xFF, 8), f.label == Label::Malicious);
            assert!(f.packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
    }
}
