//! Canonical packet-record interchange: one JSON object per line with keys
//! `ts, src_ip, dst_ip, src_port, dst_port, proto, payload, flow_id, label`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::io::{read_jsonl, read_jsonl_from, write_jsonl, write_jsonl_to, JsonlError};

use super::PacketRecord;

/// Checks the per-record invariants serde cannot express.
///
/// All payloads must share one length (`n_p` when given).
pub fn validate_records(records: &[PacketRecord], n_p: Option<usize>) -> Result<(), JsonlError> {
    let expected = n_p.or_else(|| records.first().map(PacketRecord::payload_len));
    for (i, r) in records.iter().enumerate() {
        if !r.timestamp.is_finite() || r.timestamp < 0.0 {
            return Err(JsonlError::schema(i + 1, "ts", format!("{} is not a finite non-negative time", r.timestamp)));
        }
        if Some(r.payload.len()) != expected {
            return Err(JsonlError::schema(
                i + 1,
                "payload",
                format!("length {} differs from N_p = {}", r.payload.len(), expected.unwrap_or(0)),
            ));
        }
    }
    Ok(())
}

pub fn read_records(path: &Path, n_p: Option<usize>) -> Result<Vec<PacketRecord>, JsonlError> {
    let records = read_jsonl(path)?;
    validate_records(&records, n_p)?;
    Ok(records)
}

pub fn read_records_from<R: BufRead>(r: R, n_p: Option<usize>) -> Result<Vec<PacketRecord>, JsonlError> {
    let records = read_jsonl_from(r, Path::new("<reader>"))?;
    validate_records(&records, n_p)?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[PacketRecord]) -> Result<(), JsonlError> {
    write_jsonl(path, records)
}

pub fn write_records_to<W: Write>(w: W, records: &[PacketRecord]) -> std::io::Result<()> {
    write_jsonl_to(w, records)
}
