use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use super::Label;

#[derive(Debug, Error)]
pub enum LabelTableError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("ground truth header must be `flow_id,label`, found `{0}`")]
    BadHeader(String),
    #[error("line {line}: label must be 0 or 1, found `{value}`")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: duplicate flow id `{flow_id}`")]
    Duplicate { line: u64, flow_id: String },
}

/// Ground truth: flow id → benign/malicious.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelTable {
    labels: HashMap<String, Label>,
}

impl LabelTable {
    pub fn from_pairs<I: IntoIterator<Item = (String, Label)>>(pairs: I) -> Result<Self, LabelTableError> {
        let mut labels = HashMap::new();
        for (i, (id, label)) in pairs.into_iter().enumerate() {
            if labels.insert(id.clone(), label).is_some() {
                return Err(LabelTableError::Duplicate {
                    line: i as u64 + 2,
                    flow_id: id,
                });
            }
        }
        Ok(Self { labels })
    }

    pub fn get(&self, flow_id: &str) -> Option<Label> {
        self.labels.get(flow_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reads a CSV with header `flow_id,label`.
    pub fn read_csv(path: &Path) -> Result<Self, LabelTableError> {
        let csv_err = |source| LabelTableError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 || &headers[0] != "flow_id" || &headers[1] != "label" {
            return Err(LabelTableError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
        }
        let mut labels = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let label = match rec[1].trim() {
                "0" => Label::Benign,
                "1" => Label::Malicious,
                other => {
                    return Err(LabelTableError::BadLabel {
                        line,
                        value: other.to_string(),
                    })
                }
            };
            let id = rec[0].to_string();
            if labels.insert(id.clone(), label).is_some() {
                return Err(LabelTableError::Duplicate { line, flow_id: id });
            }
        }
        Ok(Self { labels })
    }

    /// Writes rows sorted by flow id.
    pub fn write_csv(&self, path: &Path) -> Result<(), LabelTableError> {
        let csv_err = |source| LabelTableError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["flow_id", "label"]).map_err(csv_err)?;
        let mut rows: Vec<_> = self.labels.iter().collect();
        rows.sort();
        for (id, label) in rows {
            let c = label.class().unwrap_or(0).to_string();
            w.write_record([id.as_str(), c.as_str()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))?;
        Ok(())
    }
}
