//! Line-delimited JSON helpers with line- and key-aware errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: key `{key}`: {message}")]
    Schema {
        line: usize,
        key: String,
        message: String,
    },
}

impl JsonlError {
    pub fn schema(line: usize, key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            line,
            key: key.into(),
            message: message.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses one JSON document; on failure the error names the offending key path.
pub fn parse_line<T: DeserializeOwned>(line_no: usize, text: &str) -> Result<T, JsonlError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let key = e.path().to_string();
        JsonlError::schema(line_no, if key == "." { "<root>".into() } else { key }, e.into_inner().to_string())
    })
}

pub fn read_jsonl_from<T: DeserializeOwned, R: BufRead>(r: R, path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, &line)?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_jsonl_from(BufReader::new(f), path)
}

pub fn write_jsonl_to<T: Serialize, W: Write>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_jsonl_to(BufWriter::new(f), items).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_line(1, &text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}
