//! Versioned little-endian tensor container shared by every model.
//!
//! Layout:
//!
//! ```text
//! magic   b"NIDT"
//! u32     format version (1)
//! u32     model kind
//! u32     n_meta, then n_meta u32 header words (dimensions, enums)
//! u32     n_tensors, then (u32 rows, u32 cols) per tensor
//! f32...  every tensor, row-major, in header order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: [u8; 4] = *b"NIDT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Autoencoder = 1,
    SequenceModel = 2,
    Mlp = 3,
}

impl ModelKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Self::Autoencoder),
            2 => Some(Self::SequenceModel),
            3 => Some(Self::Mlp),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a parameter file (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown model kind {0}")]
    UnknownKind(u32),
    #[error("expected a {expected:?} file, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("non-finite value in tensor {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ModelKind,
    pub meta: Vec<u32>,
    pub tensors: Vec<Matrix>,
}

impl Container {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for m in &self.meta {
            w.write_all(&m.to_le_bytes())?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
        }
        for t in &self.tensors {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let kind_raw = read_u32(&mut r)?;
        let kind = ModelKind::from_u32(kind_raw).ok_or(ContainerError::UnknownKind(kind_raw))?;
        let n_meta = read_u32(&mut r)? as usize;
        if n_meta > 4096 {
            return Err(ContainerError::Malformed(format!("{n_meta} header words")));
        }
        let meta = (0..n_meta)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let n_tensors = read_u32(&mut r)? as usize;
        if n_tensors > 65536 {
            return Err(ContainerError::Malformed(format!("{n_tensors} tensors")));
        }
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            shapes.push((rows, cols));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        let mut buf = [0u8; 4];
        for (i, (rows, cols)) in shapes.into_iter().enumerate() {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                let v = f32::from_le_bytes(buf) as f64;
                if !v.is_finite() {
                    return Err(ContainerError::NonFinite(i));
                }
                data.push(v);
            }
            tensors.push(Matrix::from_vec(rows, cols, data));
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn expect_kind(self, expected: ModelKind) -> Result<Self, ContainerError> {
        if self.kind != expected {
            return Err(ContainerError::WrongKind {
                expected,
                found: self.kind,
            });
        }
        Ok(self)
    }

    /// Checks that tensor shapes match `expected`, in order.
    pub fn check_shapes(&self, expected: &[(usize, usize)]) -> Result<(), ContainerError> {
        if self.tensors.len() != expected.len() {
            return Err(ContainerError::Malformed(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (i, (t, want)) in self.tensors.iter().zip(expected).enumerate() {
            if t.shape() != *want {
                return Err(ContainerError::Malformed(format!(
                    "tensor {i} has shape {:?}, expected {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ContainerError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            kind: ModelKind::Mlp,
            meta: vec![3, 4, 2],
            tensors: vec![
                Matrix::from_vec(2, 2, vec![1.0, -2.5, 0.125, 3.0]),
                Matrix::row_vector(vec![0.5, 0.25]),
            ],
        }
    }

    #[test]
    fn layout_is_little_endian_f32() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"NIDT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        // 4 magic + 4 version + 4 kind + 4 n_meta + 12 meta + 4 n_tensors + 16 shapes
        let data_start = 48;
        assert_eq!(&bytes[data_start..data_start + 4], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), data_start + 6 * 4);
        let back = Container::read_from(&bytes[..]).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn rejects_foreign_files() {
        let err = Container::read_from(&b"PK\x03\x04rest"[..]).unwrap_err();
        assert!(matches!(err, ContainerError::BadMagic(_)));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(Container::read_from(&bytes[..]).is_err());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let err = sample().expect_kind(ModelKind::Autoencoder).unwrap_err();
        assert!(matches!(err, ContainerError::WrongKind { .. }));
    }
}
