//! Binary embedding file.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "FAEB" | version u32 = 1 | D u32 | K u32 | N u64
//! K × (name_len u32, UTF-8 name bytes)
//! prompt_flag u8 (1 = bank present) [then K × D f32 prompt rows]
//! N × (label u32, D × f32 features)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"FAEB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"FAEB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}, expected 1")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("feature dimension must be >= 1")]
    ZeroDimension,
    #[error("class name {class} is not valid UTF-8")]
    InvalidUtf8 { class: usize },
    #[error("prompt flag must be 0 or 1, got {0}")]
    InvalidPromptFlag(u8),
    #[error("prompt row for class {class} has zero norm")]
    ZeroPromptRow { class: usize },
    #[error("record {record} has label {label} but only {classes} classes exist")]
    LabelOutOfRange { record: usize, label: u32, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

/// Labeled feature vectors plus per-class prompt embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    feature_dim: usize,
    class_names: Vec<String>,
    prompt_bank: Option<Vec<f32>>,
    labels: Vec<u32>,
    features: Vec<f32>,
}

impl EmbeddingDataset {
    pub fn new(
        feature_dim: usize,
        class_names: Vec<String>,
        prompt_bank: Option<Vec<f32>>,
        labels: Vec<u32>,
        features: Vec<f32>,
    ) -> Result<Self, FormatError> {
        let ds = EmbeddingDataset {
            feature_dim,
            class_names,
            prompt_bank,
            labels,
            features,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let (d, k) = (self.feature_dim, self.class_names.len());
        if d == 0 {
            return Err(FormatError::ZeroDimension);
        }
        if let Some(bank) = &self.prompt_bank {
            if bank.len() != k * d {
                return Err(FormatError::Inconsistent(format!(
                    "prompt bank has {} values, expected {}",
                    bank.len(),
                    k * d
                )));
            }
            if bank.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite("prompt bank"));
            }
            for (class, row) in bank.chunks(d).enumerate() {
                if row.iter().all(|&v| v == 0.0) {
                    return Err(FormatError::ZeroPromptRow { class });
                }
            }
        }
        if self.features.len() != self.labels.len() * d {
            return Err(FormatError::Inconsistent(format!(
                "{} feature values for {} records of width {d}",
                self.features.len(),
                self.labels.len()
            )));
        }
        if let Some((record, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize >= k) {
            return Err(FormatError::LabelOutOfRange {
                record,
                label,
                classes: k,
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite("features"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn prompt_bank(&self) -> Option<&[f32]> {
        self.prompt_bank.as_deref()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn raw_features(&self) -> &[f32] {
        &self.features
    }

    /// Records at `indices`, in that order; header fields are shared.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        EmbeddingDataset {
            feature_dim: self.feature_dim,
            class_names: self.class_names.clone(),
            prompt_bank: self.prompt_bank.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            features,
        }
    }

    pub fn features_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_vec(
            self.len(),
            self.feature_dim,
            self.features.iter().map(|&v| T::of_f32(v)).collect(),
        )
        .expect("validated shape")
    }

    pub fn prompt_matrix<T: Scalar>(&self) -> Option<Matrix<T>> {
        self.prompt_bank.as_ref().map(|bank| {
            Matrix::from_vec(
                self.n_classes(),
                self.feature_dim,
                bank.iter().map(|&v| T::of_f32(v)).collect(),
            )
            .expect("validated shape")
        })
    }

    /// Same header, in particular the same class table and width.
    pub fn compatible_with(&self, other: &Self) -> bool {
        self.feature_dim == other.feature_dim && self.class_names == other.class_names
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.feature_dim;
        let mut out = Vec::with_capacity(25 + self.features.len() * 4 + self.labels.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        match &self.prompt_bank {
            Some(bank) => {
                out.push(1);
                bank.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            None => out.push(0),
        }
        for (i, &label) in self.labels.iter().enumerate() {
            out.extend_from_slice(&label.to_le_bytes());
            self.feature(i)
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let d = r.u32("feature dimension")? as usize;
        if d == 0 {
            return Err(FormatError::ZeroDimension);
        }
        let k = r.u32("class count")? as usize;
        let n = r.u64("record count")?;
        let mut class_names = Vec::with_capacity(k.min(1 << 16));
        for class in 0..k {
            let len = r.u32("class name length")? as usize;
            let raw = r.take(len, "class name")?;
            let name = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8 { class })?;
            class_names.push(name.to_owned());
        }
        let prompt_bank = match r.take(1, "prompt flag")?[0] {
            0 => None,
            1 => Some(r.f32s(k * d, "prompt bank")?),
            other => return Err(FormatError::InvalidPromptFlag(other)),
        };
        let record_bytes = 4 + 4 * d as u64;
        let remaining = (bytes.len() - r.pos) as u64;
        if n.checked_mul(record_bytes).is_none_or(|need| need > remaining) {
            return Err(FormatError::Truncated("records"));
        }
        let n = n as usize;
        let mut labels = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n * d);
        for record in 0..n {
            let label = r.u32("record label")?;
            if label as usize >= k {
                return Err(FormatError::LabelOutOfRange {
                    record,
                    label,
                    classes: k,
                });
            }
            labels.push(label);
            features.extend(r.f32s(d, "record features")?);
        }
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
        }
        EmbeddingDataset::new(d, class_names, prompt_bank, labels, features)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(Error::from)
    }
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.write(path)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    EmbeddingDataset::read(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated(what))?;
        let slice = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let len = n.checked_mul(4).ok_or(FormatError::Truncated(what))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
