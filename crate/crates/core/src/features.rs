//! Feature sets and the `LEADFEAT` container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       8         magic "LEADFEAT"
//! 8       4         version (u32, = 1)
//! 12      4         reserved, zero
//! 16      8         N (u64)
//! 24      8         D (u64)
//! 32      8         K (u64)
//! 40      4*N*D     features, f32 row-major
//! ..      4*N       labels, u32
//! ..      2         model id length (u16)
//! ..      len       model id, UTF-8
//! ```
//!
//! Features are stored at single precision and widened to `f64` for all
//! downstream math.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LEADFEAT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

/// Embeddings and class labels for one (model, dataset) pair.
///
/// Construction validates every invariant, so a `FeatureSet` in hand is
/// always well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    model_id: String,
    dim: usize,
    num_classes: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

/// Row indices of each class, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndexMap {
    pub classes: Vec<Vec<usize>>,
}

impl ClassIndexMap {
    pub fn class(&self, k: usize) -> &[usize] {
        &self.classes[k]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }
}

impl FeatureSet {
    pub fn new(
        model_id: impl Into<String>,
        dim: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        let fs = FeatureSet {
            model_id: model_id.into(),
            dim,
            num_classes,
            features,
            labels,
        };
        fs.validate()?;
        Ok(fs)
    }

    /// Builds a feature set from a row-major `f64` matrix, rounding to `f32`.
    pub fn from_f64(
        model_id: impl Into<String>,
        features: &Array2<f64>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        let dim = features.ncols();
        let flat = features.iter().map(|&v| v as f32).collect();
        Self::new(model_id, dim, flat, labels, num_classes)
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let k = self.num_classes;
        if k < 2 || n < k {
            return Err(Error::InvalidFeatureSet(format!(
                "need N >= K >= 2, got N = {n}, K = {k}"
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidFeatureSet("D must be at least 1".into()));
        }
        if self.features.len() != n * self.dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for N = {n}, D = {}",
                self.features.len(),
                self.dim
            )));
        }
        if self.model_id.len() > u16::MAX as usize {
            return Err(Error::InvalidFeatureSet(format!(
                "model id is {} bytes, limit is {}",
                self.model_id.len(),
                u16::MAX
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / self.dim,
                col: pos % self.dim,
            });
        }
        let mut seen = vec![false; k];
        for (row, &label) in self.labels.iter().enumerate() {
            if label as usize >= k {
                return Err(Error::LabelOutOfRange {
                    row,
                    label,
                    num_classes: k,
                });
            }
            seen[label as usize] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass(empty));
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn raw_features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    /// Features widened to `f64`, shape `N x D`.
    pub fn features_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.dim), |(r, c)| {
            self.features[r * self.dim + c] as f64
        })
    }

    /// Widened features for the given rows only.
    pub fn rows_f64(&self, rows: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), self.dim), |(r, c)| {
            self.features[rows[r] * self.dim + c] as f64
        })
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Result<Self> {
        self.model_id = model_id.into();
        self.validate()?;
        Ok(self)
    }

    /// Keeps only `rows` (in the given order). Fails if a class ends up empty.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::InvalidFeatureSet(format!(
                    "row {r} out of range for N = {}",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self::new(
            self.model_id.clone(),
            self.dim,
            features,
            labels,
            self.num_classes,
        )
    }

    /// Scales every row to unit Euclidean norm; all-zero rows are left alone.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.features.chunks_mut(self.dim) {
            let norm = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let id = self.model_id.as_bytes();
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * n * self.dim + 4 * n + 2 + id.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&[0; 4]);
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_classes as u64).to_le_bytes());
        for v in &self.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::DimensionMismatch(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[12..16] != [0; 4] {
            return Err(Error::InvalidFeatureSet("reserved header bytes are not zero".into()));
        }
        let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let (n, d, k) = (read_u64(16), read_u64(24), read_u64(32));

        let payload = &bytes[HEADER_LEN..];
        let feature_bytes = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(4))
            .ok_or_else(|| Error::DimensionMismatch(format!("N = {n}, D = {d} overflows")))?;
        let label_bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::DimensionMismatch(format!("N = {n} overflows")))?;
        let fixed = feature_bytes
            .checked_add(label_bytes)
            .and_then(|s| s.checked_add(2))
            .ok_or_else(|| Error::DimensionMismatch("declared sizes overflow".into()))?;
        if (payload.len() as u64) < fixed {
            return Err(Error::DimensionMismatch(format!(
                "declared N = {n}, D = {d} needs at least {fixed} payload bytes, found {}",
                payload.len()
            )));
        }
        let (d, k) = (d as usize, k as usize);
        let feature_bytes = feature_bytes as usize;
        let label_bytes = label_bytes as usize;

        let features: Vec<f32> = payload[..feature_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels: Vec<u32> = payload[feature_bytes..feature_bytes + label_bytes]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rest = &payload[feature_bytes + label_bytes..];
        let id_len = u16::from_le_bytes([rest[0], rest[1]]) as usize;
        if rest.len() - 2 != id_len {
            return Err(Error::DimensionMismatch(format!(
                "model id declares {id_len} bytes, {} remain",
                rest.len() - 2
            )));
        }
        let model_id = std::str::from_utf8(&rest[2..])
            .map_err(|e| Error::InvalidFeatureSet(format!("model id is not UTF-8: {e}")))?
            .to_owned();

        FeatureSet::new(model_id, d, features, labels, k)
    }
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::from_bytes(&bytes)
}

pub fn write_feature_file(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs.validate()?;
    std::fs::write(path, fs.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn split_by_class(fs: &FeatureSet) -> ClassIndexMap {
    let mut classes = vec![Vec::new(); fs.num_classes()];
    for (row, &label) in fs.labels().iter().enumerate() {
        classes[label as usize].push(row);
    }
    ClassIndexMap { classes }
}
