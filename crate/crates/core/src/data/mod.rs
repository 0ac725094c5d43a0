//! Datasets, synthetic shifted-domain generators, the bootstrap source pool
//! and the single-consumption target stream.

mod io;
mod pool;
mod stream;
mod synth;

pub use io::{load_binary, load_csv, read_matrix, write_csv, write_matrix, LabelColumn, MATRIX_MAGIC};
pub use pool::{LabeledBatch, SourcePool};
pub use stream::{AuditEntry, Query, QueryView, TargetStream};
pub use synth::{gen_class_shift_blobs, gen_two_moons_shift, BlobParams, TwoMoonsParams};

use ndarray::{Array2, Axis};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("num_classes must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("line {line}, column {column}: {value:?} is not a number")]
    NonNumeric { line: u64, column: usize, value: String },
    #[error("label column {0:?} not found in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("source pool is empty")]
    EmptyPool,
    #[error("source pool has no labels")]
    UnlabeledPool,
    #[error("query {0} was already consumed and burned")]
    Burned(usize),
    #[error("query {0} has not been served yet")]
    NotServed(usize),
    #[error("bad matrix file: {0}")]
    BadMatrix(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature matrix (rows are samples) with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    domain: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub domain: String,
    pub samples: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub labeled: bool,
    pub sha256: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        domain: impl Into<String>,
    ) -> Result<Self, DataError> {
        if num_classes < 2 {
            return Err(DataError::TooFewClasses(num_classes));
        }
        if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { row, col });
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(DataError::LengthMismatch {
                    features: features.nrows(),
                    labels: labels.len(),
                });
            }
            if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(DataError::LabelOutOfRange {
                    row,
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            domain: domain.into(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            domain: self.domain.clone(),
        }
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Same features, different labels. Used by audits that corrupt the
    /// hidden target labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset, DataError> {
        Dataset::new(self.features.clone(), Some(labels), self.num_classes, self.domain.clone())
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            let mut counts = vec![0; self.num_classes];
            for &y in l {
                counts[y] += 1;
            }
            counts
        })
    }

    /// SHA-256 over dims, little-endian features and labels.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for &y in labels {
                h.update((y as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            domain: self.domain.clone(),
            samples: self.len(),
            dim: self.dim(),
            num_classes: self.num_classes,
            labeled: self.labels.is_some(),
            sha256: self.sha256(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constructor_checks() {
        assert!(matches!(
            Dataset::new(array![[1.0, f64::NAN]], None, 2, "x"),
            Err(DataError::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            Dataset::new(array![[1.0], [2.0]], Some(vec![0, 2]), 2, "x"),
            Err(DataError::LabelOutOfRange { row: 1, .. })
        ));
        assert!(matches!(
            Dataset::new(array![[1.0]], Some(vec![0, 1]), 2, "x"),
            Err(DataError::LengthMismatch { .. })
        ));
        assert!(Dataset::new(array![[1.0]], None, 1, "x").is_err());
    }

    #[test]
    fn select_and_hash() {
        let d = Dataset::new(array![[1.0, 2.0], [3.0, 4.0]], Some(vec![0, 1]), 2, "src").unwrap();
        let s = d.select(&[1, 1, 0]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.labels().unwrap(), &[1, 1, 0]);
        assert_eq!(d.sha256(), d.clone().sha256());
        assert_ne!(d.sha256(), d.without_labels().sha256());
        assert_eq!(d.class_counts().unwrap(), vec![1, 1]);
    }
}
