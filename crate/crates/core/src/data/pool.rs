use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Source row of each sample.
    pub indices: Vec<usize>,
}

/// Labeled source data plus the RNG used for bootstrap draws. The data is
/// never modified; draws are uniform with replacement.
#[derive(Debug, Clone)]
pub struct SourcePool {
    data: Arc<Dataset>,
    rng: ChaCha8Rng,
}

impl SourcePool {
    pub fn new(data: Arc<Dataset>, seed: u64) -> Result<Self, DataError> {
        if data.is_empty() {
            return Err(DataError::EmptyPool);
        }
        if data.labels().is_none() {
            return Err(DataError::UnlabeledPool);
        }
        Ok(Self {
            data,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn draw_indices(&mut self, size: usize) -> Vec<usize> {
        let n = self.data.len();
        (0..size).map(|_| self.rng.random_range(0..n)).collect()
    }

    /// `k` independent batches of `batch_size` rows, each drawn uniformly
    /// with replacement.
    pub fn bootstrap_batches(&mut self, k: usize, batch_size: usize) -> Result<Vec<LabeledBatch>, DataError> {
        if k == 0 {
            return Err(DataError::InvalidParameter("bootstrap needs K >= 1".into()));
        }
        if batch_size < 2 {
            return Err(DataError::InvalidParameter("bootstrap batches need B >= 2".into()));
        }
        let draws: Vec<Vec<usize>> = (0..k).map(|_| self.draw_indices(batch_size)).collect();
        let labels = self.data.labels().expect("checked at construction");
        Ok(draws
            .into_iter()
            .map(|indices| LabeledBatch {
                features: self.data.features().select(Axis(0), &indices),
                labels: indices.iter().map(|&i| labels[i]).collect(),
                indices,
            })
            .collect())
    }
}
