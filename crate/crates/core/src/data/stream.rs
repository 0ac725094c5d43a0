use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DataError, Dataset};
use crate::clock;
use crate::metrics::HiddenLabels;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub query_index: usize,
    /// Row indices into the original target dataset.
    pub sample_indices: Vec<usize>,
    /// Milliseconds since the Unix epoch (0 where no clock is available).
    pub timestamp: u64,
}

/// The target domain as a one-shot sequence of queries.
///
/// Rows are stored in a seeded random order. Each query can be taken once;
/// when the [`Query`] handle is dropped its rows are overwritten with zeros.
/// Holding a `Query` borrows the stream mutably, so the next query cannot be
/// requested while the previous one is still alive.
#[derive(Debug)]
pub struct TargetStream {
    storage: Array2<f64>,
    order: Vec<usize>,
    labels: Option<Vec<usize>>,
    query_size: usize,
    seed: u64,
    cursor: usize,
    erased: Vec<bool>,
    audit: Vec<AuditEntry>,
}

/// One target mini-batch. Carries sealed labels that only the metrics module
/// can open; the engine works from [`Query::view`].
///
/// ```
/// use crodobo::data::{Dataset, TargetStream};
/// use ndarray::Array2;
///
/// let d = Dataset::new(Array2::ones((4, 2)), None, 2, "t").unwrap();
/// let mut stream = TargetStream::new(&d, 2, 0).unwrap();
/// let q = stream.next_query().unwrap();
/// let total = q.view().features.sum();
/// q.release();
/// assert_eq!(total, 4.0);
/// ```
///
/// A view cannot outlive its query:
///
/// ```compile_fail
/// # use crodobo::data::{Dataset, TargetStream};
/// # use ndarray::Array2;
/// # let d = Dataset::new(Array2::ones((4, 2)), None, 2, "t").unwrap();
/// # let mut stream = TargetStream::new(&d, 2, 0).unwrap();
/// let q = stream.next_query().unwrap();
/// let view = q.view();
/// q.release();
/// let _ = view.features.sum();
/// ```
///
/// and the next query cannot be taken while one is alive:
///
/// ```compile_fail
/// # use crodobo::data::{Dataset, TargetStream};
/// # use ndarray::Array2;
/// # let d = Dataset::new(Array2::ones((4, 2)), None, 2, "t").unwrap();
/// # let mut stream = TargetStream::new(&d, 2, 0).unwrap();
/// let first = stream.next_query().unwrap();
/// let second = stream.next_query().unwrap();
/// drop(first);
/// ```
#[derive(Debug)]
pub struct Query<'a> {
    index: usize,
    rows: ArrayViewMut2<'a, f64>,
    sample_indices: &'a [usize],
    hidden: HiddenLabels,
    erased: &'a mut bool,
}

/// Label-free view of a query.
#[derive(Debug, Clone, Copy)]
pub struct QueryView<'q> {
    pub index: usize,
    pub features: ArrayView2<'q, f64>,
}

impl QueryView<'_> {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TargetStream {
    pub fn new(dataset: &Dataset, query_size: usize, seed: u64) -> Result<Self, DataError> {
        if query_size == 0 {
            return Err(DataError::InvalidParameter("query size must be >= 1".into()));
        }
        if dataset.is_empty() {
            return Err(DataError::InvalidParameter("target stream needs at least one sample".into()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let storage = dataset.features().select(ndarray::Axis(0), &order);
        let labels = dataset.labels().map(|l| order.iter().map(|&i| l[i]).collect());
        let queries = dataset.len().div_ceil(query_size);
        Ok(Self {
            storage,
            order,
            labels,
            query_size,
            seed,
            cursor: 0,
            erased: vec![false; queries],
            audit: Vec::with_capacity(queries),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.order.len()
    }

    /// `ceil(N_T / B)`.
    pub fn num_queries(&self) -> usize {
        self.erased.len()
    }

    pub fn query_size(&self) -> usize {
        self.query_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.storage.ncols()
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor == self.num_queries()
    }

    pub fn queries_served(&self) -> usize {
        self.cursor
    }

    /// The stream order as indices into the original dataset.
    pub fn permutation(&self) -> &[usize] {
        &self.order
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    fn bounds(&self, j: usize) -> (usize, usize) {
        let start = j * self.query_size;
        (start, (start + self.query_size).min(self.num_samples()))
    }

    /// Hands out the next query, or `None` once all `M_T` have been served.
    pub fn next_query(&mut self) -> Option<Query<'_>> {
        if self.is_exhausted() {
            return None;
        }
        let j = self.cursor;
        self.cursor += 1;
        let (start, end) = self.bounds(j);
        self.audit.push(AuditEntry {
            query_index: j,
            sample_indices: self.order[start..end].to_vec(),
            timestamp: clock::now_millis(),
        });
        let hidden = HiddenLabels::seal(self.labels.as_ref().map(|l| l[start..end].to_vec()));
        Some(Query {
            index: j,
            rows: self.storage.slice_mut(s![start..end, ..]),
            sample_indices: &self.order[start..end],
            hidden,
            erased: &mut self.erased[j],
        })
    }

    /// Indexed re-read. Always fails: a served query is burned, an unserved
    /// one is not yet available.
    pub fn reread(&self, j: usize) -> Result<ArrayView2<'_, f64>, DataError> {
        if j < self.cursor {
            Err(DataError::Burned(j))
        } else {
            Err(DataError::NotServed(j))
        }
    }

    /// Debug hook: whether query `j`'s rows have been zeroized.
    #[doc(hidden)]
    pub fn is_erased(&self, j: usize) -> bool {
        self.erased[j]
    }

    /// Debug hook: the backing rows of query `j`, to inspect erasure.
    #[doc(hidden)]
    pub fn backing_rows(&self, j: usize) -> ArrayView2<'_, f64> {
        let (start, end) = self.bounds(j);
        self.storage.slice(s![start..end, ..])
    }
}

impl<'a> Query<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view(&self) -> QueryView<'_> {
        QueryView {
            index: self.index,
            features: self.rows.view(),
        }
    }

    pub fn sample_indices(&self) -> &[usize] {
        self.sample_indices
    }

    pub fn hidden_labels(&self) -> HiddenLabels {
        self.hidden.clone()
    }

    /// Ends the query: zeroizes its rows. Dropping has the same effect.
    pub fn release(self) {}
}

impl Drop for Query<'_> {
    fn drop(&mut self) {
        self.rows.fill(0.0);
        *self.erased = true;
    }
}
