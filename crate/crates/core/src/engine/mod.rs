//! Online adaptation with cross-domain bootstrapping and pseudo-label
//! co-supervision.
//!
//! Per target query every learner `k` gets its own bootstrap batch `S_k` from
//! the source pool and minimizes
//!
//! ```text
//! l_s(w_k, S_k) + l_t(peer -> k) + l_ent(w_k, T) + lambda * l_div(w_k, T)
//! ```
//!
//! with one accumulated gradient and one Adam step. The peer's hard
//! pseudo-labels come from its weak view of the query, masked at `tau`; the
//! student is trained on its strong view. After adapting, the query is
//! predicted by the mean of the learners' eval-mode probabilities.

mod ensemble;
pub mod losses;
mod run;

pub use ensemble::{ensemble_predict, predict_classes, Learner, LearnerEnsemble};
pub use run::{adapt_query, exchange_loss, run_online, source_loss, warmup, Policies};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::nn::{AdamConfig, NetError};
pub use losses::LossError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{mode:?} mode expects {expected} source batches, got {got}")]
    SourceBatches { mode: RunMode, expected: usize, got: usize },
    #[error("{mode:?} mode needs {expected} learners, ensemble has {got}")]
    LearnerCount { mode: RunMode, expected: usize, got: usize },
    #[error("empty query")]
    EmptyQuery,
    #[error("views differ in batch size: {0} vs {1}")]
    ViewMismatch(usize, usize),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// K bootstrapped learners exchanging pseudo-labels.
    Crodobo,
    /// One learner trained on its own pseudo-labels (no bootstrapping ensemble).
    Single,
    /// One learner trained on source batches only.
    SourceOnly,
    /// K learners on target objectives only; source is used for warm-up alone.
    Continual,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [RunMode::Crodobo, RunMode::Single, RunMode::SourceOnly, RunMode::Continual];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Crodobo => "crodobo",
            RunMode::Single => "single",
            RunMode::SourceOnly => "source_only",
            RunMode::Continual => "continual",
        }
    }

    pub fn uses_source(self) -> bool {
        !matches!(self, RunMode::Continual)
    }

    pub fn uses_target(self) -> bool {
        !matches!(self, RunMode::SourceOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Adam steps per query; 0 freezes the model (diagnostic).
    #[serde(default = "one")]
    pub steps_per_query: usize,
    /// Ensemble size K for `crodobo` and `continual`; the other modes use one learner.
    #[serde(default = "two")]
    pub learners: usize,
    #[serde(default = "yes")]
    pub use_exchange: bool,
    #[serde(default = "yes")]
    pub use_entropy: bool,
    #[serde(default = "yes")]
    pub use_diversity: bool,
    /// Source-only steps taken by every learner before the stream starts.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Update learners on separate threads within a query.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_mode() -> RunMode {
    RunMode::Crodobo
}
fn default_tau() -> f64 {
    0.95
}
fn default_lambda() -> f64 {
    0.4
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn yes() -> bool {
    true
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            tau: default_tau(),
            lambda: default_lambda(),
            steps_per_query: 1,
            learners: 2,
            use_exchange: true,
            use_entropy: true,
            use_diversity: true,
            warmup_steps: 0,
            parallel: false,
            adam: AdamConfig::default(),
        }
    }
}

impl HyperParams {
    pub fn learner_count(&self) -> usize {
        match self.mode {
            RunMode::Crodobo | RunMode::Continual => self.learners,
            RunMode::Single | RunMode::SourceOnly => 1,
        }
    }

    /// Returns `(field, message)` for the first invalid field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(("tau", format!("tau = {} is outside the valid range (0, 1]", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(("lambda", format!("lambda = {} must be a finite value >= 0", self.lambda)));
        }
        if self.learners == 0 {
            return Err(("learners", "learners must be >= 1".into()));
        }
        self.adam.validate().map_err(|m| ("adam", m))
    }
}

/// Per-learner loss values from the last adaptation step of a query.
/// Terms that are disabled or not computed in the current mode read 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub source: f64,
    pub exchange: f64,
    pub entropy: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerReport {
    pub losses: LossReport,
    /// Peer pseudo-labels that passed the confidence threshold.
    pub accepted: usize,
    /// Optimizer updates this learner had taken when the query was predicted.
    pub updates_at_prediction: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_index: usize,
    pub size: usize,
    /// Ensemble probabilities, one row per sample.
    pub probs: Vec<Vec<f64>>,
    /// Argmax of `probs`, lowest index on ties.
    pub predictions: Vec<usize>,
    pub learners: Vec<LearnerReport>,
}

impl QueryOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        if self.learners.is_empty() || self.size == 0 {
            return 0.0;
        }
        let accepted: usize = self.learners.iter().map(|l| l.accepted).sum();
        accepted as f64 / (self.size * self.learners.len()) as f64
    }
}
