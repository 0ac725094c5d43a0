//! Accuracy bookkeeping. This is the only module that can open the labels a
//! [`Query`](crate::data::Query) carries.

use std::fmt;
use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::engine::{ensemble_predict, predict_classes, LearnerEnsemble, QueryOutcome};
use crate::nn::NetError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace is incomplete: {served} of {expected} queries recorded")]
    Incomplete { served: usize, expected: usize },
    #[error("one-pass evaluation requested mid-stream ({served} of {expected} queries)")]
    MidStream { served: usize, expected: usize },
    #[error("target labels are not available")]
    Unlabeled,
    #[error("need at least {needed} reports, got {got}")]
    TooFewReports { needed: usize, got: usize },
    #[error("reports come from different configurations ({0} vs {1})")]
    MixedConfigs(String, String),
    #[error("prediction and label counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Labels of one query, readable only inside this module.
#[derive(Clone, PartialEq, Eq)]
pub struct HiddenLabels(Option<Vec<usize>>);

impl HiddenLabels {
    pub(crate) fn seal(labels: Option<Vec<usize>>) -> Self {
        Self(labels)
    }

    fn open(&self) -> Option<&[usize]> {
        self.0.as_deref()
    }
}

impl fmt::Debug for HiddenLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HiddenLabels(..)")
    }
}

/// Outcomes of a run in query order, with the sealed labels next to them.
#[derive(Debug, Clone)]
pub struct RunTrace {
    expected_queries: usize,
    expected_samples: usize,
    num_classes: usize,
    outcomes: Vec<QueryOutcome>,
    hidden: Vec<HiddenLabels>,
    wall_clock_secs: f64,
}

impl RunTrace {
    pub fn new(expected_queries: usize, expected_samples: usize, num_classes: usize) -> Self {
        Self {
            expected_queries,
            expected_samples,
            num_classes,
            outcomes: Vec::with_capacity(expected_queries),
            hidden: Vec::with_capacity(expected_queries),
            wall_clock_secs: 0.0,
        }
    }

    pub fn record(&mut self, outcome: QueryOutcome, hidden: HiddenLabels) {
        self.outcomes.push(outcome);
        self.hidden.push(hidden);
    }

    pub fn set_wall_clock(&mut self, secs: f64) {
        self.wall_clock_secs = secs;
    }

    pub fn outcomes(&self) -> &[QueryOutcome] {
        &self.outcomes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn wall_clock_secs(&self) -> f64 {
        self.wall_clock_secs
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.len() == self.expected_queries && self.outcomes.iter().map(|o| o.size).sum::<usize>() == self.expected_samples
    }

    fn check_complete(&self) -> Result<(), MetricsError> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(MetricsError::Incomplete {
                served: self.outcomes.len(),
                expected: self.expected_queries,
            })
        }
    }

    /// Size and number of correct predictions per query.
    pub fn tallies(&self) -> Result<Vec<QueryTally>, MetricsError> {
        self.outcomes
            .iter()
            .zip(&self.hidden)
            .map(|(o, h)| {
                let labels = h.open().ok_or(MetricsError::Unlabeled)?;
                if labels.len() != o.predictions.len() {
                    return Err(MetricsError::LengthMismatch(o.predictions.len(), labels.len()));
                }
                let correct = o.predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
                Ok(QueryTally { size: o.size, correct })
            })
            .collect()
    }

    pub fn has_labels(&self) -> bool {
        self.hidden.iter().all(|h| h.open().is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTally {
    pub size: usize,
    pub correct: usize,
}

impl QueryTally {
    pub fn accuracy(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.correct as f64 / self.size as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Correct predictions over all streamed samples.
    #[default]
    Sample,
    /// Unweighted mean of per-query accuracies.
    Query,
}

pub fn weighted_accuracy(tallies: &[QueryTally], weighting: Weighting) -> f64 {
    if tallies.is_empty() {
        return 0.0;
    }
    match weighting {
        Weighting::Sample => {
            let n: usize = tallies.iter().map(|t| t.size).sum();
            let correct: usize = tallies.iter().map(|t| t.correct).sum();
            if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            }
        }
        Weighting::Query => tallies.iter().map(QueryTally::accuracy).sum::<f64>() / tallies.len() as f64,
    }
}

/// Accuracy of the adapt-then-test predictions over the whole stream.
pub fn online_average(trace: &RunTrace, weighting: Weighting) -> Result<f64, MetricsError> {
    trace.check_complete()?;
    Ok(weighted_accuracy(&trace.tallies()?, weighting))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnePass {
    pub overall: f64,
    /// Recall per class; `None` for classes absent from the data.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that occur.
    pub class_average: f64,
}

pub fn accuracy_summary(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<OnePass, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let correct: usize = hits.iter().sum();
    Ok(OnePass {
        overall: if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        },
        class_average: if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        },
        per_class,
    })
}

/// Frozen eval-mode accuracy of the final ensemble over a retained copy of
/// the target set. Only valid once the stream behind `trace` is finished.
pub fn one_pass(ensemble: &LearnerEnsemble, held: &Dataset, trace: &RunTrace) -> Result<OnePass, MetricsError> {
    if !trace.is_complete() {
        return Err(MetricsError::MidStream {
            served: trace.outcomes.len(),
            expected: trace.expected_queries,
        });
    }
    let labels = held.labels().ok_or(MetricsError::Unlabeled)?;
    let predictions = predict_all(ensemble, held.features().view())?;
    accuracy_summary(&predictions, labels, held.num_classes())
}

fn predict_all(ensemble: &LearnerEnsemble, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, MetricsError> {
    Ok(predict_classes(&ensemble_predict(ensemble, x)?))
}

/// Mean loss values over queries and learners; `None` for terms the run
/// never computes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub source: Option<f64>,
    pub exchange: Option<f64>,
    pub entropy: Option<f64>,
    pub diversity: Option<f64>,
}

/// Which loss terms a run computes, in the order source, exchange, entropy, diversity.
pub fn summarize_losses(trace: &RunTrace, active: [bool; 4]) -> LossSummary {
    let mut sums = [0.0; 4];
    let mut n = 0usize;
    for l in trace.outcomes.iter().flat_map(|o| &o.learners) {
        let v = [l.losses.source, l.losses.exchange, l.losses.entropy, l.losses.diversity];
        for (s, x) in sums.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    let mean = |i: usize| (active[i] && n > 0).then(|| sums[i] / n as f64);
    LossSummary {
        source: mean(0),
        exchange: mean(1),
        entropy: mean(2),
        diversity: mean(3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub mode: String,
    /// Hash of the run configuration with the stream seed left out.
    pub config_fingerprint: String,
    pub stream_seed: u64,
    pub num_samples: usize,
    pub num_queries: usize,
    pub online_average: f64,
    pub online_average_query_weighted: f64,
    pub one_pass_overall: f64,
    pub one_pass_per_class: Vec<Option<f64>>,
    pub one_pass_class_average: f64,
    pub per_query_accuracy: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub mean_acceptance_rate: f64,
    pub losses: LossSummary,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub label: String,
    pub mode: String,
    pub config_fingerprint: String,
    pub stream_seed: u64,
    pub active_losses: [bool; 4],
}

pub fn build_report(trace: &RunTrace, one_pass: &OnePass, meta: ReportMeta) -> Result<MetricsReport, MetricsError> {
    trace.check_complete()?;
    let tallies = trace.tallies()?;
    let acceptance: Vec<f64> = trace.outcomes.iter().map(QueryOutcome::acceptance_rate).collect();
    let mean_acceptance = if acceptance.is_empty() {
        0.0
    } else {
        acceptance.iter().sum::<f64>() / acceptance.len() as f64
    };
    Ok(MetricsReport {
        label: meta.label,
        mode: meta.mode,
        config_fingerprint: meta.config_fingerprint,
        stream_seed: meta.stream_seed,
        num_samples: trace.expected_samples,
        num_queries: trace.expected_queries,
        online_average: weighted_accuracy(&tallies, Weighting::Sample),
        online_average_query_weighted: weighted_accuracy(&tallies, Weighting::Query),
        one_pass_overall: one_pass.overall,
        one_pass_per_class: one_pass.per_class.clone(),
        one_pass_class_average: one_pass.class_average,
        per_query_accuracy: tallies.iter().map(QueryTally::accuracy).collect(),
        acceptance_rate: acceptance,
        mean_acceptance_rate: mean_acceptance,
        losses: summarize_losses(trace, meta.active_losses),
        wall_clock_secs: trace.wall_clock_secs,
    })
}

pub const VARIANCE_FORMULA: &str = "var = (1/n) * sum_i (x_i - mean)^2 (population variance)";

/// Mean and population variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

/// One row per metric, one column per stream seed, then mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub variance_formula: String,
    pub config_fingerprint: String,
    pub stream_seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
}

pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<SeedAggregate, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports {
            needed: 2,
            got: reports.len(),
        });
    }
    let first = &reports[0].config_fingerprint;
    if let Some(other) = reports.iter().find(|r| &r.config_fingerprint != first) {
        return Err(MetricsError::MixedConfigs(first.clone(), other.config_fingerprint.clone()));
    }
    let metric = |name: &str, f: &dyn Fn(&MetricsReport) -> f64| {
        let values: Vec<f64> = reports.iter().map(f).collect();
        let (mean, var) = mean_and_variance(&values);
        AggregateRow {
            metric: name.to_string(),
            values,
            mean,
            var,
        }
    };
    Ok(SeedAggregate {
        variance_formula: VARIANCE_FORMULA.to_string(),
        config_fingerprint: first.clone(),
        stream_seeds: reports.iter().map(|r| r.stream_seed).collect(),
        rows: vec![
            metric("online_average", &|r| 100.0 * r.online_average),
            metric("one_pass_overall", &|r| 100.0 * r.one_pass_overall),
            metric("one_pass_class_average", &|r| 100.0 * r.one_pass_class_average),
        ],
    })
}

impl SeedAggregate {
    pub fn row(&self, metric: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        header.extend(self.stream_seeds.iter().map(|s| format!("seed_{s}")));
        header.extend(["mean".to_string(), "var".to_string()]);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.metric.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v:.4}")));
            rec.push(format!("{:.4}", row.mean));
            rec.push(format!("{:.4}", row.var));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    query_index: usize,
    size: usize,
    correct: Option<usize>,
    accuracy: Option<f64>,
    acceptance_rate: f64,
    predictions: &'a [usize],
    probs: &'a [Vec<f64>],
    learners: &'a [crate::engine::LearnerReport],
}

/// One JSON object per query. Wall-clock time is left out so that reruns of
/// the same configuration produce byte-identical output.
pub fn trace_jsonl(trace: &RunTrace) -> Result<String, MetricsError> {
    let tallies = trace.tallies().ok();
    let mut out = String::new();
    for (j, o) in trace.outcomes.iter().enumerate() {
        let t = tallies.as_ref().map(|t| t[j]);
        let line = TraceLine {
            query_index: o.query_index,
            size: o.size,
            correct: t.map(|t| t.correct),
            accuracy: t.map(|t| t.accuracy()),
            acceptance_rate: o.acceptance_rate(),
            predictions: &o.predictions,
            probs: &o.probs,
            learners: &o.learners,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Columns: query index, size, correct, accuracy, running online average,
/// acceptance rate.
pub fn write_per_query_csv<W: Write>(trace: &RunTrace, out: W) -> Result<(), MetricsError> {
    let tallies = trace.tallies()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "query_index",
        "size",
        "correct",
        "accuracy",
        "online_average_so_far",
        "acceptance_rate",
    ])?;
    let (mut n, mut c) = (0usize, 0usize);
    for (o, t) in trace.outcomes.iter().zip(&tallies) {
        n += t.size;
        c += t.correct;
        w.write_record([
            o.query_index.to_string(),
            t.size.to_string(),
            t.correct.to_string(),
            format!("{:.6}", t.accuracy()),
            format!("{:.6}", c as f64 / n as f64),
            format!("{:.6}", o.acceptance_rate()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportRow<'a> {
    label: &'a str,
    mode: &'a str,
    stream_seed: u64,
    num_samples: usize,
    num_queries: usize,
    online_average: f64,
    online_average_query_weighted: f64,
    one_pass_overall: f64,
    one_pass_class_average: f64,
    mean_acceptance_rate: f64,
    loss_source: Option<f64>,
    loss_exchange: Option<f64>,
    loss_entropy: Option<f64>,
    loss_diversity: Option<f64>,
    wall_clock_secs: f64,
}

/// Flat CSV, one row per report.
pub fn write_reports_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ReportRow {
            label: &r.label,
            mode: &r.mode,
            stream_seed: r.stream_seed,
            num_samples: r.num_samples,
            num_queries: r.num_queries,
            online_average: r.online_average,
            online_average_query_weighted: r.online_average_query_weighted,
            one_pass_overall: r.one_pass_overall,
            one_pass_class_average: r.one_pass_class_average,
            mean_acceptance_rate: r.mean_acceptance_rate,
            loss_source: r.losses.source,
            loss_exchange: r.losses.exchange,
            loss_entropy: r.losses.entropy,
            loss_diversity: r.losses.diversity,
            wall_clock_secs: r.wall_clock_secs,
        })?;
    }
    w.flush()?;
    Ok(())
}
