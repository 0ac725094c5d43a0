use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ensemble::{ensemble_predict, predict_classes, Learner, LearnerEnsemble};
use super::losses::{self, PseudoLabels};
use super::{EngineError, HyperParams, LearnerReport, LossReport, QueryOutcome, RunMode};
use crate::augment::{strong_augment, weak_augment, AugmentPolicy, WeakAugment};
use crate::clock::Stopwatch;
use crate::data::{LabeledBatch, QueryView, SourcePool, TargetStream};
use crate::metrics::RunTrace;
use crate::nn::{adam_step, ForwardCache, Gradients, Network};

/// Augmentation settings. Source batches and the pseudo-labelling pass see
/// the weak view; the exchange loss sees the strong view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policies {
    #[serde(default)]
    pub weak: WeakAugment,
    #[serde(default)]
    pub strong: AugmentPolicy,
}

/// Mean cross-entropy of a train-mode pass over a labeled batch.
pub fn source_loss(net: &mut Network, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Gradients), EngineError> {
    let (out, cache) = net.forward_train(features)?;
    let lg = losses::cross_entropy(out.probs.view(), labels)?;
    let grads = net.backward(&cache, &lg.dlogits)?;
    Ok((lg.value, grads))
}

/// Masked cross-entropy of the student's strong-view prediction against the
/// teacher's hard labels. The teacher only contributes label values, so no
/// gradient reaches it. With nothing above `tau` the student is not even run:
/// the loss is 0 and the gradients are exactly zero.
pub fn exchange_loss(
    student: &mut Network,
    teacher_probs: ArrayView2<'_, f64>,
    strong_view: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Gradients, PseudoLabels), EngineError> {
    if teacher_probs.nrows() != strong_view.nrows() {
        return Err(EngineError::ViewMismatch(teacher_probs.nrows(), strong_view.nrows()));
    }
    let pl = losses::pseudo_labels(teacher_probs, tau);
    if pl.accepted() == 0 {
        return Ok((0.0, Gradients::zeros_like(student), pl));
    }
    let (value, grads) = masked_pass(student, strong_view, &pl)?;
    Ok((value, grads, pl))
}

fn masked_pass(net: &mut Network, x: ArrayView2<'_, f64>, pl: &PseudoLabels) -> Result<(f64, Gradients), EngineError> {
    let (out, cache) = net.forward_train(x)?;
    let lg = losses::masked_cross_entropy(out.probs.view(), &pl.labels, &pl.mask)?;
    Ok((lg.value, net.backward(&cache, &lg.dlogits)?))
}

struct WeakPass {
    probs: Array2<f64>,
    cache: ForwardCache,
}

/// Runs `f` on every learner, on scoped threads when `parallel`. Results
/// come back in learner order either way.
fn each_learner<I, T, F>(learners: &mut [Learner], inputs: Vec<I>, parallel: bool, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(usize, &mut Learner, I) -> T + Sync,
{
    if parallel && learners.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = learners
                .iter_mut()
                .zip(inputs)
                .enumerate()
                .map(|(k, (learner, input))| {
                    let f = &f;
                    scope.spawn(move || f(k, learner, input))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                .collect()
        })
    } else {
        learners
            .iter_mut()
            .zip(inputs)
            .enumerate()
            .map(|(k, (learner, input))| f(k, learner, input))
            .collect()
    }
}

fn learner_update(
    learner: &mut Learner,
    query: ArrayView2<'_, f64>,
    source: Option<&LabeledBatch>,
    weak_pass: Option<WeakPass>,
    teacher: Option<&PseudoLabels>,
    hp: &HyperParams,
    policies: &Policies,
) -> Result<(LossReport, usize), EngineError> {
    let mut report = LossReport::default();
    let mut accepted = 0;
    let mut grads = Gradients::zeros_like(&learner.net);

    if let Some(batch) = source {
        let xs = weak_augment(batch.features.view(), &policies.weak, &mut learner.rng);
        let (value, g) = source_loss(&mut learner.net, xs.view(), &batch.labels)?;
        report.source = value;
        grads.add_assign(&g);
    }

    if let Some(pass) = weak_pass {
        let mut dlogits: Option<Array2<f64>> = None;
        if hp.use_entropy {
            let ent = losses::entropy(pass.probs.view());
            report.entropy = ent.value;
            dlogits = Some(ent.dlogits);
        }
        if hp.use_diversity {
            let div = losses::diversity(pass.probs.view());
            report.diversity = div.value;
            if hp.lambda != 0.0 {
                let scaled = div.dlogits * hp.lambda;
                dlogits = Some(match dlogits {
                    Some(d) => d + scaled,
                    None => scaled,
                });
            }
        }
        if let Some(d) = dlogits {
            grads.add_assign(&learner.net.backward(&pass.cache, &d)?);
        }
    }

    if let (true, Some(pl)) = (hp.use_exchange, teacher) {
        accepted = pl.accepted();
        if accepted > 0 {
            let strong = strong_augment(query, &policies.strong, &mut learner.rng);
            let (value, g) = masked_pass(&mut learner.net, strong.view(), pl)?;
            report.exchange = value;
            grads.add_assign(&g);
        }
    }

    adam_step(&mut learner.net, &grads, &mut learner.opt)?;
    learner.updates += 1;
    Ok((report, accepted))
}

/// Adapts the ensemble on one query, then predicts it with the updated
/// learners (adapt, then test).
pub fn adapt_query(
    ensemble: &mut LearnerEnsemble,
    query: QueryView<'_>,
    source_batches: &[LabeledBatch],
    hp: &HyperParams,
    policies: &Policies,
) -> Result<QueryOutcome, EngineError> {
    if query.is_empty() {
        return Err(EngineError::EmptyQuery);
    }
    let k = ensemble.len();
    if k != hp.learner_count() {
        return Err(EngineError::LearnerCount {
            mode: hp.mode,
            expected: hp.learner_count(),
            got: k,
        });
    }
    let expected_batches = if hp.mode.uses_source() && hp.steps_per_query > 0 { k } else { 0 };
    if source_batches.len() != expected_batches {
        return Err(EngineError::SourceBatches {
            mode: hp.mode,
            expected: expected_batches,
            got: source_batches.len(),
        });
    }
    let x = query.features;
    // batch statistics need two rows; a singleton remainder query only gets l_s
    let target_terms = hp.mode.uses_target() && x.nrows() >= 2;

    let mut reports = vec![(LossReport::default(), 0usize); k];
    for _ in 0..hp.steps_per_query {
        let passes: Vec<Option<WeakPass>> = if target_terms {
            each_learner(ensemble.learners_mut(), vec![(); k], hp.parallel, |_, learner, ()| {
                let weak = weak_augment(x, &policies.weak, &mut learner.rng);
                let (out, cache) = learner.net.forward_train(weak.view())?;
                Ok::<_, EngineError>(Some(WeakPass { probs: out.probs, cache }))
            })
            .into_iter()
            .collect::<Result<_, _>>()?
        } else {
            (0..k).map(|_| None).collect()
        };

        // phase barrier: every learner's weak prediction exists before any update
        let pseudo: Vec<Option<PseudoLabels>> = passes
            .iter()
            .map(|p| p.as_ref().map(|p| losses::pseudo_labels(p.probs.view(), hp.tau)))
            .collect();
        let peer = |j: usize| {
            if hp.mode == RunMode::Crodobo || hp.mode == RunMode::Continual {
                (j + 1) % k
            } else {
                j
            }
        };

        let inputs: Vec<_> = passes.into_iter().collect();
        let results = each_learner(ensemble.learners_mut(), inputs, hp.parallel, |j, learner, pass| {
            learner_update(learner, x, source_batches.get(j), pass, pseudo[peer(j)].as_ref(), hp, policies)
        });
        for (slot, r) in reports.iter_mut().zip(results) {
            *slot = r?;
        }
    }

    let probs = ensemble_predict(ensemble, x)?;
    let predictions = predict_classes(&probs);
    Ok(QueryOutcome {
        query_index: query.index,
        size: x.nrows(),
        probs: probs.rows().into_iter().map(|r| r.to_vec()).collect(),
        predictions,
        learners: reports
            .into_iter()
            .zip(ensemble.learners())
            .map(|((losses, accepted), l)| LearnerReport {
                losses,
                accepted,
                updates_at_prediction: l.updates,
            })
            .collect(),
    })
}

/// Source-only steps on every learner (each with its own bootstrap batch).
pub fn warmup(
    ensemble: &mut LearnerEnsemble,
    pool: &mut SourcePool,
    steps: usize,
    batch_size: usize,
    policies: &Policies,
    parallel: bool,
) -> Result<(), EngineError> {
    let k = ensemble.len();
    for _ in 0..steps {
        let batches = pool.bootstrap_batches(k, batch_size)?;
        each_learner(ensemble.learners_mut(), batches, parallel, |_, learner, batch| {
            let xs = weak_augment(batch.features.view(), &policies.weak, &mut learner.rng);
            let (_, g) = source_loss(&mut learner.net, xs.view(), &batch.labels)?;
            adam_step(&mut learner.net, &g, &mut learner.opt)?;
            learner.updates += 1;
            Ok::<_, EngineError>(())
        })
        .into_iter()
        .collect::<Result<Vec<()>, _>>()?;
    }
    Ok(())
}

/// Consumes the whole stream: each query is adapted on, predicted, recorded
/// and released (zeroized) before the next one is requested. Source batches
/// have the stream's query size.
pub fn run_online(
    ensemble: &mut LearnerEnsemble,
    mut pool: Option<&mut SourcePool>,
    stream: &mut TargetStream,
    hp: &HyperParams,
    policies: &Policies,
) -> Result<RunTrace, EngineError> {
    hp.validate().map_err(|(_, m)| EngineError::Config(m))?;
    policies.strong.validate().map_err(EngineError::Config)?;
    if stream.dim() != ensemble.spec().input_dim {
        return Err(EngineError::Net(crate::nn::NetError::DimensionMismatch {
            expected: ensemble.spec().input_dim,
            got: stream.dim(),
        }));
    }
    let batch_size = stream.query_size().max(2);
    let needs_pool = hp.warmup_steps > 0 || (hp.mode.uses_source() && hp.steps_per_query > 0);
    if needs_pool && pool.is_none() {
        return Err(EngineError::Config(format!("{} mode needs a source pool", hp.mode.name())));
    }
    let clock = Stopwatch::start();
    if hp.warmup_steps > 0 {
        let p = pool.as_deref_mut().expect("checked above");
        warmup(ensemble, p, hp.warmup_steps, batch_size, policies, hp.parallel)?;
    }

    let mut trace = RunTrace::new(stream.num_queries(), stream.num_samples(), ensemble.spec().num_classes);
    while let Some(query) = stream.next_query() {
        let batches = match pool.as_deref_mut() {
            Some(p) if hp.mode.uses_source() && hp.steps_per_query > 0 => p.bootstrap_batches(ensemble.len(), batch_size)?,
            _ => Vec::new(),
        };
        let outcome = adapt_query(ensemble, query.view(), &batches, hp, policies)?;
        trace.record(outcome, query.hidden_labels());
        query.release();
    }
    trace.set_wall_clock(clock.elapsed_secs());
    Ok(trace)
}
