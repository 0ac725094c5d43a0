//! Central finite-difference verification of the hand-written backward pass.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{Fault, Gradients, NetError, Network, NetworkSpec};
use crate::engine::losses;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Supervised cross-entropy on a labeled batch.
    Source,
    /// Masked cross-entropy against fixed teacher pseudo-labels.
    Exchange,
    Entropy,
    Diversity,
    /// All four terms over three separate forward passes, as in one adapt step.
    Combined,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Source,
        LossKind::Exchange,
        LossKind::Entropy,
        LossKind::Diversity,
        LossKind::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Source => "l_s",
            LossKind::Exchange => "l_t",
            LossKind::Entropy => "l_ent",
            LossKind::Diversity => "l_div",
            LossKind::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub fault: Fault,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            batch_size: 6,
            tau: 0.7,
            lambda: 0.4,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub loss: LossKind,
    /// `||analytic - numeric|| / (||analytic|| + ||numeric||)` over all parameters.
    pub relative_error: f64,
    pub dense_error: f64,
    pub batch_norm_error: f64,
    pub head_error: f64,
}

impl GradCheckResult {
    pub fn max_error(&self) -> f64 {
        [self.relative_error, self.dense_error, self.batch_norm_error, self.head_error]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

struct Problem {
    source_x: Array2<f64>,
    source_y: Vec<usize>,
    weak_x: Array2<f64>,
    strong_x: Array2<f64>,
    teacher_labels: Vec<usize>,
    teacher_mask: Vec<bool>,
}

impl Problem {
    fn random(spec: &NetworkSpec, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Self {
        let b = opts.batch_size;
        let c = spec.num_classes;
        let matrix = |rng: &mut ChaCha8Rng| Array2::from_shape_simple_fn((b, spec.input_dim), || StandardNormal.sample(&mut *rng));
        let source_x = matrix(rng);
        let weak_x = matrix(rng);
        let strong_x = &weak_x + &(matrix(rng) * 0.3);
        let source_y = (0..b).map(|_| rng.random_range(0..c)).collect();
        // alternate confident and flat teacher rows so the mask is mixed
        let mut teacher = Array2::<f64>::zeros((b, c));
        for (i, mut row) in teacher.rows_mut().into_iter().enumerate() {
            let k = rng.random_range(0..c);
            row[k] = if i % 2 == 0 { 6.0 } else { 0.1 };
        }
        let pl = losses::pseudo_labels(super::softmax_rows(&teacher).view(), opts.tau);
        Self {
            source_x,
            source_y,
            weak_x,
            strong_x,
            teacher_labels: pl.labels,
            teacher_mask: pl.mask,
        }
    }
}

type PassLoss = Box<dyn Fn(ArrayView2<'_, f64>) -> losses::LossGrad>;

/// The (input, loss) pairs making up one loss kind.
fn passes(problem: &Problem, loss: LossKind, lambda: f64) -> Vec<(Array2<f64>, PassLoss)> {
    let source = {
        let y = problem.source_y.clone();
        let f: PassLoss = Box::new(move |p| losses::cross_entropy(p, &y).expect("valid labels"));
        (problem.source_x.clone(), f)
    };
    let exchange = {
        let (y, m) = (problem.teacher_labels.clone(), problem.teacher_mask.clone());
        let f: PassLoss = Box::new(move |p| losses::masked_cross_entropy(p, &y, &m).expect("valid labels"));
        (problem.strong_x.clone(), f)
    };
    let entropy: PassLoss = Box::new(losses::entropy);
    let diversity: PassLoss = Box::new(losses::diversity);
    match loss {
        LossKind::Source => vec![source],
        LossKind::Exchange => vec![exchange],
        LossKind::Entropy => vec![(problem.weak_x.clone(), entropy)],
        LossKind::Diversity => vec![(problem.weak_x.clone(), diversity)],
        LossKind::Combined => {
            let weak: PassLoss = Box::new(move |p| {
                let e = losses::entropy(p);
                let d = losses::diversity(p);
                losses::LossGrad {
                    value: e.value + lambda * d.value,
                    dlogits: e.dlogits + d.dlogits * lambda,
                }
            });
            vec![source, (problem.weak_x.clone(), weak), exchange]
        }
    }
}

fn total_loss(net: &Network, passes: &[(Array2<f64>, PassLoss)]) -> f64 {
    passes
        .iter()
        .map(|(x, f)| {
            let (out, _) = net.forward_batch_stats(x.view()).expect("valid batch");
            f(out.probs.view()).value
        })
        .sum()
}

fn analytic(net: &Network, passes: &[(Array2<f64>, PassLoss)], fault: Fault) -> Result<Gradients, NetError> {
    let mut total = Gradients::zeros_like(net);
    for (x, f) in passes {
        let (out, cache) = net.forward_batch_stats(x.view())?;
        let lg = f(out.probs.view());
        total.add_assign(&net.backward_with(&cache, &lg.dlogits, fault)?);
    }
    Ok(total)
}

fn relative(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let denom = norm(&mut a.iter().copied()) + norm(&mut n.iter().copied());
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Checks `loss` on a freshly initialised network with a random batch drawn
/// from `seed`.
pub fn grad_check_with(spec: &NetworkSpec, seed: u64, loss: LossKind, opts: &GradCheckOptions) -> Result<GradCheckResult, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec, rng.random())?;
    // move BN off its identity initialisation so gamma/beta paths are exercised
    for layer in &mut net.hidden {
        layer.bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        layer.bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let problem = Problem::random(spec, opts, &mut rng);
    let passes = passes(&problem, loss, opts.lambda);

    let analytic = analytic(&net, &passes, opts.fault)?
        .tensors()
        .iter()
        .map(|t| t.to_vec())
        .collect::<Vec<_>>();
    let h = opts.step;
    let mut numeric: Vec<Vec<f64>> = analytic.iter().map(|t| vec![0.0; t.len()]).collect();
    for (t, grad) in numeric.iter_mut().enumerate() {
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = net.params()[t][i];
            net.params_mut()[t][i] = orig + h;
            let plus = total_loss(&net, &passes);
            net.params_mut()[t][i] = orig - h;
            let minus = total_loss(&net, &passes);
            net.params_mut()[t][i] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
    }

    let layers = spec.hidden_dims.len();
    let group = |pick: &dyn Fn(usize) -> bool| {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for t in (0..analytic.len()).filter(|&t| pick(t)) {
            a.extend_from_slice(&analytic[t]);
            n.extend_from_slice(&numeric[t]);
        }
        relative(&a, &n)
    };
    Ok(GradCheckResult {
        loss,
        relative_error: group(&|_| true),
        dense_error: group(&|t| t < 4 * layers && t % 4 < 2),
        batch_norm_error: group(&|t| t < 4 * layers && t % 4 >= 2),
        head_error: group(&|t| t >= 4 * layers),
    })
}

/// Largest per-group relative error for `loss` at the default options.
pub fn grad_check(spec: &NetworkSpec, seed: u64, loss: LossKind) -> Result<f64, NetError> {
    Ok(grad_check_with(spec, seed, loss, &GradCheckOptions::default())?.max_error())
}

/// Specs cycled through by batteries of random instances: one and two hidden
/// blocks, two to four classes.
pub fn battery_spec(instance: usize) -> NetworkSpec {
    let shapes: [(usize, &[usize], usize); 4] = [(3, &[5], 2), (2, &[6, 4], 3), (4, &[3, 5], 4), (3, &[7], 3)];
    let (input, hidden, classes) = shapes[instance % shapes.len()];
    NetworkSpec::new(input, classes).with_hidden(hidden.to_vec())
}
