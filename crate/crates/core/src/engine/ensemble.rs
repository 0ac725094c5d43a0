use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::argmax;
use crate::nn::{AdamConfig, NetError, Network, NetworkSpec, OptimizerState};

/// One member of the ensemble: network, optimizer moments and a private
/// RNG stream for its augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub net: Network,
    pub opt: OptimizerState,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) updates: u64,
}

impl Learner {
    pub fn new(net: Network, adam: AdamConfig, augment_seed: u64, stream: u64) -> Self {
        let opt = OptimizerState::new(&net, adam);
        let mut rng = ChaCha8Rng::seed_from_u64(augment_seed);
        rng.set_stream(stream);
        Self { net, opt, rng, updates: 0 }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerEnsemble {
    spec: NetworkSpec,
    learners: Vec<Learner>,
}

impl LearnerEnsemble {
    /// `count` learners. All share the `init_seed` initialization unless
    /// `distinct_init`, in which case learner `k` uses `init_seed + k`.
    /// Learner `k` augments with stream `k` of `augment_seed`.
    pub fn new(
        spec: &NetworkSpec,
        count: usize,
        init_seed: u64,
        augment_seed: u64,
        adam: AdamConfig,
        distinct_init: bool,
    ) -> Result<Self, NetError> {
        if count == 0 {
            return Err(NetError::InvalidSpec("an ensemble needs at least one learner".into()));
        }
        let shared = Network::new(spec, init_seed)?;
        let learners = (0..count)
            .map(|k| {
                let net = if distinct_init {
                    Network::new(spec, init_seed.wrapping_add(k as u64))?
                } else {
                    shared.clone()
                };
                Ok(Learner::new(net, adam, augment_seed, k as u64))
            })
            .collect::<Result<_, NetError>>()?;
        Ok(Self {
            spec: spec.clone(),
            learners,
        })
    }

    /// Wraps existing networks (e.g. from a checkpoint) with fresh optimizers.
    pub fn from_networks(networks: Vec<Network>, augment_seed: u64, adam: AdamConfig) -> Result<Self, NetError> {
        let spec = networks
            .first()
            .map(|n| n.spec().clone())
            .ok_or_else(|| NetError::InvalidSpec("an ensemble needs at least one learner".into()))?;
        if networks
            .iter()
            .any(|n| n.spec().input_dim != spec.input_dim || n.spec().num_classes != spec.num_classes)
        {
            return Err(NetError::InvalidSpec("learners must share input_dim and num_classes".into()));
        }
        let learners = networks
            .into_iter()
            .enumerate()
            .map(|(k, net)| Learner::new(net, adam, augment_seed, k as u64))
            .collect();
        Ok(Self { spec, learners })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn learners_mut(&mut self) -> &mut [Learner] {
        &mut self.learners
    }

    pub fn networks(&self) -> Vec<Network> {
        self.learners.iter().map(|l| l.net.clone()).collect()
    }

    /// Same learners in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            spec: self.spec.clone(),
            learners: order.iter().map(|&k| self.learners[k].clone()).collect(),
        }
    }
}

/// Mean of the learners' eval-mode probabilities. Each entry sums its K
/// terms in sorted order so the result does not depend on learner order.
pub fn ensemble_predict(ensemble: &LearnerEnsemble, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NetError> {
    let outputs: Vec<Array2<f64>> = ensemble
        .learners
        .iter()
        .map(|l| l.net.forward_eval(x).map(|o| o.probs))
        .collect::<Result<_, _>>()?;
    if outputs.len() == 1 {
        return Ok(outputs.into_iter().next().expect("one output"));
    }
    let k = outputs.len() as f64;
    let mut terms = Vec::with_capacity(outputs.len());
    Ok(Array2::from_shape_fn(outputs[0].raw_dim(), |idx| {
        terms.clear();
        terms.extend(outputs.iter().map(|o| o[idx]));
        terms.sort_by(f64::total_cmp);
        terms.iter().sum::<f64>() / k
    }))
}

pub fn predict_classes(probs: &Array2<f64>) -> Vec<usize> {
    probs.rows().into_iter().map(argmax).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ensemble(k: usize, distinct: bool) -> LearnerEnsemble {
        let spec = NetworkSpec::new(2, 3).with_hidden(vec![4]);
        LearnerEnsemble::new(&spec, k, 5, 6, AdamConfig::default(), distinct).unwrap()
    }

    #[test]
    fn single_learner_is_identity() {
        let e = ensemble(1, false);
        let x = array![[0.1, 0.2], [1.0, -1.0]];
        assert_eq!(
            ensemble_predict(&e, x.view()).unwrap(),
            e.learners()[0].net.forward_eval(x.view()).unwrap().probs
        );
    }

    #[test]
    fn mean_of_probabilities() {
        // two one-layer heads whose eval outputs are fixed probability rows
        let spec = NetworkSpec::new(1, 2).with_hidden(vec![]);
        let make = |p0: f64| {
            let mut net = Network::new(&spec, 0).unwrap();
            net.head.weight.fill(0.0);
            net.head.bias = array![p0.ln(), (1.0 - p0).ln()];
            net
        };
        let e = LearnerEnsemble::from_networks(vec![make(0.8), make(0.6)], 0, AdamConfig::default()).unwrap();
        let p = ensemble_predict(&e, array![[3.0]].view()).unwrap();
        assert!((p[[0, 0]] - 0.7).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.3).abs() < 1e-15);
        assert_eq!(predict_classes(&p), vec![0]);
    }

    #[test]
    fn learner_order_does_not_matter() {
        let e = ensemble(3, true);
        let x = array![[0.1, 0.2], [1.0, -1.0], [3.0, 0.5]];
        let a = ensemble_predict(&e, x.view()).unwrap();
        for order in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            assert_eq!(ensemble_predict(&e.permuted(&order), x.view()).unwrap(), a);
        }
    }

    #[test]
    fn shared_vs_distinct_init() {
        let shared = ensemble(2, false);
        assert_eq!(shared.learners()[0].net, shared.learners()[1].net);
        assert_ne!(shared.learners()[0].rng, shared.learners()[1].rng);
        let distinct = ensemble(2, true);
        assert_ne!(distinct.learners()[0].net, distinct.learners()[1].net);
    }
}
