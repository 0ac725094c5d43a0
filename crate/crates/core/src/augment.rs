//! Weak and strong stochastic views of feature vectors.
//!
//! The strong policy mirrors RandAugment's two knobs: `num_ops` operations
//! are drawn uniformly (with replacement) from the pool for every sample and
//! applied in draw order, each at strength `magnitude * op_max`. Magnitude 0
//! is the identity. No operation changes dimensionality.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeakAugment {
    Identity,
    /// Additive `N(0, sigma^2)` noise on every feature, `sigma` in feature units.
    Jitter {
        sigma: f64,
    },
}

impl Default for WeakAugment {
    fn default() -> Self {
        WeakAugment::Jitter { sigma: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrongOp {
    /// Adds `N(0, (m * sigma)^2)` per feature.
    GaussianNoise { sigma: f64 },
    /// Zeroes each feature independently with probability `m * rate`.
    FeatureDropout { rate: f64 },
    /// Multiplies the whole sample by `s ~ U[1 - m * range, 1 + m * range]`.
    GlobalScale { range: f64 },
    /// Adds `U[-m * range, m * range]` independently per feature.
    AdditiveShift { range: f64 },
    /// Zeroes a contiguous block of `round(m * fraction * d)` features.
    FeatureCutout { fraction: f64 },
}

impl StrongOp {
    pub fn name(&self) -> &'static str {
        match self {
            StrongOp::GaussianNoise { .. } => "gaussian_noise",
            StrongOp::FeatureDropout { .. } => "feature_dropout",
            StrongOp::GlobalScale { .. } => "global_scale",
            StrongOp::AdditiveShift { .. } => "additive_shift",
            StrongOp::FeatureCutout { .. } => "feature_cutout",
        }
    }

    fn apply<R: Rng + ?Sized>(&self, row: &mut [f64], m: f64, rng: &mut R) {
        let d = row.len();
        match *self {
            StrongOp::GaussianNoise { sigma } => {
                let s = m * sigma;
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += s * z;
                }
            }
            StrongOp::FeatureDropout { rate } => {
                let p = (m * rate).clamp(0.0, 1.0);
                for v in row.iter_mut() {
                    if rng.random::<f64>() < p {
                        *v = 0.0;
                    }
                }
            }
            StrongOp::GlobalScale { range } => {
                let r = m * range;
                let s = 1.0 + r * (2.0 * rng.random::<f64>() - 1.0);
                row.iter_mut().for_each(|v| *v *= s);
            }
            StrongOp::AdditiveShift { range } => {
                let r = m * range;
                for v in row.iter_mut() {
                    *v += r * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            StrongOp::FeatureCutout { fraction } => {
                let len = ((m * fraction * d as f64).round() as usize).min(d);
                if len > 0 {
                    let start = rng.random_range(0..=d - len);
                    row[start..start + len].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let (name, v) = match *self {
            StrongOp::GaussianNoise { sigma } => ("sigma", sigma),
            StrongOp::FeatureDropout { rate } => ("rate", rate),
            StrongOp::GlobalScale { range } => ("range", range),
            StrongOp::AdditiveShift { range } => ("range", range),
            StrongOp::FeatureCutout { fraction } => ("fraction", fraction),
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("{}: {name} must be a finite non-negative number", self.name()));
        }
        if matches!(self, StrongOp::FeatureDropout { .. } | StrongOp::FeatureCutout { .. }) && v > 1.0 {
            return Err(format!("{}: {name} must be at most 1", self.name()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default = "default_pool")]
    pub ops: Vec<StrongOp>,
    #[serde(default = "default_num_ops")]
    pub num_ops: usize,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

pub fn default_pool() -> Vec<StrongOp> {
    vec![
        StrongOp::GaussianNoise { sigma: 0.5 },
        StrongOp::FeatureDropout { rate: 0.8 },
        StrongOp::GlobalScale { range: 0.5 },
        StrongOp::AdditiveShift { range: 0.5 },
        StrongOp::FeatureCutout { fraction: 0.5 },
    ]
}

fn default_num_ops() -> usize {
    2
}

fn default_magnitude() -> f64 {
    0.5
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            ops: default_pool(),
            num_ops: default_num_ops(),
            magnitude: default_magnitude(),
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.magnitude) {
            return Err(format!("magnitude must lie in [0, 1], got {}", self.magnitude));
        }
        if self.ops.is_empty() && self.num_ops > 0 {
            return Err("strong policy needs at least one op when num_ops > 0".into());
        }
        self.ops.iter().try_for_each(StrongOp::validate)
    }
}

pub fn weak_augment<R: Rng + ?Sized>(x: ArrayView2<'_, f64>, weak: &WeakAugment, rng: &mut R) -> Array2<f64> {
    match *weak {
        WeakAugment::Jitter { sigma } if sigma > 0.0 => x.mapv(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        }),
        _ => x.to_owned(),
    }
}

pub fn strong_augment<R: Rng + ?Sized>(x: ArrayView2<'_, f64>, policy: &AugmentPolicy, rng: &mut R) -> Array2<f64> {
    strong_augment_logged(x, policy, rng).0
}

/// Like [`strong_augment`], also returning the pool indices applied to each
/// sample, in application order.
pub fn strong_augment_logged<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut out = x.to_owned();
    if policy.magnitude == 0.0 || policy.num_ops == 0 || policy.ops.is_empty() {
        return (out, vec![Vec::new(); x.nrows()]);
    }
    let mut log = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let row = row.as_slice_mut().expect("owned rows are contiguous");
        let picks: Vec<usize> = (0..policy.num_ops).map(|_| rng.random_range(0..policy.ops.len())).collect();
        for &k in &picks {
            policy.ops[k].apply(row, policy.magnitude, rng);
        }
        log.push(picks);
    }
    (out, log)
}
