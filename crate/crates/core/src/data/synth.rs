use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Centre of the noiseless two-moons layout; the target domain rotates about it.
pub const MOONS_CENTER: [f64; 2] = [0.5, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoMoonsParams {
    pub n_source: usize,
    pub n_target: usize,
    pub noise_sd: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default)]
    pub translation: [f64; 2],
}

impl Default for TwoMoonsParams {
    fn default() -> Self {
        Self {
            n_source: 2000,
            n_target: 2000,
            noise_sd: 0.2,
            rotation_deg: 45.0,
            translation: [0.0, 0.0],
        }
    }
}

fn domain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn moons(n: usize, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = rng.random_range(0.0..PI);
        let (px, py) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x[[i, 0]] = px + noise.sample(rng);
        x[[i, 1]] = py + noise.sample(rng);
        y.push(label);
    }
    (x, y)
}

/// Two interleaving moons (label 0 = upper moon). The target domain is a
/// fresh draw rotated about [`MOONS_CENTER`] and then translated. Source and
/// target use disjoint streams of the same seed.
pub fn gen_two_moons_shift(p: &TwoMoonsParams, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if p.n_source < 2 || p.n_target < 2 {
        return Err(DataError::InvalidParameter("two-moons needs at least 2 samples per domain".into()));
    }
    let bad_noise = || DataError::InvalidParameter(format!("noise_sd must be a finite value >= 0, got {}", p.noise_sd));
    if !(p.noise_sd >= 0.0) {
        return Err(bad_noise());
    }
    let noise = Normal::new(0.0, p.noise_sd).map_err(|_| bad_noise())?;
    let (xs, ys) = moons(p.n_source, &noise, &mut domain_rng(seed, 0));
    let (mut xt, yt) = moons(p.n_target, &noise, &mut domain_rng(seed, 1));
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let [cx, cy] = MOONS_CENTER;
    for mut row in xt.rows_mut() {
        let (dx, dy) = (row[0] - cx, row[1] - cy);
        row[0] = cx + cos * dx - sin * dy + p.translation[0];
        row[1] = cy + sin * dx + cos * dy + p.translation[1];
    }
    Ok((Dataset::new(xs, Some(ys), 2, "source")?, Dataset::new(xt, Some(yt), 2, "target")?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub num_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    #[serde(default)]
    pub mean_shift: f64,
    #[serde(default = "one")]
    pub cov_scale: f64,
    /// Target class weights (normalized internally); empty means balanced.
    #[serde(default)]
    pub class_imbalance: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// Half-width of the box the class centres are drawn from.
pub const BLOB_CENTER_BOX: f64 = 5.0;

/// Isotropic unit-variance Gaussian blobs, centres uniform in
/// `[-5, 5]^dim`. The source is balanced with `n_per_class` rows per class.
/// The target has `num_classes * n_per_class` rows with labels drawn i.i.d.
/// from `class_imbalance`, every centre moved by `mean_shift` along one
/// seeded unit direction and the covariance multiplied by `cov_scale`.
pub fn gen_class_shift_blobs(p: &BlobParams, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let c = p.num_classes;
    if c < 2 || p.n_per_class == 0 || p.dim == 0 {
        return Err(DataError::InvalidParameter(
            "blobs need num_classes >= 2, n_per_class >= 1, dim >= 1".into(),
        ));
    }
    if !(p.cov_scale > 0.0) {
        return Err(DataError::InvalidParameter("cov_scale must be positive".into()));
    }
    let weights = if p.class_imbalance.is_empty() {
        vec![1.0; c]
    } else {
        p.class_imbalance.clone()
    };
    if weights.len() != c || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(DataError::InvalidParameter(format!(
            "class_imbalance needs {c} positive weights, got {:?}",
            p.class_imbalance
        )));
    }

    let mut layout = domain_rng(seed, 2);
    let centers = Array2::from_shape_simple_fn((c, p.dim), || layout.random_range(-BLOB_CENTER_BOX..BLOB_CENTER_BOX));
    let mut direction: Vec<f64> = (0..p.dim).map(|_| StandardNormal.sample(&mut layout)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    direction.iter_mut().for_each(|v| *v /= norm);

    let n = c * p.n_per_class;
    let mut src = domain_rng(seed, 0);
    let ys: Vec<usize> = (0..n).map(|i| i % c).collect();
    let xs = Array2::from_shape_fn((n, p.dim), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut src);
        centers[[ys[i], j]] + z
    });

    let mut tgt = domain_rng(seed, 1);
    let picker = WeightedIndex::new(&weights).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let yt: Vec<usize> = (0..n).map(|_| picker.sample(&mut tgt)).collect();
    let sd = p.cov_scale.sqrt();
    let xt = Array2::from_shape_fn((n, p.dim), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut tgt);
        centers[[yt[i], j]] + p.mean_shift * direction[j] + sd * z
    });
    Ok((Dataset::new(xs, Some(ys), c, "source")?, Dataset::new(xt, Some(yt), c, "target")?))
}
