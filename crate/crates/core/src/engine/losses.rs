//! Losses over softmax outputs. Each returns the scalar value together with
//! its gradient w.r.t. the logits that produced `probs`, ready to feed
//! [`Network::backward`](crate::nn::Network::backward).

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("{what}: expected {expected} rows, got {got}")]
    RowMismatch { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub dlogits: Array2<f64>,
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn neg_log(p: f64) -> f64 {
    -p.max(f64::MIN_POSITIVE).ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), LossError> {
    if labels.len() != rows {
        return Err(LossError::RowMismatch {
            what: "labels",
            expected: rows,
            got: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::LabelOutOfRange { row, label, classes });
    }
    Ok(())
}

/// Mean cross-entropy `-(1/B) sum_b log p[b, y_b]`.
pub fn cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossGrad, LossError> {
    masked_cross_entropy(probs, labels, &vec![true; probs.nrows()])
}

/// `(1/B) sum_b mask_b * (-log p[b, y_b])`. The denominator is the full
/// batch size, not the number of surviving rows.
pub fn masked_cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize], mask: &[bool]) -> Result<LossGrad, LossError> {
    let (b, c) = probs.dim();
    check_labels(labels, b, c)?;
    if mask.len() != b {
        return Err(LossError::RowMismatch {
            what: "mask",
            expected: b,
            got: mask.len(),
        });
    }
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    let mut dlogits = Array2::zeros((b, c));
    for (row, (&y, &keep)) in labels.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        value += neg_log(probs[[row, y]]);
        for k in 0..c {
            let target = if k == y { 1.0 } else { 0.0 };
            dlogits[[row, k]] = scale * (probs[[row, k]] - target);
        }
    }
    Ok(LossGrad {
        value: value * scale,
        dlogits,
    })
}

/// Mean Shannon entropy of the rows, with `0 log 0 = 0`.
pub fn entropy(probs: ArrayView2<'_, f64>) -> LossGrad {
    let (b, c) = probs.dim();
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    let mut dlogits = Array2::zeros((b, c));
    for (row, p) in probs.rows().into_iter().enumerate() {
        let h: f64 = -p.iter().map(|&v| xlogx(v)).sum::<f64>();
        value += h;
        // dH/dz_j = -p_j (log p_j + H)
        for (k, &pk) in p.iter().enumerate() {
            if pk > 0.0 {
                dlogits[[row, k]] = -scale * pk * (pk.ln() + h);
            }
        }
    }
    LossGrad {
        value: value * scale,
        dlogits,
    }
}

/// Negative entropy of the batch-mean prediction, `sum_c pbar_c log pbar_c`.
/// Minimized (at `-ln c`) by a uniform class marginal.
pub fn diversity(probs: ArrayView2<'_, f64>) -> LossGrad {
    let (b, c) = probs.dim();
    let scale = 1.0 / b as f64;
    let mean = probs.sum_axis(ndarray::Axis(0)) * scale;
    let value: f64 = mean.iter().map(|&v| xlogx(v)).sum();
    let log_mean = mean.mapv(|v| if v > 0.0 { v.ln() } else { 0.0 });
    let mut dlogits = Array2::zeros((b, c));
    for (row, p) in probs.rows().into_iter().enumerate() {
        // dL/dz_j = (1/B) p_j (log pbar_j - sum_i p_i log pbar_i)
        let dot: f64 = p.iter().zip(&log_mean).map(|(a, l)| a * l).sum();
        for k in 0..c {
            dlogits[[row, k]] = scale * p[k] * (log_mean[k] - dot);
        }
    }
    LossGrad { value, dlogits }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PseudoLabels {
    pub fn accepted(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Hard argmax labels with a confidence mask `max_c p >= tau`.
pub fn pseudo_labels(probs: ArrayView2<'_, f64>, tau: f64) -> PseudoLabels {
    let (labels, mask) = probs
        .rows()
        .into_iter()
        .map(|row| {
            let k = argmax(row);
            (k, row[k] >= tau)
        })
        .unzip();
    PseudoLabels { labels, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn uniform(b: usize, c: usize) -> Array2<f64> {
        Array2::from_elem((b, c), 1.0 / c as f64)
    }

    #[test]
    fn cross_entropy_edge_values() {
        let onehot = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(cross_entropy(onehot.view(), &[0, 2]).unwrap().value, 0.0);
        for c in [2, 3, 7] {
            let v = cross_entropy(uniform(5, c).view(), &[1; 5]).unwrap().value;
            assert!((v - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_hand_sum() {
        let p = array![[0.1, 0.6, 0.3], [0.25, 0.25, 0.5], [0.7, 0.2, 0.1], [0.05, 0.9, 0.05]];
        let labels = [1, 2, 0, 0];
        let hand = -(0.6f64.ln() + 0.5f64.ln() + 0.7f64.ln() + 0.05f64.ln()) / 4.0;
        assert!((cross_entropy(p.view(), &labels).unwrap().value - hand).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let p = uniform(2, 3);
        assert_eq!(
            cross_entropy(p.view(), &[0, 3]).unwrap_err(),
            LossError::LabelOutOfRange {
                row: 1,
                label: 3,
                classes: 3
            }
        );
        assert!(cross_entropy(p.view(), &[0]).is_err());
    }

    #[test]
    fn masked_cross_entropy_divides_by_full_batch() {
        let p = array![[0.9, 0.1], [0.3, 0.7], [0.6, 0.4], [0.2, 0.8]];
        let lg = masked_cross_entropy(p.view(), &[0, 1, 0, 0], &[true, false, true, false]).unwrap();
        let hand = (-(0.9f64.ln()) - 0.6f64.ln()) / 4.0;
        assert!((lg.value - hand).abs() < 1e-15);
        assert!(lg.dlogits.row(1).iter().all(|&v| v == 0.0));
        assert!(lg.dlogits.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_masked_is_exactly_zero() {
        let p = array![[0.6, 0.4], [0.5, 0.5]];
        let lg = masked_cross_entropy(p.view(), &[0, 0], &[false, false]).unwrap();
        assert_eq!(lg.value, 0.0);
        assert!(lg.dlogits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(array![[1.0, 0.0], [0.0, 1.0]].view()).value, 0.0);
        for c in [2, 4, 10] {
            assert!((entropy(uniform(3, c).view()).value - (c as f64).ln()).abs() < 1e-12);
        }
        let v = entropy(array![[0.8, 0.2]].view()).value;
        assert!((v - 0.5004024235381879).abs() < 1e-15);
        assert!((v - 0.5004).abs() < 1e-4);
    }

    #[test]
    fn diversity_values() {
        for c in [2, 3, 5] {
            assert!((diversity(uniform(4, c).view()).value + (c as f64).ln()).abs() < 1e-12);
        }
        assert_eq!(diversity(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]].view()).value, 0.0);
        let v = diversity(array![[1.0, 0.0], [0.0, 1.0]].view()).value;
        assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_examples() {
        let pl = pseudo_labels(array![[0.97, 0.03], [0.90, 0.10], [0.5, 0.5]].view(), 0.95);
        assert_eq!(pl.labels, vec![0, 0, 0]);
        assert_eq!(pl.mask, vec![true, false, false]);
        assert_eq!(pl.accepted(), 1);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![0.2, 0.4, 0.4].view()), 1);
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
    }

    fn prob_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..8, 2usize..6).prop_flat_map(|(b, c)| {
            prop::collection::vec(0.001f64..1.0, b * c).prop_map(move |v| {
                let mut m = Array2::from_shape_vec((b, c), v).unwrap();
                for mut row in m.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn raising_tau_never_unmasks(p in prob_matrix(), t1 in 0.01f64..1.0, dt in 0.0f64..0.5) {
            let low = pseudo_labels(p.view(), t1);
            let high = pseudo_labels(p.view(), (t1 + dt).min(1.0));
            prop_assert_eq!(&low.labels, &high.labels);
            for (l, h) in low.mask.iter().zip(&high.mask) {
                prop_assert!(!(*h && !*l));
            }
            prop_assert!(high.accepted() <= low.accepted());
        }

        #[test]
        fn entropy_and_diversity_bounds(p in prob_matrix()) {
            let c = p.ncols() as f64;
            let h = entropy(p.view()).value;
            prop_assert!(h >= -1e-12 && h <= c.ln() + 1e-12);
            let d = diversity(p.view()).value;
            prop_assert!(d >= -c.ln() - 1e-12 && d <= 1e-12);
            // the batch marginal is at least as uncertain as the average row
            prop_assert!(-d >= h - 1e-12);
        }
    }
}
