//! Supervised contrastive loss over paired views.
//!
//! Every anchor pulls its positives (other views sharing its label) together
//! against all remaining views:
//!
//! ```text
//! loss = sum_i (-1/|P(i)|) sum_{j in P(i)} ln( exp(<z_i,z_j>/tau)
//!                                              / sum_{k != i} exp(<z_i,z_k>/tau) )
//! ```
//!
//! In the asymmetric buffer variant only current-task views act as anchors
//! and as positives; buffer views enter the denominator alone. A batch where
//! every view is an anchor recovers the symmetric loss exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::losses::{log_sum_exp, LossOutput, RelationDistribution, RelationKind};
use crate::math;

pub fn supcon_loss(batch: &EmbeddingBatch, tau: f64) -> Result<LossOutput> {
    supcon_loss_opts(batch, tau, false)
}

/// As [`supcon_loss`], optionally skipping anchors that have no positive
/// view instead of failing on them.
pub fn supcon_loss_opts(
    batch: &EmbeddingBatch,
    tau: f64,
    skip_degenerate_anchors: bool,
) -> Result<LossOutput> {
    if !(tau > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let n_views = batch.len();
    if batch.anchors().next().is_none() {
        return Err(Error::EmptyBatch);
    }

    let mut out = LossOutput::zeros(n_views, batch.dim());
    for i in batch.anchors() {
        let positives = batch.positives(i);
        if positives.is_empty() {
            if skip_degenerate_anchors {
                continue;
            }
            return Err(Error::DegenerateAnchor { index: i });
        }

        let zi = batch.embedding(i);
        let mut others = Vec::with_capacity(n_views - 1);
        let mut logits = Vec::with_capacity(n_views - 1);
        for m in 0..n_views {
            if m != i {
                others.push(m);
                logits.push(dot(zi, batch.embedding(m)) / tau);
            }
        }
        let log_denom = log_sum_exp(&logits);

        let inv_p = 1.0 / positives.len() as f64;
        let mut is_positive = vec![false; n_views];
        for &j in &positives {
            is_positive[j] = true;
            out.value -= inv_p * (dot(zi, batch.embedding(j)) / tau - log_denom);
        }

        for (&m, &logit) in others.iter().zip(logits.iter()) {
            let softmax = math::exp(logit - log_denom);
            let coef = (softmax - if is_positive[m] { inv_p } else { 0.0 }) / tau;
            axpy(out.grad_z.row_mut(i), coef, batch.embedding(m));
            axpy(out.grad_z.row_mut(m), coef, zi);
        }
    }
    Ok(out)
}

/// Per-anchor rows of the positive-pair ratios
/// `exp(<z_i,z_j>/tau) / sum_{k != i} exp(<z_i,z_k>/tau)`, one row per
/// anchor in index order, one entry per positive in index order.
pub fn supcon_relations(batch: &EmbeddingBatch, tau: f64) -> Result<RelationDistribution> {
    if !(tau > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let n_views = batch.len();
    let mut rows = Vec::new();
    for i in batch.anchors() {
        let zi = batch.embedding(i);
        let logits: Vec<f64> = (0..n_views)
            .filter(|&m| m != i)
            .map(|m| dot(zi, batch.embedding(m)) / tau)
            .collect();
        let log_denom = log_sum_exp(&logits);
        let row = batch
            .positives(i)
            .iter()
            .map(|&j| math::exp(dot(zi, batch.embedding(j)) / tau - log_denom))
            .collect();
        rows.push(row);
    }
    Ok(RelationDistribution {
        kind: RelationKind::FocalPositive,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn identical_batch() -> EmbeddingBatch {
        // Four copies of the same unit vector, one class.
        let v = vec![0.6, 0.8];
        let z = Mat::from_rows(&[v.clone(), v.clone(), v.clone(), v]);
        EmbeddingBatch::new(z, vec![5, 5, 5, 5], vec![1, 0, 3, 2], vec![true; 4]).unwrap()
    }

    #[test]
    fn identical_embeddings_one_class_gives_four_ln_three() {
        for tau in [0.1, 0.5, 2.0] {
            let out = supcon_loss(&identical_batch(), tau).unwrap();
            let expected = 4.0 * 3f64.ln();
            assert!(
                (out.value - expected).abs() < 1e-10,
                "tau={tau}: {} vs {expected}",
                out.value
            );
        }
    }

    #[test]
    fn identical_embeddings_have_symmetric_zero_sum_gradient() {
        let out = supcon_loss(&identical_batch(), 0.5).unwrap();
        // Loss is permutation-symmetric here, so all view gradients agree,
        // and each positive ratio is already at its optimum 1/3.
        let g0: Vec<f64> = out.grad_z.row(0).to_vec();
        for r in 1..4 {
            for (a, b) in g0.iter().zip(out.grad_z.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anchor_without_positive_is_an_error_by_default() {
        let z = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ]);
        //

        // Pairs carry equal labels, but view 0/1's class differs from 2/3's,
        // and 2/3 are buffer views: anchors 0 and 1 have positives, and the
        // batch is fine; flip anchor flags to manufacture a degenerate one.
        let batch = EmbeddingBatch::new(
            z,
            vec![0, 0, 1, 1],
            vec![1, 0, 3, 2],
            vec![true, false, false, false],
        )
        .unwrap();
        assert!(matches!(
            supcon_loss(&batch, 0.5),
            Err(Error::DegenerateAnchor { index: 0 })
        ));
        // With skipping allowed there is nothing left to sum: value 0.
        let out = supcon_loss_opts(&batch, 0.5, true).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn relations_rows_match_anchor_and_positive_counts() {
        let batch = identical_batch();
        let rel = supcon_relations(&batch, 0.5).unwrap();
        assert_eq!(rel.rows.len(), 4);
        for row in &rel.rows {
            assert_eq!(row.len(), 3);
            for &v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }
}
