//! Relation-distillation losses against a frozen teacher.
//!
//! Both losses are row-wise cross-entropies between a relation distribution
//! computed from the teacher's embeddings (`past`) and the same relation
//! computed from the student's (`current`). Gradients flow only through the
//! student; the teacher rows are plain numbers here.
//!
//! * Instance relation rows: softmax over similarities to every other view.
//! * Prototype relation rows: softmax over similarities to the prototypes of
//!   all tasks so far.
//! * The blended loss walks from pure instance distillation toward the
//!   prototype one as the epoch index passes the warm-up mark.

use alloc::vec::Vec;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat};
use crate::losses::{log_sum_exp, DistillationConfig, LossOutput, RelationDistribution, RelationKind};
use crate::math;

/// Softmax rows over sample-sample similarities: row `i` has one entry per
/// view `j != i`, in index order.
pub fn ird_relation(z: &Mat, temperature: f64) -> RelationDistribution {
    let n = z.rows();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| dot(z.row(i), z.row(j)) / temperature)
            .collect();
        let log_denom = log_sum_exp(&logits);
        rows.push(logits.iter().map(|&l| math::exp(l - log_denom)).collect());
    }
    RelationDistribution {
        kind: RelationKind::SampleSample,
        rows,
    }
}

/// Softmax rows over sample-prototype similarities: row `i` has one entry
/// per prototype row, in order.
pub fn sprd_relation(z: &Mat, prototypes: &Mat, temperature: f64) -> RelationDistribution {
    let mut rows = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let logits: Vec<f64> = prototypes
            .iter_rows()
            .map(|p| dot(z.row(i), p) / temperature)
            .collect();
        let log_denom = log_sum_exp(&logits);
        rows.push(logits.iter().map(|&l| math::exp(l - log_denom)).collect());
    }
    RelationDistribution {
        kind: RelationKind::SampleProto,
        rows,
    }
}

/// Cross-entropy from the teacher's sample-sample relation rows to the
/// student's. `past_z` must match the current embeddings row for row.
pub fn ird_loss(
    current: &EmbeddingBatch,
    past_z: &Mat,
    cfg: &DistillationConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let z = current.embeddings();
    if !z.same_shape(past_z) {
        return Err(Error::Shape {
            expected: (z.rows(), z.cols()),
            got: (past_z.rows(), past_z.cols()),
        });
    }
    let n = z.rows();
    if n < 2 {
        return Err(Error::EmptyBatch);
    }

    let mut out = LossOutput::zeros(n, z.cols());
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();

        let past_logits: Vec<f64> = others
            .iter()
            .map(|&j| dot(past_z.row(i), past_z.row(j)) / cfg.kappa_past)
            .collect();
        let past_denom = log_sum_exp(&past_logits);

        let cur_logits: Vec<f64> = others
            .iter()
            .map(|&j| dot(z.row(i), z.row(j)) / cfg.kappa_current)
            .collect();
        let cur_denom = log_sum_exp(&cur_logits);

        for ((&j, &pl), &cl) in others.iter().zip(&past_logits).zip(&cur_logits) {
            let teacher = math::exp(pl - past_denom);
            let student = math::exp(cl - cur_denom);
            out.value -= teacher * (cl - cur_denom);
            let coef = (student - teacher) / cfg.kappa_current;
            axpy(out.grad_z.row_mut(i), coef, z.row(j));
            axpy(out.grad_z.row_mut(j), coef, z.row(i));
        }
    }
    Ok(out)
}

/// Cross-entropy from the teacher's sample-prototype relation rows to the
/// student's, over the prototypes of every task so far.
pub fn sprd_loss(
    current: &EmbeddingBatch,
    past_z: &Mat,
    prototypes: &Mat,
    cfg: &DistillationConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let z = current.embeddings();
    if !z.same_shape(past_z) {
        return Err(Error::Shape {
            expected: (z.rows(), z.cols()),
            got: (past_z.rows(), past_z.cols()),
        });
    }
    if prototypes.rows() == 0 {
        return Err(Error::EmptyPrototypes);
    }
    if prototypes.cols() != z.cols() {
        return Err(Error::Shape {
            expected: (prototypes.rows(), z.cols()),
            got: (prototypes.rows(), prototypes.cols()),
        });
    }

    let n = z.rows();
    let mut out = LossOutput::zeros(n, z.cols());
    for i in 0..n {
        let past_logits: Vec<f64> = prototypes
            .iter_rows()
            .map(|p| dot(past_z.row(i), p) / cfg.zeta_past)
            .collect();
        let past_denom = log_sum_exp(&past_logits);

        let cur_logits: Vec<f64> = prototypes
            .iter_rows()
            .map(|p| dot(z.row(i), p) / cfg.zeta_current)
            .collect();
        let cur_denom = log_sum_exp(&cur_logits);

        for ((p, &pl), &cl) in prototypes.iter_rows().zip(&past_logits).zip(&cur_logits) {
            let teacher = math::exp(pl - past_denom);
            let student = math::exp(cl - cur_denom);
            out.value -= teacher * (cl - cur_denom);
            axpy(
                out.grad_z.row_mut(i),
                (student - teacher) / cfg.zeta_current,
                p,
            );
        }
    }
    Ok(out)
}

/// Blend weight for the scheduled distillation:
/// `max(0, epoch - warmup_epochs) / total_epochs`, in `[0, 1)`.
pub fn alpha_schedule(epoch: usize, cfg: &DistillationConfig) -> f64 {
    let past_warmup = epoch.saturating_sub(cfg.warmup_epochs);
    past_warmup as f64 / cfg.total_epochs as f64
}

/// `(1 - alpha) * instance distillation + alpha * prototype distillation`,
/// with the same blend applied to the gradients.
pub fn hsd_loss(
    current: &EmbeddingBatch,
    past_z: &Mat,
    prototypes: &Mat,
    cfg: &DistillationConfig,
    epoch: usize,
) -> Result<LossOutput> {
    let alpha = alpha_schedule(epoch, cfg);
    let ird = ird_loss(current, past_z, cfg)?;
    let sprd = sprd_loss(current, past_z, prototypes, cfg)?;
    let mut grad_z = ird.grad_z;
    grad_z.scale(1.0 - alpha);
    grad_z.add_scaled(&sprd.grad_z, alpha);
    Ok(LossOutput {
        value: (1.0 - alpha) * ird.value + alpha * sprd.value,
        grad_z,
        anchors_above_one: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etf::generate_etf;
    use crate::linalg::norm;
    use rand::Rng;

    fn cfg(total_epochs: usize, warmup: usize) -> DistillationConfig {
        DistillationConfig {
            kappa_past: 0.01,
            kappa_current: 0.2,
            zeta_past: 0.01,
            zeta_current: 0.2,
            warmup_epochs: warmup,
            total_epochs,
        }
    }

    fn random_batch(n_sources: usize, dim: usize, seed: u64) -> EmbeddingBatch {
        let mut rng = crate::rng::seeded(seed);
        let rows: Vec<Vec<f64>> = (0..2 * n_sources)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let n = norm(&v);
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        let z = Mat::from_rows(&rows);
        let labels = (0..2 * n_sources as u32).map(|i| i / 2).collect();
        let pair = (0..2 * n_sources).map(|i| i ^ 1).collect();
        EmbeddingBatch::new(z, labels, pair, alloc::vec![true; 2 * n_sources]).unwrap()
    }

    #[test]
    fn two_views_make_instance_distillation_vanish() {
        let batch = random_batch(1, 6, 3);
        let past = {
            let other = random_batch(1, 6, 4);
            other.embeddings().clone()
        };
        let out = ird_loss(&batch, &past, &cfg(10, 0)).unwrap();
        assert!(out.value.abs() < 1e-15);
        for g in out.grad_z.data() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn self_distillation_equals_row_entropy() {
        let batch = random_batch(4, 8, 9);
        let z = batch.embeddings().clone();
        let mut c = cfg(10, 0);
        c.kappa_past = 0.2; // match current so teacher == student
        let out = ird_loss(&batch, &z, &c).unwrap();
        let rel = ird_relation(&z, 0.2);
        let entropy: f64 = rel
            .rows
            .iter()
            .map(|row| -row.iter().map(|&p| p * p.ln()).sum::<f64>())
            .sum();
        assert!((out.value - entropy).abs() < 1e-10);
        assert!(out.value > 0.0);
        // Teacher == student also means zero gradient.
        for g in out.grad_z.data() {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn single_prototype_gives_zero_prototype_distillation() {
        let batch = random_batch(3, 8, 1);
        let past = random_batch(3, 8, 2).embeddings().clone();
        let protos = Mat::from_rows(&[alloc::vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let out = sprd_loss(&batch, &past, &protos, &cfg(10, 0)).unwrap();
        assert_eq!(out.value, 0.0);
        for g in out.grad_z.data() {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn equidistant_prototypes_self_distillation_is_views_times_ln_count() {
        // Embeddings orthogonal to the prototype plane are equidistant from
        // all prototypes, making every relation row uniform.
        let set = generate_etf(3, 8, 7).unwrap();
        let protos = set.gather(&[0, 1, 2]);
        // The frame spans a 2-d subspace of R^8 rotated by the seed; build
        // vectors orthogonal to both prototype directions by Gram-Schmidt.
        // Orthonormal basis of the prototype span (the third vertex is a
        // combination of the first two).
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for r in 0..2 {
            let mut v = protos.row(r).to_vec();
            for b in &basis {
                let proj = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b.iter()) {
                    *x -= proj * y;
                }
            }
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        let mut rows = Vec::new();
        let mut rng = crate::rng::seeded(15);
        while rows.len() < 4 {
            let mut v: Vec<f64> = (0..8)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            for b in &basis {
                let proj = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b.iter()) {
                    *x -= proj * y;
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                rows.push(v);
            }
        }
        let z = Mat::from_rows(&rows);
        let batch =
            EmbeddingBatch::new(z.clone(), alloc::vec![0, 0, 1, 1], alloc::vec![1, 0, 3, 2], alloc::vec![true; 4])
                .unwrap();
        let mut c = cfg(10, 0);
        c.zeta_past = 0.2;
        let out = sprd_loss(&batch, &z, &protos, &c).unwrap();
        let expected = 4.0 * 3f64.ln();
        assert!(
            (out.value - expected).abs() < 1e-9,
            "{} vs {expected}",
            out.value
        );
    }

    #[test]
    fn blend_weight_schedule() {
        let c = cfg(100, 30);
        assert_eq!(alpha_schedule(5, &c), 0.0);
        assert_eq!(alpha_schedule(30, &c), 0.0);
        assert_eq!(alpha_schedule(80, &c), 0.5);
        // Never reaches 1 within the task.
        assert!(alpha_schedule(100, &c) < 1.0);
    }

    #[test]
    fn blended_loss_is_the_convex_style_combination() {
        let batch = random_batch(4, 8, 20);
        let past = random_batch(4, 8, 21).embeddings().clone();
        let set = generate_etf(4, 8, 22).unwrap();
        let protos = set.gather(&[0, 1, 2, 3]);
        let c = cfg(100, 30);

        let ird = ird_loss(&batch, &past, &c).unwrap();
        let sprd = sprd_loss(&batch, &past, &protos, &c).unwrap();

        // Warm-up: identical to the instance loss.
        let early = hsd_loss(&batch, &past, &protos, &c, 10).unwrap();
        assert_eq!(early.value, ird.value);

        // Midpoint of the schedule.
        let mid = hsd_loss(&batch, &past, &protos, &c, 80).unwrap();
        let expected = 0.5 * ird.value + 0.5 * sprd.value;
        assert!((mid.value - expected).abs() < 1e-12);
        for ((g, gi), gs) in mid
            .grad_z
            .data()
            .iter()
            .zip(ird.grad_z.data())
            .zip(sprd.grad_z.data())
        {
            assert!((g - (0.5 * gi + 0.5 * gs)).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let batch = random_batch(2, 8, 1);
        let past = Mat::zeros(3, 8);
        assert!(matches!(
            ird_loss(&batch, &past, &cfg(10, 0)),
            Err(Error::Shape { .. })
        ));
        let protos = Mat::zeros(0, 8);
        let past_ok = batch.embeddings().clone();
        assert!(matches!(
            sprd_loss(&batch, &past_ok, &protos, &cfg(10, 0)),
            Err(Error::EmptyPrototypes)
        ));
    }
}
