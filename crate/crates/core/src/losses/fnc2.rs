//! Focal prototype-anchored contrastive loss.
//!
//! Each anchor keeps the supervised contrastive pull toward its positives
//! and adds an attraction toward its own class prototype; both kinds of term
//! share one denominator that runs over every other view in the batch plus
//! the prototypes of all earlier tasks, so past classes repel the current
//! batch even when no past sample is available:
//!
//! ```text
//! c_ij = exp(<z_i,z_j>/tau) / D_i        (positive view j)
//! r_i  = exp(<z_i,p_{y_i}>/tau) / D_i    (own prototype)
//! D_i  = sum_{k != i} exp(<z_i,z_k>/tau) + sum_{p in old} exp(<z_i,p>/tau)
//! loss = -sum_i 1/(|P(i)|+1) [ sum_j (1-c_ij)^g ln c_ij + (1-r_i)^g ln r_i ]
//! ```
//!
//! The focal exponent `g` concentrates the objective on hard terms (ratios
//! far below one). `r_i`'s numerator is deliberately absent from `D_i`, so
//! `r_i` can exceed one; such anchors are counted in the output rather than
//! renormalized away.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::etf::{ClassPrototypeMap, PrototypeSet};
use crate::linalg::{axpy, dot, Mat};
use crate::losses::{
    check_focal_domain, focal_term_derivative, focal_weight, log_sum_exp, LossOutput,
    PlasticityConfig, RelationDistribution, RelationKind,
};
use crate::math;

/// Shared per-anchor quantities: logits against the other views and the old
/// prototypes, their joint log-denominator, and the own-prototype logit.
struct AnchorTerms {
    others: Vec<usize>,
    view_logits: Vec<f64>,
    old_logits: Vec<f64>,
    log_denom: f64,
    own_logit: f64,
}

fn anchor_terms(
    batch: &EmbeddingBatch,
    i: usize,
    old_prototypes: &Mat,
    own_prototype: &[f64],
    tau: f64,
) -> AnchorTerms {
    let zi = batch.embedding(i);
    let n_views = batch.len();
    let mut others = Vec::with_capacity(n_views - 1);
    let mut view_logits = Vec::with_capacity(n_views - 1);
    for m in 0..n_views {
        if m != i {
            others.push(m);
            view_logits.push(dot(zi, batch.embedding(m)) / tau);
        }
    }
    let old_logits: Vec<f64> = old_prototypes
        .iter_rows()
        .map(|p| dot(zi, p) / tau)
        .collect();

    let mut all = view_logits.clone();
    all.extend_from_slice(&old_logits);
    let log_denom = log_sum_exp(&all);

    AnchorTerms {
        others,
        view_logits,
        old_logits,
        log_denom,
        own_logit: dot(zi, own_prototype) / tau,
    }
}

/// Loss value and gradient. `old_prototypes` holds the vertex rows of every
/// earlier task (zero rows on the first task, or with pseudo-replay off).
pub fn fnc2_loss(
    batch: &EmbeddingBatch,
    old_prototypes: &Mat,
    map: &ClassPrototypeMap,
    set: &PrototypeSet,
    cfg: &PlasticityConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let dim = batch.dim();
    if old_prototypes.rows() > 0 && old_prototypes.cols() != dim {
        return Err(Error::Shape {
            expected: (old_prototypes.rows(), dim),
            got: (old_prototypes.rows(), old_prototypes.cols()),
        });
    }
    if batch.anchors().next().is_none() {
        return Err(Error::EmptyBatch);
    }

    let tau = cfg.tau;
    let gamma = cfg.gamma;
    let n_views = batch.len();
    let mut out = LossOutput::zeros(n_views, dim);

    for i in batch.anchors() {
        let positives = batch.positives(i);
        if positives.is_empty() && !cfg.skip_degenerate_anchors {
            return Err(Error::DegenerateAnchor { index: i });
        }
        let own = crate::etf::prototype_for_class(map, set, batch.label(i))?;
        let terms = anchor_terms(batch, i, old_prototypes, own, tau);
        let zi = batch.embedding(i);

        let weight = 1.0 / (positives.len() as f64 + 1.0);

        // Positive-view terms.
        let mut pos_coef = vec![0.0; n_views];
        let mut coef_sum = 0.0;
        for &j in &positives {
            let log_c = dot(zi, batch.embedding(j)) / tau - terms.log_denom;
            let c = math::exp(log_c);
            check_focal_domain(c, gamma)?;
            out.value -= weight * focal_weight(c, gamma) * log_c;
            let a = weight * focal_term_derivative(c, gamma) * c;
            pos_coef[j] = a;
            coef_sum += a;
        }

        // Own-prototype term.
        let log_r = terms.own_logit - terms.log_denom;
        let r = math::exp(log_r);
        check_focal_domain(r, gamma)?;
        out.value -= weight * focal_weight(r, gamma) * log_r;
        let r_coef = weight * focal_term_derivative(r, gamma) * r;
        coef_sum += r_coef;
        if r > 1.0 {
            out.anchors_above_one += 1;
        }

        // d(loss)/d(view logit m) = -pos_coef[m] + softmax_m * coef_sum;
        // d(loss)/d(old-prototype logit l) = softmax_l * coef_sum;
        // d(loss)/d(own-prototype logit) = -r_coef.
        for (&m, &logit) in terms.others.iter().zip(terms.view_logits.iter()) {
            let softmax = math::exp(logit - terms.log_denom);
            let coef = (softmax * coef_sum - pos_coef[m]) / tau;
            axpy(out.grad_z.row_mut(i), coef, batch.embedding(m));
            axpy(out.grad_z.row_mut(m), coef, zi);
        }
        for (p, &logit) in old_prototypes.iter_rows().zip(terms.old_logits.iter()) {
            let softmax = math::exp(logit - terms.log_denom);
            axpy(out.grad_z.row_mut(i), softmax * coef_sum / tau, p);
        }
        axpy(out.grad_z.row_mut(i), -r_coef / tau, own);
    }
    Ok(out)
}

/// The positive-pair ratios and own-prototype ratios, one row per anchor in
/// index order (positive entries in index order). For inspection and dumps.
pub fn fnc2_relations(
    batch: &EmbeddingBatch,
    old_prototypes: &Mat,
    map: &ClassPrototypeMap,
    set: &PrototypeSet,
    cfg: &PlasticityConfig,
) -> Result<(RelationDistribution, RelationDistribution)> {
    cfg.validate()?;
    let mut positive_rows = Vec::new();
    let mut proto_rows = Vec::new();
    for i in batch.anchors() {
        let own = crate::etf::prototype_for_class(map, set, batch.label(i))?;
        let terms = anchor_terms(batch, i, old_prototypes, own, cfg.tau);
        let zi = batch.embedding(i);
        let row: Vec<f64> = batch
            .positives(i)
            .iter()
            .map(|&j| math::exp(dot(zi, batch.embedding(j)) / cfg.tau - terms.log_denom))
            .collect();
        positive_rows.push(row);
        proto_rows.push(vec![math::exp(terms.own_logit - terms.log_denom)]);
    }
    Ok((
        RelationDistribution {
            kind: RelationKind::FocalPositive,
            rows: positive_rows,
        },
        RelationDistribution {
            kind: RelationKind::FocalProto,
            rows: proto_rows,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etf::generate_etf;
    use crate::losses::supcon_relations;

    /// Batch of two views equal to the class-0 prototype itself.
    fn collapsed_batch(set: &PrototypeSet) -> EmbeddingBatch {
        let p = set.vertex(0).to_vec();
        let z = Mat::from_rows(&[p.clone(), p]);
        EmbeddingBatch::new(z, vec![0, 0], vec![1, 0], vec![true; 2]).unwrap()
    }

    fn map_for(classes: &[u32]) -> ClassPrototypeMap {
        let mut map = ClassPrototypeMap::new();
        map.assign_task(classes).unwrap();
        map
    }

    #[test]
    fn perfectly_collapsed_first_task_pair_has_zero_loss() {
        let set = generate_etf(2, 4, 11).unwrap();
        let map = map_for(&[0, 1]);
        let batch = collapsed_batch(&set);
        let cfg = PlasticityConfig::new(0.5, 1.0);
        let out = fnc2_loss(&batch, &Mat::zeros(0, 4), &map, &set, &cfg).unwrap();
        // Both ratios are exactly 1, so both focal terms vanish.
        assert!(out.value.abs() < 1e-12, "value = {}", out.value);
        assert_eq!(out.anchors_above_one, 0);
        for v in out.grad_z.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gamma_no_old_prototypes_matches_supcon_ratios_termwise() {
        let set = generate_etf(3, 8, 21).unwrap();
        let map = map_for(&[0, 1, 2]);
        let mut rng = crate::rng::seeded(5);
        let mut rows = Vec::new();
        for _ in 0..6 {
            let mut v: Vec<f64> = (0..8)
                .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
                .collect();
            let n = crate::linalg::norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
        let z = Mat::from_rows(&rows);
        let batch = EmbeddingBatch::new(
            z,
            vec![0, 0, 1, 1, 2, 2],
            vec![1, 0, 3, 2, 5, 4],
            vec![true; 6],
        )
        .unwrap();

        let cfg = PlasticityConfig::new(0.5, 0.0);
        let (c_rel, _) = fnc2_relations(&batch, &Mat::zeros(0, 8), &map, &set, &cfg).unwrap();
        let s_rel = supcon_relations(&batch, 0.5).unwrap();
        assert_eq!(c_rel.rows.len(), s_rel.rows.len());
        for (c_row, s_row) in c_rel.rows.iter().zip(s_rel.rows.iter()) {
            assert_eq!(c_row.len(), s_row.len());
            for (c, s) in c_row.iter().zip(s_row.iter()) {
                assert!((c - s).abs() < 1e-15, "{c} vs {s}");
            }
        }
    }

    #[test]
    fn old_prototype_with_positive_similarity_shrinks_both_ratios() {
        let set = generate_etf(4, 8, 3).unwrap();
        let map = map_for(&[0, 1, 2, 3]);
        let mut z_rows = Vec::new();
        for k in [0usize, 0, 1, 1] {
            z_rows.push(set.vertex(k).to_vec());
        }
        let z = Mat::from_rows(&z_rows);
        let batch =
            EmbeddingBatch::new(z, vec![0, 0, 1, 1], vec![1, 0, 3, 2], vec![true; 4]).unwrap();
        let cfg = PlasticityConfig::new(0.5, 1.0);

        let none = Mat::zeros(0, 8);
        let (c0, r0) = fnc2_relations(&batch, &none, &map, &set, &cfg).unwrap();
        // Use the anchor's own embedding direction as the "old prototype":
        // similarity +1, the strongest possible repulsor.
        let old = Mat::from_rows(&[set.vertex(0).to_vec()]);
        let (c1, r1) = fnc2_relations(&batch, &old, &map, &set, &cfg).unwrap();

        for (row0, row1) in c0.rows.iter().zip(c1.rows.iter()) {
            for (a, b) in row0.iter().zip(row1.iter()) {
                assert!(b < a, "ratio should strictly shrink: {a} -> {b}");
            }
        }
        for (row0, row1) in r0.rows.iter().zip(r1.rows.iter()) {
            assert!(row1[0] < row0[0]);
        }
    }

    #[test]
    fn unmapped_label_is_a_missing_class_error() {
        let set = generate_etf(2, 4, 11).unwrap();
        let map = map_for(&[0, 1]);
        let p = set.vertex(0).to_vec();
        let z = Mat::from_rows(&[p.clone(), p]);
        let batch = EmbeddingBatch::new(z, vec![9, 9], vec![1, 0], vec![true; 2]).unwrap();
        let cfg = PlasticityConfig::new(0.5, 1.0);
        assert!(matches!(
            fnc2_loss(&batch, &Mat::zeros(0, 4), &map, &set, &cfg),
            Err(Error::MissingClass(9))
        ));
    }

    #[test]
    fn batch_with_no_anchor_is_empty() {
        let set = generate_etf(2, 4, 11).unwrap();
        let map = map_for(&[0, 1]);
        let p = set.vertex(0).to_vec();
        let z = Mat::from_rows(&[p.clone(), p]);
        let batch = EmbeddingBatch::new(z, vec![0, 0], vec![1, 0], vec![false; 2]).unwrap();
        let cfg = PlasticityConfig::new(0.5, 1.0);
        assert!(matches!(
            fnc2_loss(&batch, &Mat::zeros(0, 4), &map, &set, &cfg),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn focal_weighting_downweights_easy_terms_monotonically() {
        // For a fixed ratio below one, a larger exponent shrinks the term;
        // and for fixed gamma the term decreases as the ratio approaches 1.
        for &gamma in &[0.0, 1.0, 4.0] {
            let mut last = f64::INFINITY;
            for &c in &[0.2, 0.5, 0.9, 0.99] {
                let term = -focal_weight(c, gamma) * (c as f64).ln();
                assert!(term < last, "gamma={gamma}: term not decreasing at c={c}");
                last = term;
            }
        }
    }
}
