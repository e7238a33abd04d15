//! Paired-view embedding batches.
//!
//! A batch holds `2N` unit embeddings: two stochastic views of each of `N`
//! source samples, sharing the source's label. Views drawn from the replay
//! buffer are flagged non-anchor; the asymmetric losses treat them purely as
//! negatives.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{norm, Mat};
use crate::math;
use crate::ClassId;

/// Tolerance on the unit-norm invariant of stored embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    z: Mat,
    labels: Vec<ClassId>,
    view_pair: Vec<usize>,
    is_anchor: Vec<bool>,
}

impl EmbeddingBatch {
    /// Validates the batch invariants: unit rows, `view_pair` an involution
    /// without fixed points, and equal labels within each pair.
    pub fn new(
        z: Mat,
        labels: Vec<ClassId>,
        view_pair: Vec<usize>,
        is_anchor: Vec<bool>,
    ) -> Result<Self> {
        let n_views = z.rows();
        if n_views == 0 {
            return Err(Error::EmptyBatch);
        }
        if n_views % 2 != 0 {
            return Err(Error::Domain(format!(
                "a paired-view batch must hold an even number of views, got {n_views}"
            )));
        }
        if labels.len() != n_views || view_pair.len() != n_views || is_anchor.len() != n_views {
            return Err(Error::Shape {
                expected: (n_views, 1),
                got: (labels.len().min(view_pair.len()).min(is_anchor.len()), 1),
            });
        }
        for (i, row) in z.iter_rows().enumerate() {
            if math::abs(norm(row) - 1.0) > UNIT_NORM_TOL {
                return Err(Error::Domain(format!(
                    "embedding {i} is not unit norm (|z| = {})",
                    norm(row)
                )));
            }
        }
        for (i, &p) in view_pair.iter().enumerate() {
            if p >= n_views || p == i || view_pair[p] != i {
                return Err(Error::Domain(format!(
                    "view_pair is not a fixed-point-free involution at index {i}"
                )));
            }
            if labels[p] != labels[i] {
                return Err(Error::Domain(format!(
                    "paired views {i} and {p} carry different labels"
                )));
            }
        }
        Ok(Self {
            z,
            labels,
            view_pair,
            is_anchor,
        })
    }

    /// Skips invariant checks. Exists for finite-difference probes, which
    /// perturb single coordinates and intentionally leave the unit sphere.
    pub fn new_unchecked(
        z: Mat,
        labels: Vec<ClassId>,
        view_pair: Vec<usize>,
        is_anchor: Vec<bool>,
    ) -> Self {
        Self {
            z,
            labels,
            view_pair,
            is_anchor,
        }
    }

    /// Number of views (`2N`).
    #[inline]
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of source samples (`N`).
    pub fn sources(&self) -> usize {
        self.len() / 2
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    #[inline]
    pub fn embedding(&self, i: usize) -> &[f64] {
        self.z.row(i)
    }

    pub fn embeddings(&self) -> &Mat {
        &self.z
    }

    #[inline]
    pub fn label(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    #[inline]
    pub fn sibling(&self, i: usize) -> usize {
        self.view_pair[i]
    }

    pub fn view_pair(&self) -> &[usize] {
        &self.view_pair
    }

    #[inline]
    pub fn is_anchor(&self, i: usize) -> bool {
        self.is_anchor[i]
    }

    pub fn anchors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_anchor[i])
    }

    /// Positive view indices for anchor `i`: same label, not `i` itself, and
    /// anchor views only — buffer views never serve as positives.
    pub fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| j != i && self.is_anchor[j] && self.labels[j] == self.labels[i])
            .collect()
    }

    /// Replaces one embedding coordinate; for finite-difference probes only.
    pub fn nudge(&mut self, view: usize, coord: usize, delta: f64) {
        let v = self.z.get(view, coord);
        self.z.set(view, coord, v + delta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use alloc::vec;

    fn unit_rows(rows: Vec<Vec<f64>>) -> Mat {
        let mut m = Mat::from_rows(&rows);
        for r in 0..m.rows() {
            let n = norm(m.row(r));
            for v in m.row_mut(r) {
                *v /= n;
            }
        }
        m
    }

    #[test]
    fn accepts_a_well_formed_batch() {
        let z = unit_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ]);
        let b = EmbeddingBatch::new(z, vec![0, 0, 1, 1], vec![1, 0, 3, 2], vec![true; 4]).unwrap();
        assert_eq!(b.sources(), 2);
        assert_eq!(b.positives(0), vec![1]);
        assert_eq!(b.positives(2), vec![3]);
    }

    #[test]
    fn rejects_fixed_points_and_label_mismatch() {
        let z = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(EmbeddingBatch::new(z.clone(), vec![0, 0], vec![0, 1], vec![true; 2]).is_err());
        assert!(EmbeddingBatch::new(z, vec![0, 1], vec![1, 0], vec![true; 2]).is_err());
    }

    #[test]
    fn rejects_non_unit_rows() {
        let z = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]);
        assert!(EmbeddingBatch::new(z, vec![0, 0], vec![1, 0], vec![true; 2]).is_err());
    }

    #[test]
    fn buffer_views_are_not_positives() {
        let z = unit_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ]);
        let b = EmbeddingBatch::new(
            z,
            vec![0, 0, 0, 0],
            vec![1, 0, 3, 2],
            vec![true, true, false, false],
        )
        .unwrap();
        assert_eq!(b.positives(0), vec![1]);
        assert_eq!(b.anchors().count(), 2);
    }
}
