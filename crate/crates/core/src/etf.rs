//! Fixed equidistant prototype geometry.
//!
//! A simplex equiangular tight frame (ETF) of `K` unit vectors in `R^d`
//! (`K <= d + 1`) is the unique configuration, up to rotation, in which every
//! pair of distinct vectors has inner product `-1/(K-1)` — the most negative
//! value `K` equiangular unit vectors can share. Each class in the stream is
//! pinned to one vertex for the whole run; every loss and diagnostic reads
//! the same frozen geometry.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::math;
use crate::rng::seeded;
use crate::ClassId;

/// The fixed simplex-ETF vertex matrix: `K` unit rows of length `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    vectors: Mat,
    num_classes: usize,
    dim: usize,
}

impl PrototypeSet {
    /// Wraps a raw vertex matrix without checking the ETF identities; used by
    /// deserialization, which follows up with [`verify_etf`].
    pub fn from_vectors(vectors: Mat) -> Result<Self> {
        if vectors.rows() < 2 {
            return Err(Error::Domain(format!(
                "a prototype set needs at least 2 vertices, got {}",
                vectors.rows()
            )));
        }
        if vectors.cols() == 0 {
            return Err(Error::Domain("prototype dimension must be positive".into()));
        }
        Ok(Self {
            num_classes: vectors.rows(),
            dim: vectors.cols(),
            vectors,
        })
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn vertex(&self, index: usize) -> &[f64] {
        self.vectors.row(index)
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    /// Rows of the given vertex indices, in order.
    pub fn gather(&self, indices: &[usize]) -> Mat {
        let mut out = Mat::zeros(indices.len(), self.dim);
        for (r, &idx) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.vectors.row(idx));
        }
        out
    }
}

/// Builds the prototype set for `num_classes` classes in `R^dim`.
///
/// The construction takes a deterministic orthonormal basis of the hyperplane
/// orthogonal to the all-ones direction in `R^K`, maps it into `R^d` through
/// a seeded random rotation (a Gaussian `d x (K-1)` matrix orthonormalized by
/// modified Gram-Schmidt), and scales by `sqrt(K/(K-1))`. The result has unit
/// rows and all pairwise inner products exactly `-1/(K-1)` up to rounding,
/// for every `K <= d + 1`. Different seeds rotate the frame without changing
/// its Gram matrix.
pub fn generate_etf(num_classes: usize, dim: usize, seed: u64) -> Result<PrototypeSet> {
    if num_classes < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 classes for an equiangular frame, got {num_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("embedding dimension must be positive".into()));
    }
    if num_classes > dim + 1 {
        return Err(Error::Dimension { num_classes, dim });
    }

    let k = num_classes;
    let m = k - 1;

    // Orthonormal rows spanning the hyperplane { x in R^K : sum(x) = 0 }:
    // row i is (1,...,1,-i,0,...,0)/sqrt(i(i+1)) with i leading ones.
    let mut basis = Mat::zeros(m, k);
    for i in 1..=m {
        let scale = 1.0 / math::sqrt((i * (i + 1)) as f64);
        for j in 0..i {
            basis.set(i - 1, j, scale);
        }
        basis.set(i - 1, i, -(i as f64) * scale);
    }

    let rotation = random_orthonormal_columns(dim, m, seed);

    // vertex_j = sqrt(K/(K-1)) * rotation * basis[:, j]
    let gain = math::sqrt(k as f64 / m as f64);
    let mut vectors = Mat::zeros(k, dim);
    for j in 0..k {
        let row = vectors.row_mut(j);
        for (i, row_v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..m {
                acc += rotation.get(i, c) * basis.get(c, j);
            }
            *row_v = gain * acc;
        }
    }

    PrototypeSet::from_vectors(vectors)
}

/// Seeded Gaussian `rows x cols` matrix with columns orthonormalized by
/// modified Gram-Schmidt. Requires `cols <= rows`.
fn random_orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Mat {
    debug_assert!(cols <= rows);
    let mut rng = seeded(seed);
    // Column-major scratch for the orthonormalization.
    let mut columns: Vec<Vec<f64>> = (0..cols)
        .map(|_| {
            (0..rows)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();

    for j in 0..cols {
        // Two Gram-Schmidt sweeps keep the basis orthogonal to near machine
        // precision even for unlucky draws.
        for _ in 0..2 {
            for prev in 0..j {
                let (head, tail) = columns.split_at_mut(j);
                let proj = dot(&head[prev], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(head[prev].iter()) {
                    *t -= proj * h;
                }
            }
        }
        let len = norm(&columns[j]);
        // A Gaussian draw is never exactly degenerate; guard anyway by
        // replacing a collapsed column with a coordinate axis.
        if len < 1e-12 {
            for (i, v) in columns[j].iter_mut().enumerate() {
                *v = if i == j { 1.0 } else { 0.0 };
            }
        } else {
            for v in &mut columns[j] {
                *v /= len;
            }
        }
    }

    let mut out = Mat::zeros(rows, cols);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out.set(i, j, v);
        }
    }
    out
}

/// Checks the two ETF identities: every row has unit norm within `tol` and
/// every pair of distinct rows has inner product `-1/(K-1)` within `tol`.
pub fn verify_etf(set: &PrototypeSet, tol: f64) -> bool {
    etf_max_deviation(set) <= tol
}

/// Largest absolute deviation from the ETF identities over all rows/pairs.
pub fn etf_max_deviation(set: &PrototypeSet) -> f64 {
    let k = set.num_classes();
    let target = -1.0 / (k as f64 - 1.0);
    let mut worst = 0.0f64;
    for i in 0..k {
        let ri = set.vertex(i);
        worst = worst.max(math::abs(norm(ri) - 1.0));
        for j in (i + 1)..k {
            worst = worst.max(math::abs(dot(ri, set.vertex(j)) - target));
        }
    }
    worst
}

/// Deterministic class-to-vertex assignment, built task by task in order of
/// first appearance in the stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassPrototypeMap {
    class_to_vertex: BTreeMap<ClassId, usize>,
    per_task: Vec<Vec<usize>>,
}

impl ClassPrototypeMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns the next free vertices to `classes`, recording them as the
    /// range introduced by the next task. Rejects labels seen before.
    pub fn assign_task(&mut self, classes: &[ClassId]) -> Result<()> {
        let mut range = Vec::with_capacity(classes.len());
        for &c in classes {
            if self.class_to_vertex.contains_key(&c) {
                return Err(Error::Domain(format!(
                    "class {c} already has a prototype; task class sets must be disjoint"
                )));
            }
            let vertex = self.class_to_vertex.len();
            self.class_to_vertex.insert(c, vertex);
            range.push(vertex);
        }
        self.per_task.push(range);
        Ok(())
    }

    pub fn vertex_for(&self, label: ClassId) -> Result<usize> {
        self.class_to_vertex
            .get(&label)
            .copied()
            .ok_or(Error::MissingClass(label))
    }

    pub fn contains(&self, label: ClassId) -> bool {
        self.class_to_vertex.contains_key(&label)
    }

    /// Number of classes assigned so far (= number of vertices in use).
    pub fn num_assigned(&self) -> usize {
        self.class_to_vertex.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.per_task.len()
    }

    /// Seen classes in ascending label order.
    pub fn classes(&self) -> impl Iterator<Item = (ClassId, usize)> + '_ {
        self.class_to_vertex.iter().map(|(&c, &v)| (c, v))
    }

    /// Vertex indices introduced by task `t` (1-based).
    pub fn vertices_of_task(&self, t: usize) -> &[usize] {
        &self.per_task[t - 1]
    }

    /// Vertex indices of every task strictly before `t` (1-based).
    pub fn vertices_before_task(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for task in self.per_task.iter().take(t.saturating_sub(1)) {
            out.extend_from_slice(task);
        }
        out
    }

    /// Vertex indices of tasks `1..=t`.
    pub fn vertices_through_task(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for task in self.per_task.iter().take(t) {
            out.extend_from_slice(task);
        }
        out
    }
}

/// The stored prototype row for `label`: a pure lookup.
pub fn prototype_for_class<'a>(
    map: &ClassPrototypeMap,
    set: &'a PrototypeSet,
    label: ClassId,
) -> Result<&'a [f64]> {
    let vertex = map.vertex_for(label)?;
    if vertex >= set.num_classes() {
        return Err(Error::Domain(format!(
            "vertex {vertex} out of range for a {}-vertex prototype set",
            set.num_classes()
        )));
    }
    Ok(set.vertex(vertex))
}
