//! Summary metrics over the task-accuracy matrix and neural-collapse
//! diagnostics over labeled embeddings.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::etf::{ClassPrototypeMap, PrototypeSet};
use crate::linalg::{dot, norm, Mat};
use crate::ClassId;

/// Lower-triangular accuracy history: `entry(t, k)` is the accuracy on task
/// `k`'s test set measured right after training task `t` (`1 <= k <= t`).
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates triangular shape and the `[0, 1]` range.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Config(format!(
                    "row {} must have {} entries, got {}",
                    i + 1,
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::Config(format!("row {} has values outside [0, 1]", i + 1)));
            }
        }
        Ok(Self { rows })
    }

    /// Appends the accuracies measured after the next task; the row must
    /// cover every task so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Config(format!(
                "expected {} accuracies after task {}, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::Config("accuracy outside [0, 1]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed tasks.
    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    /// Accuracy on task `k` after task `t` (both 1-based, `k <= t`).
    pub fn entry(&self, t: usize, k: usize) -> Result<f64> {
        self.rows
            .get(t - 1)
            .and_then(|row| row.get(k - 1))
            .copied()
            .ok_or(Error::IncompleteMatrix)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Mean of the final row: how well the model does on every task after
/// finishing the last one.
pub fn average_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    let last = m.rows.last().ok_or(Error::IncompleteMatrix)?;
    if last.len() != m.num_tasks() {
        return Err(Error::IncompleteMatrix);
    }
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Average over earlier tasks of the largest accuracy drop from any earlier
/// measurement to the final one.
pub fn average_forgetting(m: &AccuracyMatrix) -> Result<f64> {
    let big_t = m.num_tasks();
    if big_t < 2 {
        return Err(Error::UndefinedMetric(
            "forgetting needs at least two tasks".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 1..big_t {
        let final_acc = m.entry(big_t, i)?;
        let mut worst = f64::NEG_INFINITY;
        for t in i..big_t {
            worst = worst.max(m.entry(t, i)? - final_acc);
        }
        acc += worst;
    }
    Ok(acc / (big_t - 1) as f64)
}

/// Neural-collapse diagnostics of a labeled embedding cloud against the
/// prototype geometry.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NCReport {
    /// Classes in ascending label order; all per-class vectors follow it.
    pub classes: Vec<ClassId>,
    pub class_means: Mat,
    pub global_mean: Vec<f64>,
    /// Centered, normalized class means.
    pub centered_directions: Mat,
    /// Trace of the within-class covariance per class.
    pub within_traces: Vec<f64>,
    /// Mean within-class scatter relative to mean squared between-class
    /// distance; 0 at perfect collapse.
    pub nc1_score: f64,
    /// Mean cosine between each centered class direction and the class's
    /// prototype; 1 at perfect alignment.
    pub nc2_score: f64,
}

/// Computes the collapse diagnostics. Every class present must have at
/// least two samples.
pub fn nc_diagnostics(
    embeddings: &Mat,
    labels: &[ClassId],
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
) -> Result<NCReport> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Shape {
            expected: (labels.len(), embeddings.cols()),
            got: (embeddings.rows(), embeddings.cols()),
        });
    }
    if embeddings.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let dim = embeddings.cols();

    let mut classes: Vec<ClassId> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut class_means = Mat::zeros(classes.len(), dim);
    let mut counts = Vec::with_capacity(classes.len());
    for (ci, &c) in classes.iter().enumerate() {
        let mut count = 0usize;
        for (row, &l) in embeddings.iter_rows().zip(labels) {
            if l == c {
                count += 1;
                for (m, &v) in class_means.row_mut(ci).iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        if count < 2 {
            return Err(Error::DegenerateClass(c));
        }
        for m in class_means.row_mut(ci) {
            *m /= count as f64;
        }
        counts.push(count);
    }

    // Global mean of the class means, so imbalance does not skew centering.
    let mut global_mean = alloc::vec![0.0; dim];
    for ci in 0..classes.len() {
        for (g, &m) in global_mean.iter_mut().zip(class_means.row(ci)) {
            *g += m;
        }
    }
    for g in &mut global_mean {
        *g /= classes.len() as f64;
    }

    let mut within_traces = Vec::with_capacity(classes.len());
    for (ci, &c) in classes.iter().enumerate() {
        let mean = class_means.row(ci);
        let mut acc = 0.0;
        for (row, &l) in embeddings.iter_rows().zip(labels) {
            if l == c {
                acc += row
                    .iter()
                    .zip(mean)
                    .map(|(&v, &m)| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        within_traces.push(acc / counts[ci] as f64);
    }

    let mut centered_directions = Mat::zeros(classes.len(), dim);
    let mut between_acc = 0.0;
    let mut cos_acc = 0.0;
    for (ci, &c) in classes.iter().enumerate() {
        let centered: Vec<f64> = class_means
            .row(ci)
            .iter()
            .zip(&global_mean)
            .map(|(&m, &g)| m - g)
            .collect();
        let dist = norm(&centered);
        between_acc += dist * dist;
        let dir = centered_directions.row_mut(ci);
        if dist > 0.0 {
            for (d, &v) in dir.iter_mut().zip(&centered) {
                *d = v / dist;
            }
        }
        let proto = crate::etf::prototype_for_class(map, set, c)?;
        cos_acc += dot(centered_directions.row(ci), proto);
    }

    let within_mean = within_traces.iter().sum::<f64>() / classes.len() as f64;
    let between_mean = between_acc / classes.len() as f64;
    let nc1_score = if between_mean > 0.0 {
        within_mean / between_mean
    } else if within_mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let nc2_score = cos_acc / classes.len() as f64;

    Ok(NCReport {
        classes,
        class_means,
        global_mean,
        centered_directions,
        within_traces,
        nc1_score,
        nc2_score,
    })
}
