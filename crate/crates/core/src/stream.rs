//! Class-incremental task streams and two-view augmentation.
//!
//! Tasks carry disjoint class sets and arrive in order; each sample is a
//! plain input vector with a global class label. Synthetic streams place
//! each class as a Gaussian cluster around a seeded random mean on the unit
//! sphere; augmentation works directly in vector space (noise, scale jitter,
//! optional planar rotations).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::buffer::{sample_batch, ReplayBuffer};
use crate::error::{Error, Result};
use crate::linalg::{norm, Mat};
use crate::math;
use crate::rng::seeded;
use crate::ClassId;

/// Maximum magnitude (radians) of each random planar rotation.
pub const ROTATION_RANGE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scenario {
    /// Class-incremental: the classifier must pick among all seen classes.
    ClassIl,
    /// Task-incremental: the task id is available at test time, restricting
    /// predictions to that task's classes.
    TaskIl,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: ClassId,
}

#[derive(Clone, Debug)]
pub struct TaskDataset {
    /// 1-based task index.
    pub task: usize,
    pub classes: Vec<ClassId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskDataset {
    pub fn train_pool(&self) -> Vec<(Vec<f64>, ClassId)> {
        self.train
            .iter()
            .map(|s| (s.input.clone(), s.label))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TaskStream {
    tasks: Vec<TaskDataset>,
    scenario: Scenario,
    input_dim: usize,
}

impl TaskStream {
    /// Validates contiguous task indices, disjoint class sets, nonempty
    /// datasets and consistent input width.
    pub fn new(tasks: Vec<TaskDataset>, scenario: Scenario) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("a stream needs at least one task".into()));
        }
        let input_dim = tasks[0]
            .train
            .first()
            .or(tasks[0].test.first())
            .map(|s| s.input.len())
            .unwrap_or(0);
        let mut seen_classes = alloc::collections::BTreeSet::new();
        for (i, task) in tasks.iter().enumerate() {
            if task.task != i + 1 {
                return Err(Error::Config(format!(
                    "task indices must be contiguous from 1; position {} holds task {}",
                    i + 1,
                    task.task
                )));
            }
            if task.train.is_empty() {
                return Err(Error::Config(format!("task {} has no training data", task.task)));
            }
            if task.classes.is_empty() {
                return Err(Error::Config(format!("task {} has no classes", task.task)));
            }
            for &c in &task.classes {
                if !seen_classes.insert(c) {
                    return Err(Error::Config(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
            for s in task.train.iter().chain(task.test.iter()) {
                if !task.classes.contains(&s.label) {
                    return Err(Error::Config(format!(
                        "task {} holds a sample of foreign class {}",
                        task.task, s.label
                    )));
                }
                if s.input.len() != input_dim {
                    return Err(Error::Shape {
                        expected: (1, input_dim),
                        got: (1, s.input.len()),
                    });
                }
            }
        }
        Ok(Self {
            tasks,
            scenario,
            input_dim,
        })
    }

    pub fn tasks(&self) -> &[TaskDataset] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.scenario = scenario;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).sum()
    }
}

/// Vector-space augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    /// Standard deviation of additive Gaussian noise per coordinate.
    pub noise_std: f64,
    /// Multiplicative jitter range `[lo, hi]` applied to the whole vector.
    pub scale_jitter: (f64, f64),
    /// Random rotations in each consecutive coordinate pair.
    pub rotation: bool,
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            scale_jitter: (1.0, 1.0),
            rotation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        if self.scale_jitter.0 > self.scale_jitter.1 {
            return Err(Error::Config(format!(
                "scale jitter range is inverted: [{}, {}]",
                self.scale_jitter.0, self.scale_jitter.1
            )));
        }
        Ok(())
    }
}

/// Builds a synthetic class-incremental stream: `tasks * classes_per_task`
/// Gaussian clusters with seeded means uniform on the unit sphere, isotropic
/// spread, and a per-class 80/20 train/test split. Global class ids run in
/// task order.
pub fn make_synthetic_stream(
    tasks: usize,
    classes_per_task: usize,
    samples_per_class: usize,
    input_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<TaskStream> {
    if tasks == 0 || classes_per_task == 0 {
        return Err(Error::Config("task and class counts must be positive".into()));
    }
    if samples_per_class < 2 {
        return Err(Error::Config(
            "need at least 2 samples per class for a train/test split".into(),
        ));
    }
    if input_dim < 2 {
        return Err(Error::Config("input dimension must be at least 2".into()));
    }
    if cluster_spread < 0.0 {
        return Err(Error::Config("cluster spread must be nonnegative".into()));
    }

    let mut rng = seeded(seed);
    let n_train = ((samples_per_class * 4) / 5).max(1);
    let mut datasets = Vec::with_capacity(tasks);
    let mut next_class: ClassId = 0;
    for task in 1..=tasks {
        let mut classes = Vec::with_capacity(classes_per_task);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for _ in 0..classes_per_task {
            let label = next_class;
            next_class += 1;
            classes.push(label);

            let mut mean: Vec<f64> = (0..input_dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let len = norm(&mean);
            mean.iter_mut().for_each(|v| *v /= len);

            for s in 0..samples_per_class {
                let input: Vec<f64> = mean
                    .iter()
                    .map(|&m| m + cluster_spread * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let sample = Sample { input, label };
                if s < n_train {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        datasets.push(TaskDataset {
            task,
            classes,
            train,
            test,
        });
    }
    TaskStream::new(datasets, Scenario::ClassIl)
}

fn augment_once<R: Rng>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = cfg.scale_jitter;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut out: Vec<f64> = x.iter().map(|&v| v * scale).collect();
    if cfg.rotation {
        let mut i = 0;
        while i + 1 < out.len() {
            let theta = rng.random_range(-ROTATION_RANGE..ROTATION_RANGE);
            let (c, s) = (math::cos(theta), math::sin(theta));
            let (a, b) = (out[i], out[i + 1]);
            out[i] = c * a - s * b;
            out[i + 1] = s * a + c * b;
            i += 2;
        }
    }
    for v in &mut out {
        *v += cfg.noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    out
}

/// Two independent stochastic views of `x`.
pub fn augment_two_views<R: Rng>(
    x: &[f64],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    (augment_once(x, cfg, rng), augment_once(x, cfg, rng))
}

/// A mini-batch of augmented views ready for the encoder: siblings sit at
/// `2k` / `2k+1`, buffer-origin views are flagged non-anchor.
#[derive(Clone, Debug)]
pub struct ViewBatch {
    pub inputs: Mat,
    pub labels: Vec<ClassId>,
    pub view_pair: Vec<usize>,
    pub is_anchor: Vec<bool>,
    /// Per source draw: index into the task's train set for current-task
    /// draws, `None` for buffer draws.
    pub current_sources: Vec<Option<usize>>,
}

impl ViewBatch {
    pub fn views(&self) -> usize {
        self.inputs.rows()
    }
}

/// One epoch of mini-batches over the union of the current task's training
/// pool and the replay buffer: `ceil(|union| / batch_size)` batches of
/// uniform draws, two views per draw, so every union element is drawn at
/// least once in expectation.
pub fn task_batches<R: Rng>(
    dataset: &TaskDataset,
    buffer: &ReplayBuffer,
    batch_size: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<ViewBatch>> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pool = dataset.train_pool();
    let union = pool.len() + buffer.len();
    let n_batches = union.div_ceil(batch_size);
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let draws = sample_batch(buffer, &pool, batch_size, rng)?;
        let n_views = 2 * draws.len();
        let dim = pool[0].0.len();
        let mut inputs = Mat::zeros(n_views, dim);
        let mut labels = Vec::with_capacity(n_views);
        let mut view_pair = Vec::with_capacity(n_views);
        let mut is_anchor = Vec::with_capacity(n_views);
        let mut current_sources = Vec::with_capacity(draws.len());
        for (k, draw) in draws.iter().enumerate() {
            let (a, b) = augment_two_views(&draw.input, cfg, rng);
            inputs.row_mut(2 * k).copy_from_slice(&a);
            inputs.row_mut(2 * k + 1).copy_from_slice(&b);
            labels.push(draw.label);
            labels.push(draw.label);
            view_pair.push(2 * k + 1);
            view_pair.push(2 * k);
            is_anchor.push(!draw.is_buffer);
            is_anchor.push(!draw.is_buffer);
            current_sources.push(draw.current_index);
        }
        batches.push(ViewBatch {
            inputs,
            labels,
            view_pair,
            is_anchor,
            current_sources,
        });
    }
    Ok(batches)
}
