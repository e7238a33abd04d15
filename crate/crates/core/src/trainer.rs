//! Two-stage continual training over a task stream.
//!
//! Stage one learns representations: each task minimizes the plasticity loss
//! (prototype-anchored contrastive by default) plus, from the second task
//! on, distillation against a frozen snapshot of the model as it stood after
//! the previous task. Stage two evaluates: a classifier is trained on top of
//! the frozen encoder (or the nearest-prototype rule is applied directly)
//! and the accuracy on every task so far is recorded, filling one row of the
//! accuracy matrix per task.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::batch::EmbeddingBatch;
use crate::buffer::ReplayBuffer;
use crate::encoder::{
    backward_and_step, forward, forward_features, init_params, snapshot, FeatureSpace, MlpParams,
    MlpSpec, ModelSnapshot,
};
use crate::error::{Error, Result};
use crate::etf::{generate_etf, ClassPrototypeMap, PrototypeSet};
use crate::linalg::{dot, Mat};
use crate::losses::{
    alpha_schedule, fnc2_loss, ird_loss, sprd_loss, supcon_loss_opts, DistillationConfig,
    PlasticityConfig,
};
use crate::metrics::{
    average_accuracy, average_forgetting, nc_diagnostics, AccuracyMatrix,
};
use crate::rng::{seeded, Rng64, SeedFork};
use crate::stream::{task_batches, AugmentConfig, Scenario, TaskDataset, TaskStream};
use crate::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PlasticityLoss {
    /// Prototype-anchored focal contrastive loss.
    Fnc2,
    /// Supervised contrastive baseline (asymmetric over buffer views).
    SupconAsym,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StabilityLoss {
    None,
    Ird,
    Sprd,
    Hsd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ClassifierMode {
    /// Multinomial logistic probe trained on frozen features of the current
    /// task plus the buffer.
    LinearProbe,
    /// Nearest-prototype rule on the unit-sphere embeddings.
    Nc4,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs_first_task: usize,
    pub epochs_later: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub plasticity: PlasticityConfig,
    pub distill: DistillationConfig,
    pub buffer_capacity: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub classifier_mode: ClassifierMode,
    /// Representation the probe reads; the nearest-prototype rule always
    /// uses the projector output.
    pub feature_space: FeatureSpace,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_first_task == 0 || self.epochs_later == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.probe_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.probe_epochs == 0 {
            return Err(Error::Config("probe epochs must be positive".into()));
        }
        self.plasticity.validate()?;
        self.distill.validate()?;
        if self.distill.total_epochs != self.epochs_later {
            return Err(Error::Config(format!(
                "distillation schedule spans {} epochs but later tasks train for {}",
                self.distill.total_epochs, self.epochs_later
            )));
        }
        Ok(())
    }
}

/// Everything a single experiment run needs besides the stream and seed.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentSpec {
    pub model: MlpSpec,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub plasticity_loss: PlasticityLoss,
    pub stability_loss: StabilityLoss,
    /// Use the prototypes of earlier tasks as extra negatives in the
    /// plasticity loss (stand-ins for absent past samples).
    pub pseudo_replay: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.plasticity_loss == PlasticityLoss::SupconAsym
            && matches!(self.stability_loss, StabilityLoss::Sprd | StabilityLoss::Hsd)
        {
            return Err(Error::Config(
                "prototype-relation distillation is incompatible with the plain \
                 contrastive plasticity loss: its training never shapes \
                 sample-prototype relations"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record of the training stage.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochTrace {
    pub task: usize,
    pub epoch: usize,
    /// Mean plasticity loss per batch.
    pub plasticity: f64,
    pub ird: Option<f64>,
    pub sprd: Option<f64>,
    pub alpha: Option<f64>,
    /// Mean total objective per batch (plasticity + blended stability).
    pub total: f64,
    pub nc1: f64,
    pub nc2: f64,
    /// Anchors this epoch whose prototype ratio exceeded one.
    pub ratio_overflows: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskSummary {
    pub task: usize,
    /// Collapse diagnostics over the train data of every task seen so far.
    pub nc1: f64,
    pub nc2: f64,
    /// Batches on which a distillation loss actually ran.
    pub distill_batches: usize,
}

/// Full outcome of one seeded run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub seed: u64,
    pub scenario: Scenario,
    pub num_tasks: usize,
    pub accuracy: AccuracyMatrix,
    pub average_accuracy: f64,
    pub average_forgetting: Option<f64>,
    pub epoch_traces: Vec<EpochTrace>,
    pub task_summaries: Vec<TaskSummary>,
}

/// Multinomial logistic probe over frozen features. Row `v` of the weight
/// matrix scores the class assigned to prototype vertex `v`.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|r| dot(self.weight.row(r), features) + self.bias[r])
            .collect()
    }

    /// Argmax over the given vertex rows; ties go to the earlier vertex.
    pub fn predict_among(&self, features: &[f64], allowed: &[usize]) -> usize {
        let logits = self.logits(features);
        let mut best = allowed[0];
        for &v in &allowed[1..] {
            if logits[v] > logits[best] {
                best = v;
            }
        }
        best
    }
}

fn inputs_of(samples: &[(Vec<f64>, ClassId)]) -> Mat {
    let rows: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
    Mat::from_rows(&rows)
}

/// Representation stage for task `t`. Returns the fresh teacher snapshot and
/// the number of batches on which distillation ran.
#[allow(clippy::too_many_arguments)]
pub fn train_task_representation(
    params: &mut MlpParams,
    task: &TaskDataset,
    t: usize,
    teacher: Option<&ModelSnapshot>,
    buf: &mut ReplayBuffer,
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
    spec: &ExperimentSpec,
    rng: &mut Rng64,
    traces: &mut Vec<EpochTrace>,
) -> Result<(ModelSnapshot, usize)> {
    let cfg = &spec.train;
    let needs_teacher = t >= 2 && spec.stability_loss != StabilityLoss::None;
    if needs_teacher {
        match teacher {
            None => {
                return Err(Error::Protocol(format!(
                    "task {t} requires the frozen model of task {}",
                    t - 1
                )))
            }
            Some(s) if s.task() != t - 1 => {
                return Err(Error::Protocol(format!(
                    "teacher snapshot is from task {}, expected {}",
                    s.task(),
                    t - 1
                )))
            }
            _ => {}
        }
    }

    let epochs = if t == 1 {
        cfg.epochs_first_task
    } else {
        cfg.epochs_later
    };
    let embed_dim = params.output_dim();
    let old_prototypes = if spec.pseudo_replay {
        set.gather(&map.vertices_before_task(t))
    } else {
        Mat::zeros(0, embed_dim)
    };
    let all_prototypes = set.gather(&map.vertices_through_task(t));

    let mut offered = vec![false; task.train.len()];
    let mut distill_batches = 0usize;

    for epoch in 0..epochs {
        let batches = task_batches(task, buf, cfg.batch_size, &spec.augment, rng)?;
        let n_batches = batches.len();
        let mut plasticity_sum = 0.0;
        let mut ird_sum = 0.0;
        let mut sprd_sum = 0.0;
        let mut total_sum = 0.0;
        let mut overflow_sum = 0usize;
        let mut saw_distill = false;

        for vb in batches {
            let (z, cache) = forward(params, &vb.inputs)?;
            let batch = EmbeddingBatch::new(
                z,
                vb.labels.clone(),
                vb.view_pair.clone(),
                vb.is_anchor.clone(),
            )?;

            let plast = match spec.plasticity_loss {
                PlasticityLoss::Fnc2 => {
                    fnc2_loss(&batch, &old_prototypes, map, set, &cfg.plasticity)?
                }
                PlasticityLoss::SupconAsym => supcon_loss_opts(
                    &batch,
                    cfg.plasticity.tau,
                    cfg.plasticity.skip_degenerate_anchors,
                )?,
            };
            plasticity_sum += plast.value;
            overflow_sum += plast.anchors_above_one;
            let mut grad = plast.grad_z;
            let mut total_value = plast.value;

            if t >= 2 && spec.stability_loss != StabilityLoss::None {
                let teacher_z = forward_features(
                    teacher.unwrap().params(),
                    &vb.inputs,
                    FeatureSpace::Projector,
                )?;
                match spec.stability_loss {
                    StabilityLoss::Ird => {
                        let out = ird_loss(&batch, &teacher_z, &cfg.distill)?;
                        ird_sum += out.value;
                        total_value += out.value;
                        grad.add_scaled(&out.grad_z, 1.0);
                    }
                    StabilityLoss::Sprd => {
                        let out = sprd_loss(&batch, &teacher_z, &all_prototypes, &cfg.distill)?;
                        sprd_sum += out.value;
                        total_value += out.value;
                        grad.add_scaled(&out.grad_z, 1.0);
                    }
                    StabilityLoss::Hsd => {
                        let alpha = alpha_schedule(epoch, &cfg.distill);
                        let ird = ird_loss(&batch, &teacher_z, &cfg.distill)?;
                        let sprd = sprd_loss(&batch, &teacher_z, &all_prototypes, &cfg.distill)?;
                        ird_sum += ird.value;
                        sprd_sum += sprd.value;
                        total_value += (1.0 - alpha) * ird.value + alpha * sprd.value;
                        grad.add_scaled(&ird.grad_z, 1.0 - alpha);
                        grad.add_scaled(&sprd.grad_z, alpha);
                    }
                    StabilityLoss::None => unreachable!(),
                }
                distill_batches += 1;
                saw_distill = true;
            }
            total_sum += total_value;

            // Mean-reduce over views so the step size does not scale with
            // the batch size.
            grad.scale(1.0 / batch.len() as f64);
            backward_and_step(params, &cache, &grad, cfg.lr, cfg.momentum)?;

            // Offer each current-task sample to the reservoir the first time
            // it is drawn within this task.
            for src in vb.current_sources.iter().flatten() {
                if !offered[*src] {
                    offered[*src] = true;
                    let s = &task.train[*src];
                    buf.reservoir_insert(s.input.clone(), s.label, t);
                }
            }
        }

        let nb = n_batches as f64;
        let pool = task.train_pool();
        let features = forward_features(params, &inputs_of(&pool), FeatureSpace::Projector)?;
        let labels: Vec<ClassId> = pool.iter().map(|(_, l)| *l).collect();
        let nc = nc_diagnostics(&features, &labels, set, map)?;
        traces.push(EpochTrace {
            task: t,
            epoch,
            plasticity: plasticity_sum / nb,
            ird: if saw_distill { Some(ird_sum / nb) } else { None },
            sprd: match spec.stability_loss {
                StabilityLoss::Sprd | StabilityLoss::Hsd if saw_distill => Some(sprd_sum / nb),
                _ => None,
            },
            alpha: match spec.stability_loss {
                StabilityLoss::Hsd if saw_distill => Some(alpha_schedule(epoch, &cfg.distill)),
                _ => None,
            },
            total: total_sum / nb,
            nc1: nc.nc1_score,
            nc2: nc.nc2_score,
            ratio_overflows: overflow_sum,
        });
    }

    Ok((snapshot(params, t), distill_batches))
}

/// Classifier stage: a logistic probe over frozen features of the current
/// task's training data plus whatever the buffer holds.
pub fn train_linear_probe(
    params: &MlpParams,
    task: &TaskDataset,
    buf: &ReplayBuffer,
    map: &ClassPrototypeMap,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LinearProbe> {
    let num_classes = map.num_assigned();
    if num_classes == 0 {
        return Err(Error::Protocol("no classes seen before probe training".into()));
    }
    let mut data: Vec<(Vec<f64>, ClassId)> = task.train_pool();
    for e in buf.entries() {
        data.push((e.input.clone(), e.label));
    }
    if data.is_empty() {
        return Err(Error::Protocol("probe has no training samples".into()));
    }

    let features = forward_features(params, &inputs_of(&data), cfg.feature_space)?;
    let targets: Vec<usize> = data
        .iter()
        .map(|(_, l)| map.vertex_for(*l))
        .collect::<Result<_>>()?;

    let feat_dim = features.cols();
    let mut probe = LinearProbe {
        weight: Mat::zeros(num_classes, feat_dim),
        bias: vec![0.0; num_classes],
    };

    let mut rng = seeded(seed);
    let n = features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.probe_epochs {
        // Fisher-Yates with the experiment's deterministic generator.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad_w = Mat::zeros(num_classes, feat_dim);
            let mut grad_b = vec![0.0; num_classes];
            for &idx in chunk {
                let f = features.row(idx);
                let logits = probe.logits(f);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut probs: Vec<f64> =
                    logits.iter().map(|&l| crate::math::exp(l - max)).collect();
                let z: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= z);
                for c in 0..num_classes {
                    let err = probs[c] - if c == targets[idx] { 1.0 } else { 0.0 };
                    if err != 0.0 {
                        crate::linalg::axpy(grad_w.row_mut(c), err, f);
                        grad_b[c] += err;
                    }
                }
            }
            let scale = cfg.probe_lr / chunk.len() as f64;
            probe.weight.add_scaled(&grad_w, -scale);
            for (b, g) in probe.bias.iter_mut().zip(&grad_b) {
                *b -= scale * g;
            }
        }
    }
    Ok(probe)
}

/// Nearest-prototype classification of a raw input over all seen classes;
/// ties break toward the lowest class id.
pub fn nc4_classify(
    params: &MlpParams,
    x: &[f64],
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
) -> Result<ClassId> {
    if map.num_assigned() == 0 {
        return Err(Error::Protocol("no classes seen".into()));
    }
    let z = forward_features(params, &Mat::from_rows(&[x.to_vec()]), FeatureSpace::Projector)?;
    let seen: Vec<ClassId> = map.classes().map(|(c, _)| c).collect();
    nearest_prototype(z.row(0), set, map, &seen)
}

/// Nearest-prototype rule on an already-computed embedding, restricted to
/// `candidates` (ascending class order decides ties).
pub fn nearest_prototype(
    z: &[f64],
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
    candidates: &[ClassId],
) -> Result<ClassId> {
    if candidates.is_empty() {
        return Err(Error::Protocol("no candidate classes".into()));
    }
    let mut best = None;
    for &c in candidates {
        let proto = crate::etf::prototype_for_class(map, set, c)?;
        let score = dot(z, proto);
        best = match best {
            None => Some((c, score)),
            Some((bc, bs)) => {
                if score > bs || (score == bs && c < bc) {
                    Some((c, score))
                } else {
                    Some((bc, bs))
                }
            }
        };
    }
    Ok(best.unwrap().0)
}

enum Classifier {
    Probe(LinearProbe),
    Nc4,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_task(
    params: &MlpParams,
    classifier: &Classifier,
    eval_task: &TaskDataset,
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
    scenario: Scenario,
    feature_space: FeatureSpace,
) -> Result<f64> {
    let samples = &eval_task.test;
    if samples.is_empty() {
        return Err(Error::Protocol(format!(
            "task {} has no test data",
            eval_task.task
        )));
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
    let inputs = Mat::from_rows(&rows);
    let mut correct = 0usize;
    match classifier {
        Classifier::Probe(probe) => {
            let feats = forward_features(params, &inputs, feature_space)?;
            let allowed: Vec<usize> = match scenario {
                Scenario::ClassIl => (0..map.num_assigned()).collect(),
                Scenario::TaskIl => map.vertices_of_task(eval_task.task).to_vec(),
            };
            for (i, s) in samples.iter().enumerate() {
                let predicted = probe.predict_among(feats.row(i), &allowed);
                if predicted == map.vertex_for(s.label)? {
                    correct += 1;
                }
            }
        }
        Classifier::Nc4 => {
            let z = forward_features(params, &inputs, FeatureSpace::Projector)?;
            let candidates: Vec<ClassId> = match scenario {
                Scenario::ClassIl => map.classes().map(|(c, _)| c).collect(),
                Scenario::TaskIl => eval_task.classes.clone(),
            };
            for (i, s) in samples.iter().enumerate() {
                if nearest_prototype(z.row(i), set, map, &candidates)? == s.label {
                    correct += 1;
                }
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Runs the full protocol over the stream: for each task, representation
/// training, buffer updates, classifier training, and evaluation of every
/// task so far. Deterministic per seed.
pub fn run_experiment(
    spec: &ExperimentSpec,
    stream: &TaskStream,
    seed: u64,
) -> Result<MetricsReport> {
    run_experiment_full(spec, stream, seed).map(|(report, _, _, _)| report)
}

/// As [`run_experiment`], additionally returning the trained parameters and
/// the prototype geometry for post-hoc inspection.
pub fn run_experiment_full(
    spec: &ExperimentSpec,
    stream: &TaskStream,
    seed: u64,
) -> Result<(MetricsReport, MlpParams, PrototypeSet, ClassPrototypeMap)> {
    spec.validate()?;
    if spec.model.input_dim != stream.input_dim() {
        return Err(Error::Config(format!(
            "model expects {}-dimensional input, stream provides {}",
            spec.model.input_dim,
            stream.input_dim()
        )));
    }

    // Sub-seeds are drawn in a fixed order; the order is part of the
    // reproducibility contract.
    let mut fork = SeedFork::new(seed);
    let etf_seed = fork.next_seed();
    let init_seed = fork.next_seed();
    let buffer_seed = fork.next_seed();
    let train_seed = fork.next_seed();
    let mut probe_fork = SeedFork::new(fork.next_seed());

    let k_total = stream.total_classes();
    let set = generate_etf(k_total, spec.model.embedding_dim, etf_seed)?;
    let mut map = ClassPrototypeMap::new();
    let mut params = init_params(&spec.model, init_seed)?;
    let mut buf = ReplayBuffer::new(spec.train.buffer_capacity, buffer_seed);
    let mut train_rng = seeded(train_seed);

    let mut accuracy = AccuracyMatrix::new();
    let mut epoch_traces = Vec::new();
    let mut task_summaries = Vec::new();
    let mut teacher: Option<ModelSnapshot> = None;

    for task in stream.tasks() {
        let t = task.task;
        map.assign_task(&task.classes)?;

        let (fresh_snapshot, distill_batches) = train_task_representation(
            &mut params,
            task,
            t,
            teacher.as_ref(),
            &mut buf,
            &set,
            &map,
            spec,
            &mut train_rng,
            &mut epoch_traces,
        )?;
        teacher = Some(fresh_snapshot);

        let classifier = match spec.train.classifier_mode {
            ClassifierMode::LinearProbe => Classifier::Probe(train_linear_probe(
                &params,
                task,
                &buf,
                &map,
                &spec.train,
                probe_fork.next_seed(),
            )?),
            ClassifierMode::Nc4 => Classifier::Nc4,
        };

        let mut row = Vec::with_capacity(t);
        for k in 1..=t {
            row.push(evaluate_task(
                &params,
                &classifier,
                &stream.tasks()[k - 1],
                &set,
                &map,
                stream.scenario(),
                spec.train.feature_space,
            )?);
        }
        accuracy.push_row(row)?;

        // Collapse diagnostics over all seen training data.
        let mut pool: Vec<(Vec<f64>, ClassId)> = Vec::new();
        for seen in stream.tasks().iter().take(t) {
            pool.extend(seen.train_pool());
        }
        let features = forward_features(&params, &inputs_of(&pool), FeatureSpace::Projector)?;
        let labels: Vec<ClassId> = pool.iter().map(|(_, l)| *l).collect();
        let nc = nc_diagnostics(&features, &labels, &set, &map)?;
        task_summaries.push(TaskSummary {
            task: t,
            nc1: nc.nc1_score,
            nc2: nc.nc2_score,
            distill_batches,
        });
    }

    let aa = average_accuracy(&accuracy)?;
    let forgetting = if stream.num_tasks() >= 2 {
        Some(average_forgetting(&accuracy)?)
    } else {
        None
    };

    let report = MetricsReport {
        seed,
        scenario: stream.scenario(),
        num_tasks: stream.num_tasks(),
        accuracy,
        average_accuracy: aa,
        average_forgetting: forgetting,
        epoch_traces,
        task_summaries,
    };
    Ok((report, params, set, map))
}

/// A compact label for report file naming and summaries.
pub fn spec_cell_label(spec: &ExperimentSpec) -> String {
    let plasticity = match spec.plasticity_loss {
        PlasticityLoss::Fnc2 => "fnc2",
        PlasticityLoss::SupconAsym => "supcon-asym",
    };
    let stability = match spec.stability_loss {
        StabilityLoss::None => "none",
        StabilityLoss::Ird => "ird",
        StabilityLoss::Sprd => "sprd",
        StabilityLoss::Hsd => "hsd",
    };
    format!(
        "{plasticity}+{stability}+pr{}+buf{}",
        if spec.pseudo_replay { 1 } else { 0 },
        spec.train.buffer_capacity
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::make_synthetic_stream;

    pub(crate) fn tiny_spec(input_dim: usize) -> ExperimentSpec {
        ExperimentSpec {
            model: MlpSpec {
                input_dim,
                backbone: vec![32, 16],
                projector_hidden: 16,
                embedding_dim: 8,
            },
            train: TrainConfig {
                epochs_first_task: 8,
                epochs_later: 6,
                batch_size: 32,
                lr: 0.05,
                momentum: 0.9,
                plasticity: PlasticityConfig::new(0.5, 1.0),
                distill: DistillationConfig {
                    kappa_past: 0.01,
                    kappa_current: 0.2,
                    zeta_past: 0.01,
                    zeta_current: 0.2,
                    warmup_epochs: 2,
                    total_epochs: 6,
                },
                buffer_capacity: 0,
                probe_epochs: 10,
                probe_lr: 0.5,
                classifier_mode: ClassifierMode::LinearProbe,
                feature_space: FeatureSpace::Backbone,
            },
            augment: AugmentConfig {
                noise_std: 0.02,
                scale_jitter: (0.95, 1.05),
                rotation: false,
            },
            plasticity_loss: PlasticityLoss::Fnc2,
            stability_loss: StabilityLoss::Hsd,
            pseudo_replay: true,
        }
    }

    #[test]
    fn first_task_never_distills() {
        let stream = make_synthetic_stream(2, 2, 30, 10, 0.15, 1).unwrap();
        let spec = tiny_spec(10);
        let report = run_experiment(&spec, &stream, 3).unwrap();
        assert_eq!(report.task_summaries[0].distill_batches, 0);
        assert!(report.task_summaries[1].distill_batches > 0);
        for trace in report.epoch_traces.iter().filter(|t| t.task == 1) {
            assert!(trace.ird.is_none());
            assert!(trace.sprd.is_none());
            assert!(trace.alpha.is_none());
        }
    }

    #[test]
    fn smoke_training_reduces_the_plasticity_loss() {
        let stream = make_synthetic_stream(1, 2, 60, 10, 0.15, 5).unwrap();
        let mut spec = tiny_spec(10);
        spec.train.epochs_first_task = 30;
        let report = run_experiment(&spec, &stream, 7).unwrap();
        let first = report.epoch_traces.first().unwrap().plasticity;
        let last = report.epoch_traces.last().unwrap().plasticity;
        assert!(
            last < first,
            "loss should fall over training: {first} -> {last}"
        );
    }

    #[test]
    fn teacher_requirement_is_enforced() {
        let stream = make_synthetic_stream(2, 2, 20, 10, 0.15, 2).unwrap();
        let spec = tiny_spec(10);
        let set = generate_etf(4, 8, 1).unwrap();
        let mut map = ClassPrototypeMap::new();
        map.assign_task(&stream.tasks()[0].classes).unwrap();
        map.assign_task(&stream.tasks()[1].classes).unwrap();
        let mut params = init_params(&spec.model, 1).unwrap();
        let mut buf = ReplayBuffer::new(0, 1);
        let mut rng = seeded(1);
        let mut traces = Vec::new();
        let err = train_task_representation(
            &mut params,
            &stream.tasks()[1],
            2,
            None,
            &mut buf,
            &set,
            &map,
            &spec,
            &mut rng,
            &mut traces,
        );
        assert!(matches!(err, Err(Error::Protocol(_))));
    }

    #[test]
    fn teacher_stays_frozen_through_student_training() {
        let stream = make_synthetic_stream(2, 2, 30, 10, 0.15, 11).unwrap();
        let spec = tiny_spec(10);
        let mut fork = SeedFork::new(13);
        let _ = fork.next_seed();
        let init_seed = fork.next_seed();

        let set = generate_etf(4, spec.model.embedding_dim, 21).unwrap();
        let mut map = ClassPrototypeMap::new();
        map.assign_task(&stream.tasks()[0].classes).unwrap();
        let mut params = init_params(&spec.model, init_seed).unwrap();
        let mut buf = ReplayBuffer::new(0, 3);
        let mut rng = seeded(17);
        let mut traces = Vec::new();

        let (teacher, _) = train_task_representation(
            &mut params,
            &stream.tasks()[0],
            1,
            None,
            &mut buf,
            &set,
            &map,
            &spec,
            &mut rng,
            &mut traces,
        )
        .unwrap();
        let frozen_weights: Vec<Vec<f64>> = teacher
            .params()
            .layers()
            .iter()
            .map(|l| l.weight.data().to_vec())
            .collect();

        map.assign_task(&stream.tasks()[1].classes).unwrap();
        let _ = train_task_representation(
            &mut params,
            &stream.tasks()[1],
            2,
            Some(&teacher),
            &mut buf,
            &set,
            &map,
            &spec,
            &mut rng,
            &mut traces,
        )
        .unwrap();

        for (layer, before) in teacher.params().layers().iter().zip(&frozen_weights) {
            assert_eq!(layer.weight.data(), before.as_slice());
        }
    }

    #[test]
    fn probe_fits_separable_features_and_leaves_the_encoder_alone() {
        let stream = make_synthetic_stream(1, 2, 50, 10, 0.05, 9).unwrap();
        let spec = tiny_spec(10);
        let params = init_params(&spec.model, 31).unwrap();
        let before: Vec<Vec<f64>> = params
            .layers()
            .iter()
            .map(|l| l.weight.data().to_vec())
            .collect();
        let mut map = ClassPrototypeMap::new();
        map.assign_task(&stream.tasks()[0].classes).unwrap();
        let buf = ReplayBuffer::new(0, 1);
        let probe =
            train_linear_probe(&params, &stream.tasks()[0], &buf, &map, &spec.train, 5).unwrap();

        for (layer, b) in params.layers().iter().zip(&before) {
            assert_eq!(layer.weight.data(), b.as_slice());
        }

        // Tight clusters (spread 0.05) stay separable through a random
        // encoder; the probe should fit its own training data well.
        let pool = stream.tasks()[0].train_pool();
        let feats = forward_features(&params, &inputs_of(&pool), spec.train.feature_space).unwrap();
        let all: Vec<usize> = (0..map.num_assigned()).collect();
        let mut correct = 0;
        for (i, (_, label)) in pool.iter().enumerate() {
            if probe.predict_among(feats.row(i), &all) == map.vertex_for(*label).unwrap() {
                correct += 1;
            }
        }
        let acc = correct as f64 / pool.len() as f64;
        assert!(acc > 0.95, "probe train accuracy {acc}");
    }

    #[test]
    fn nearest_prototype_rule_and_tie_break() {
        let set = generate_etf(4, 8, 41).unwrap();
        let mut map = ClassPrototypeMap::new();
        map.assign_task(&[10, 20]).unwrap();
        map.assign_task(&[30, 40]).unwrap();

        let candidates: Vec<ClassId> = map.classes().map(|(c, _)| c).collect();
        // Exactly at a prototype.
        let c = nearest_prototype(set.vertex(2), &set, &map, &candidates).unwrap();
        assert_eq!(c, 30);

        // Equidistant from the prototypes of classes 10 and 20: any vector
        // orthogonal to their difference; the midpoint direction works.
        let mid: Vec<f64> = set
            .vertex(0)
            .iter()
            .zip(set.vertex(1))
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        let c = nearest_prototype(&mid, &set, &map, &[10, 20]).unwrap();
        assert_eq!(c, 10, "ties break toward the lowest class id");
    }

    #[test]
    fn single_task_average_accuracy_is_the_task_accuracy() {
        let stream = make_synthetic_stream(1, 2, 40, 10, 0.1, 21).unwrap();
        let spec = tiny_spec(10);
        let report = run_experiment(&spec, &stream, 4).unwrap();
        assert_eq!(report.accuracy.num_tasks(), 1);
        assert!(
            (report.average_accuracy - report.accuracy.entry(1, 1).unwrap()).abs() < 1e-15
        );
        assert!(report.average_forgetting.is_none());
    }

    #[test]
    fn accuracy_matrix_is_lower_triangular_filled() {
        let stream = make_synthetic_stream(3, 2, 20, 10, 0.15, 22).unwrap();
        let mut spec = tiny_spec(10);
        spec.train.epochs_first_task = 3;
        spec.train.epochs_later = 3;
        spec.train.distill.total_epochs = 3;
        spec.train.distill.warmup_epochs = 1;
        let report = run_experiment(&spec, &stream, 5).unwrap();
        assert_eq!(report.accuracy.num_tasks(), 3);
        for (i, row) in report.accuracy.rows().iter().enumerate() {
            assert_eq!(row.len(), i + 1);
        }
        assert!(report.average_forgetting.is_some());
    }

    #[test]
    fn identical_seeds_reproduce_the_report() {
        let stream = make_synthetic_stream(2, 2, 25, 10, 0.15, 33).unwrap();
        let spec = tiny_spec(10);
        let a = run_experiment(&spec, &stream, 9).unwrap();
        let b = run_experiment(&spec, &stream, 9).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(&spec, &stream, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn alpha_trace_is_nondecreasing_and_matches_the_schedule() {
        let stream = make_synthetic_stream(2, 2, 30, 10, 0.15, 44).unwrap();
        let spec = tiny_spec(10);
        let report = run_experiment(&spec, &stream, 6).unwrap();
        let alphas: Vec<(usize, f64)> = report
            .epoch_traces
            .iter()
            .filter(|tr| tr.task == 2)
            .map(|tr| (tr.epoch, tr.alpha.unwrap()))
            .collect();
        let mut last = -1.0;
        for (epoch, alpha) in alphas {
            let expected =
                (epoch.saturating_sub(spec.train.distill.warmup_epochs)) as f64 / 6.0;
            assert_eq!(alpha, expected);
            assert!(alpha >= last);
            last = alpha;
        }
    }

    #[test]
    fn recorded_total_is_the_sum_of_the_parts() {
        let stream = make_synthetic_stream(2, 2, 30, 10, 0.15, 55).unwrap();
        let spec = tiny_spec(10);
        let report = run_experiment(&spec, &stream, 8).unwrap();
        for tr in &report.epoch_traces {
            let stability = match (tr.ird, tr.sprd, tr.alpha) {
                (Some(i), Some(s), Some(a)) => (1.0 - a) * i + a * s,
                (Some(i), None, None) => i,
                (None, Some(s), None) => s,
                (None, None, None) => 0.0,
                other => panic!("inconsistent trace components: {other:?}"),
            };
            assert!(
                (tr.total - (tr.plasticity + stability)).abs() < 1e-12,
                "task {} epoch {}: {} vs {}",
                tr.task,
                tr.epoch,
                tr.total,
                tr.plasticity + stability
            );
        }
    }

    #[test]
    fn incompatible_ablation_switches_are_rejected() {
        let mut spec = tiny_spec(10);
        spec.plasticity_loss = PlasticityLoss::SupconAsym;
        spec.stability_loss = StabilityLoss::Sprd;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.stability_loss = StabilityLoss::Hsd;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.stability_loss = StabilityLoss::Ird;
        assert!(spec.validate().is_ok());
    }
}
