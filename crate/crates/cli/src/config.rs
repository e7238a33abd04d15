//! Experiment configuration files.
//!
//! Configs are JSON with a fixed schema; unknown keys are hard errors so
//! typos surface immediately, and parse errors carry line/column positions.
//! A config pins one experiment cell (stream, model, losses, ablation
//! switches) plus the seed list; the ablation grid file enumerates or
//! products additional cells over the same base.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use etfcl_core::encoder::{FeatureSpace, MlpSpec};
use etfcl_core::losses::{DistillationConfig, PlasticityConfig};
use etfcl_core::rng::SeedFork;
use etfcl_core::stream::{make_synthetic_stream, AugmentConfig, Scenario, TaskStream};
use etfcl_core::trainer::{
    ClassifierMode, ExperimentSpec, PlasticityLoss, StabilityLoss, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub plasticity: PlasticitySection,
    pub stability: StabilitySection,
    pub pseudo_replay: bool,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamConfig {
    Synthetic(SyntheticStream),
    Csv(CsvStream),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStream {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvStream {
    pub path: String,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Vec<usize>,
    pub projector_hidden: usize,
    pub embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs_first_task: usize,
    pub epochs_later: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub buffer_capacity: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    #[serde(default = "default_classifier")]
    pub classifier_mode: ClassifierMode,
    #[serde(default = "default_feature_space")]
    pub feature_space: FeatureSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub noise_std: f64,
    pub scale_jitter: [f64; 2],
    #[serde(default)]
    pub rotation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlasticitySection {
    #[serde(default = "default_plasticity")]
    pub loss: PlasticityLoss,
    pub tau: f64,
    pub gamma: f64,
    #[serde(default)]
    pub skip_degenerate_anchors: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub loss: StabilityLoss,
    pub kappa_past: f64,
    pub kappa_current: f64,
    pub zeta_past: f64,
    pub zeta_current: f64,
    pub warmup_epochs: usize,
}

fn default_scenario() -> Scenario {
    Scenario::ClassIl
}

fn default_momentum() -> f64 {
    0.9
}

fn default_classifier() -> ClassifierMode {
    ClassifierMode::LinearProbe
}

fn default_feature_space() -> FeatureSpace {
    FeatureSpace::Backbone
}

fn default_plasticity() -> PlasticityLoss {
    PlasticityLoss::Fnc2
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.to_spec()?; // surface semantic errors at parse time
        Ok(cfg)
    }

    /// Maps the file schema onto the runnable experiment specification.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let input_dim = match &self.stream {
            StreamConfig::Synthetic(s) => s.input_dim,
            StreamConfig::Csv(c) => {
                crate::io::peek_csv_input_dim(Path::new(&c.path)).unwrap_or(0)
            }
        };
        let spec = ExperimentSpec {
            model: MlpSpec {
                input_dim,
                backbone: self.model.backbone.clone(),
                projector_hidden: self.model.projector_hidden,
                embedding_dim: self.model.embedding_dim,
            },
            train: TrainConfig {
                epochs_first_task: self.train.epochs_first_task,
                epochs_later: self.train.epochs_later,
                batch_size: self.train.batch_size,
                lr: self.train.lr,
                momentum: self.train.momentum,
                plasticity: PlasticityConfig {
                    tau: self.plasticity.tau,
                    gamma: self.plasticity.gamma,
                    skip_degenerate_anchors: self.plasticity.skip_degenerate_anchors,
                },
                distill: DistillationConfig {
                    kappa_past: self.stability.kappa_past,
                    kappa_current: self.stability.kappa_current,
                    zeta_past: self.stability.zeta_past,
                    zeta_current: self.stability.zeta_current,
                    warmup_epochs: self.stability.warmup_epochs,
                    total_epochs: self.train.epochs_later,
                },
                buffer_capacity: self.train.buffer_capacity,
                probe_epochs: self.train.probe_epochs,
                probe_lr: self.train.probe_lr,
                classifier_mode: self.train.classifier_mode,
                feature_space: self.train.feature_space,
            },
            augment: AugmentConfig {
                noise_std: self.augment.noise_std,
                scale_jitter: (self.augment.scale_jitter[0], self.augment.scale_jitter[1]),
                rotation: self.augment.rotation,
            },
            plasticity_loss: self.plasticity.loss,
            stability_loss: self.stability.loss,
            pseudo_replay: self.pseudo_replay,
        };
        spec.validate()
            .map_err(|e| anyhow::anyhow!("invalid experiment configuration: {e}"))?;
        if self.seeds.is_empty() {
            bail!("invalid experiment configuration: the seed list is empty");
        }
        Ok(spec)
    }

    /// Builds the task stream for one run seed. Synthetic data is re-drawn
    /// per seed (forked from the run seed); CSV data is fixed.
    pub fn build_stream(&self, run_seed: u64) -> Result<TaskStream> {
        match &self.stream {
            StreamConfig::Synthetic(s) => {
                let stream_seed = SeedFork::new(run_seed).next_seed();
                let stream = make_synthetic_stream(
                    s.tasks,
                    s.classes_per_task,
                    s.samples_per_class,
                    s.input_dim,
                    s.cluster_spread,
                    stream_seed,
                )?;
                Ok(stream.with_scenario(s.scenario))
            }
            StreamConfig::Csv(c) => {
                let stream = crate::io::load_csv_stream(Path::new(&c.path))?;
                Ok(stream.with_scenario(c.scenario))
            }
        }
    }

    /// The seed each experiment run passes to the trainer; independent of
    /// the stream-generation seed forked from the same run seed.
    pub fn experiment_seed(run_seed: u64) -> u64 {
        let mut fork = SeedFork::new(run_seed);
        let _stream = fork.next_seed();
        fork.next_seed()
    }
}

/// One ablation cell; omitted switches fall back to the base config.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub plasticity: PlasticityLoss,
    pub stability: StabilityLoss,
    #[serde(default)]
    pub pseudo_replay: Option<bool>,
    #[serde(default)]
    pub buffer: Option<usize>,
}

/// Grid file: either an explicit cell list or a cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Cells {
        cells: Vec<CellSpec>,
    },
    Product {
        plasticity: Vec<PlasticityLoss>,
        stability: Vec<StabilityLoss>,
        #[serde(default)]
        pseudo_replay: Option<Vec<bool>>,
        #[serde(default)]
        buffer: Option<Vec<usize>>,
    },
}

impl GridSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read grid file {}", path.display()))?;
        let grid: GridSpec = serde_json::from_str(&text)
            .with_context(|| format!("invalid grid {}", path.display()))?;
        Ok(grid)
    }

    /// Expands to concrete cells, deduplicating repeats (with a warning via
    /// the returned count).
    pub fn expand(&self) -> Result<(Vec<CellSpec>, usize)> {
        let raw: Vec<CellSpec> = match self {
            GridSpec::Cells { cells } => cells.clone(),
            GridSpec::Product {
                plasticity,
                stability,
                pseudo_replay,
                buffer,
            } => {
                let prs: Vec<Option<bool>> = match pseudo_replay {
                    Some(v) => v.iter().map(|&b| Some(b)).collect(),
                    None => vec![None],
                };
                let bufs: Vec<Option<usize>> = match buffer {
                    Some(v) => v.iter().map(|&b| Some(b)).collect(),
                    None => vec![None],
                };
                let mut out = Vec::new();
                for &p in plasticity {
                    for &s in stability {
                        for &pr in &prs {
                            for &b in &bufs {
                                out.push(CellSpec {
                                    plasticity: p,
                                    stability: s,
                                    pseudo_replay: pr,
                                    buffer: b,
                                });
                            }
                        }
                    }
                }
                out
            }
        };
        if raw.is_empty() {
            bail!("ablation grid is empty");
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut cells = Vec::new();
        let mut duplicates = 0;
        for cell in raw {
            if seen.insert(cell.clone()) {
                cells.push(cell);
            } else {
                duplicates += 1;
            }
        }
        Ok((cells, duplicates))
    }
}

/// Applies an ablation cell on top of a base config.
pub fn apply_cell(base: &ExperimentConfig, cell: &CellSpec) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.plasticity.loss = cell.plasticity;
    cfg.stability.loss = cell.stability;
    if let Some(pr) = cell.pseudo_replay {
        cfg.pseudo_replay = pr;
    }
    if let Some(buf) = cell.buffer {
        cfg.train.buffer_capacity = buf;
    }
    cfg
}
