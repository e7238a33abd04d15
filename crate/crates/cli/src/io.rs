//! File formats: CSV datasets, prototype sets, encoder checkpoints, buffer
//! audits and relation dumps.

use std::fs::{self, File};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use etfcl_core::buffer::ReplayBuffer;
use etfcl_core::encoder::{Activation, Layer, MlpParams};
use etfcl_core::etf::{verify_etf, PrototypeSet};
use etfcl_core::losses::RelationDistribution;
use etfcl_core::stream::{Sample, Scenario, TaskDataset, TaskStream};
use etfcl_core::{ClassId, Mat};

// ---- dataset CSV ---------------------------------------------------------
//
// Header: task,label,split,x0..x{D-1}; split is "train" or "test"; tasks are
// contiguous from 1 and class sets must be disjoint across tasks.

pub fn load_csv_stream(path: &Path) -> Result<TaskStream> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open dataset {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "task" || &headers[1] != "label" || &headers[2] != "split"
    {
        bail!(
            "dataset {} must start with columns task,label,split followed by x0..",
            path.display()
        );
    }
    let dim = headers.len() - 3;
    for (i, name) in headers.iter().skip(3).enumerate() {
        if name != format!("x{i}") {
            bail!("dataset column {} should be named x{i}, found {name}", i + 3);
        }
    }

    let mut per_task: std::collections::BTreeMap<usize, (Vec<Sample>, Vec<Sample>)> =
        std::collections::BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = line + 2; // header is line 1
        let task: usize = record[0]
            .parse()
            .with_context(|| format!("row {row}: bad task index"))?;
        let label: ClassId = record[1]
            .parse()
            .with_context(|| format!("row {row}: bad label"))?;
        let mut input = Vec::with_capacity(dim);
        for v in record.iter().skip(3) {
            input.push(
                v.parse::<f64>()
                    .with_context(|| format!("row {row}: bad feature value {v:?}"))?,
            );
        }
        let entry = per_task.entry(task).or_default();
        let sample = Sample { input, label };
        match &record[2] {
            "train" => entry.0.push(sample),
            "test" => entry.1.push(sample),
            other => bail!("row {row}: split must be train or test, found {other:?}"),
        }
    }

    let mut tasks = Vec::new();
    for (task, (train, test)) in per_task {
        let mut classes: Vec<ClassId> = train.iter().chain(test.iter()).map(|s| s.label).collect();
        classes.sort_unstable();
        classes.dedup();
        tasks.push(TaskDataset {
            task,
            classes,
            train,
            test,
        });
    }
    TaskStream::new(tasks, Scenario::ClassIl).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn save_csv_stream(stream: &TaskStream, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write dataset {}", path.display()))?;
    let dim = stream.input_dim();
    let mut header = vec!["task".to_string(), "label".to_string(), "split".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    writer.write_record(&header)?;
    for task in stream.tasks() {
        for (split, samples) in [("train", &task.train), ("test", &task.test)] {
            for s in samples {
                let mut record = vec![task.task.to_string(), s.label.to_string(), split.into()];
                record.extend(s.input.iter().map(|v| format!("{v:?}")));
                writer.write_record(&record)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Input width of a dataset file, from its header alone.
pub fn peek_csv_input_dim(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open dataset {}", path.display()))?;
    let headers = reader.headers()?;
    if headers.len() < 4 {
        bail!("dataset {} has no feature columns", path.display());
    }
    Ok(headers.len() - 3)
}

// ---- prototype set JSON ---------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PrototypeSetFile {
    k: usize,
    d: usize,
    vectors: Vec<Vec<f64>>,
}

pub fn save_prototypes(set: &PrototypeSet, path: &Path) -> Result<()> {
    let file = PrototypeSetFile {
        k: set.num_classes(),
        d: set.dim(),
        vectors: (0..set.num_classes())
            .map(|i| set.vertex(i).to_vec())
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn load_prototypes(path: &Path) -> Result<PrototypeSet> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read prototype set {}", path.display()))?;
    let file: PrototypeSetFile = serde_json::from_str(&text)?;
    if file.vectors.len() != file.k || file.vectors.iter().any(|v| v.len() != file.d) {
        bail!(
            "prototype file {} is inconsistent with its declared {}x{} shape",
            path.display(),
            file.k,
            file.d
        );
    }
    let set = PrototypeSet::from_vectors(Mat::from_rows(&file.vectors))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    if !verify_etf(&set, 1e-8) {
        bail!(
            "prototype file {} does not satisfy the equiangular frame identities",
            path.display()
        );
    }
    Ok(set)
}

// ---- encoder checkpoints ---------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    backbone_layers: usize,
    layers: Vec<CheckpointLayer>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    activation: Activation,
    /// Row-major weights in full double precision.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        version: 1,
        backbone_layers: params.backbone_layers(),
        layers: params
            .layers()
            .iter()
            .map(|l| CheckpointLayer {
                rows: l.weight.rows(),
                cols: l.weight.cols(),
                activation: l.activation,
                weight: l.weight.data().to_vec(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string(&file)?)
        .with_context(|| format!("cannot write checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != 1 {
        bail!("unsupported checkpoint version {}", file.version);
    }
    let layers: Vec<Layer> = file
        .layers
        .into_iter()
        .map(|l| {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                bail!("checkpoint layer has inconsistent shapes");
            }
            Ok(Layer {
                weight: Mat::from_vec(l.rows, l.cols, l.weight),
                bias: l.bias,
                activation: l.activation,
            })
        })
        .collect::<Result<_>>()?;
    MlpParams::from_layers(layers, file.backbone_layers).map_err(|e| anyhow::anyhow!("{e}"))
}

// ---- buffer audit ----------------------------------------------------------

/// Dumps buffer contents as CSV: x0..x{D-1},label,task.
pub fn dump_buffer(buf: &ReplayBuffer, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let dim = buf.entries().first().map_or(0, |e| e.input.len());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("task".into());
    writer.write_record(&header)?;
    for e in buf.entries() {
        let mut record: Vec<String> = e.input.iter().map(|v| format!("{v:?}")).collect();
        record.push(e.label.to_string());
        record.push(e.task.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

// ---- relation matrix dumps --------------------------------------------------

/// Writes one relation matrix as CSV, one row per anchor/view; rows may be
/// ragged for the focal kinds.
pub fn dump_relation(rel: &RelationDistribution, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# kind: {}\n", rel.kind.as_str()));
    for row in &rel.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Convenience used by tests and the run command.
pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))?;
    Ok(())
}

pub fn open_file(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}
