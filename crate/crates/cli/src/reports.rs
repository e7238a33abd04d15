//! Report files: per-seed JSON reports, per-seed loss traces, and the
//! summary table aggregated over seeds (one row per experiment cell).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use etfcl_core::trainer::{ExperimentSpec, MetricsReport, PlasticityLoss, StabilityLoss};

/// On-disk wrapper around one run's metrics, carrying the ablation cell it
/// belongs to so summaries can be rebuilt from the files alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub plasticity: String,
    pub stability: String,
    pub pseudo_replay: bool,
    pub buffer: usize,
    pub report: MetricsReport,
}

pub fn plasticity_name(p: PlasticityLoss) -> &'static str {
    match p {
        PlasticityLoss::Fnc2 => "fnc2",
        PlasticityLoss::SupconAsym => "supcon-asym",
    }
}

pub fn stability_name(s: StabilityLoss) -> &'static str {
    match s {
        StabilityLoss::None => "none",
        StabilityLoss::Ird => "ird",
        StabilityLoss::Sprd => "sprd",
        StabilityLoss::Hsd => "hsd",
    }
}

impl ReportFile {
    pub fn new(spec: &ExperimentSpec, report: MetricsReport) -> Self {
        Self {
            plasticity: plasticity_name(spec.plasticity_loss).into(),
            stability: stability_name(spec.stability_loss).into(),
            pseudo_replay: spec.pseudo_replay,
            buffer: spec.train.buffer_capacity,
            report,
        }
    }
}

pub fn report_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("report_{seed}.json"))
}

pub fn write_report(dir: &Path, file: &ReportFile) -> Result<PathBuf> {
    let path = report_path(dir, file.report.seed);
    fs::write(&path, serde_json::to_string_pretty(file)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loss traces as CSV: epoch,task,fnc2,ird,sprd,alpha. The `fnc2` column
/// holds the plasticity loss of the run (also for the contrastive baseline);
/// distillation columns are empty on the first task.
pub fn write_losses_csv(dir: &Path, report: &MetricsReport) -> Result<PathBuf> {
    let path = dir.join(format!("losses_{}.csv", report.seed));
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["epoch", "task", "fnc2", "ird", "sprd", "alpha"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for tr in &report.epoch_traces {
        writer.write_record([
            tr.epoch.to_string(),
            tr.task.to_string(),
            format!("{:?}", tr.plasticity),
            fmt(tr.ird),
            fmt(tr.sprd),
            fmt(tr.alpha),
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

/// One summary row: an experiment cell with accuracy/forgetting statistics
/// over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub plasticity: String,
    pub stability: String,
    pub pseudo_replay: bool,
    pub buffer: usize,
    pub aa_mean: f64,
    pub aa_std: f64,
    pub f_mean: Option<f64>,
    pub f_std: Option<f64>,
    pub n_seeds: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates per-seed reports of one cell into a summary row. All reports
/// must belong to the same cell.
pub fn summarize(reports: &[ReportFile]) -> Result<SummaryRow> {
    let first = reports.first().ok_or_else(|| anyhow::anyhow!("no reports to summarize"))?;
    for r in reports {
        if (&r.plasticity, &r.stability, r.pseudo_replay, r.buffer)
            != (&first.plasticity, &first.stability, first.pseudo_replay, first.buffer)
        {
            bail!("reports from different experiment cells cannot share a summary row");
        }
    }
    let aa: Vec<f64> = reports.iter().map(|r| r.report.average_accuracy).collect();
    let (aa_mean, aa_std) = mean_std(&aa);
    let forgetting: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.report.average_forgetting)
        .collect();
    let (f_mean, f_std) = if forgetting.len() == reports.len() {
        let (m, s) = mean_std(&forgetting);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(SummaryRow {
        plasticity: first.plasticity.clone(),
        stability: first.stability.clone(),
        pseudo_replay: first.pseudo_replay,
        buffer: first.buffer,
        aa_mean,
        aa_std,
        f_mean,
        f_std,
        n_seeds: reports.len(),
    })
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "plasticity",
    "stability",
    "pseudo_replay",
    "buffer",
    "aa_mean",
    "aa_std",
    "f_mean",
    "f_std",
    "n_seeds",
];

pub fn write_summary_csv(dir: &Path, rows: &[SummaryRow]) -> Result<PathBuf> {
    let path = dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(SUMMARY_HEADER)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for row in rows {
        writer.write_record([
            row.plasticity.clone(),
            row.stability.clone(),
            row.pseudo_replay.to_string(),
            row.buffer.to_string(),
            format!("{:?}", row.aa_mean),
            format!("{:?}", row.aa_std),
            fmt(row.f_mean),
            fmt(row.f_std),
            row.n_seeds.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

/// Collects every `report_*.json` under `dir`, in file-name order.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, ReportFile)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let report = read_report(&p)?;
        out.push((p, report));
    }
    Ok(out)
}

/// Plain-text table of summary rows for the terminal.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<9} {:<6} {:>6} {:>9} {:>8} {:>9} {:>8} {:>7}\n",
        "plasticity", "stability", "replay", "buffer", "aa_mean", "aa_std", "f_mean", "f_std",
        "n_seeds"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<9} {:<6} {:>6} {:>9.4} {:>8.4} {:>9} {:>8} {:>7}\n",
            r.plasticity,
            r.stability,
            r.pseudo_replay,
            r.buffer,
            r.aa_mean,
            r.aa_std,
            r.f_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.f_std.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.n_seeds,
        ));
    }
    out
}
