//! Command implementations shared by the binary and the integration tests.

use std::path::Path;

use anyhow::{bail, Context, Result};

use etfcl_core::losses::{fnc2_relations, ird_relation, sprd_relation};
use etfcl_core::rng::seeded;
use etfcl_core::stream::task_batches;
use etfcl_core::trainer::run_experiment_full;

use crate::config::{apply_cell, ExperimentConfig, GridSpec};
use crate::io;
use crate::reports::{
    summarize, write_losses_csv, write_report, write_summary_csv, ReportFile, SummaryRow,
};

/// Runs every seed of one config, writing per-seed reports, loss traces and
/// a one-row summary. Returns the summary row.
pub fn run_command(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seeds_override: Option<&[u64]>,
    dump_relations: bool,
) -> Result<SummaryRow> {
    let spec = cfg.to_spec()?;
    let seeds: Vec<u64> = match seeds_override {
        Some(s) if !s.is_empty() => s.to_vec(),
        Some(_) => bail!("the seed list is empty"),
        None => cfg.seeds.clone(),
    };
    io::ensure_dir(out_dir)?;

    let mut files = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let stream = cfg.build_stream(seed)?;
        let experiment_seed = ExperimentConfig::experiment_seed(seed);
        let (report, params, set, map) = run_experiment_full(&spec, &stream, experiment_seed)
            .with_context(|| format!("seed {seed} failed"))?;
        let file = ReportFile::new(&spec, report);
        write_report(out_dir, &file)?;
        write_losses_csv(out_dir, &file.report)?;

        if dump_relations {
            // One deterministic batch of the final task through the final
            // model, all four relation structures.
            let last = stream.tasks().last().unwrap();
            let buffer = etfcl_core::buffer::ReplayBuffer::new(0, 0);
            let mut rng = seeded(experiment_seed ^ 0xd0d0);
            let batches =
                task_batches(last, &buffer, spec.train.batch_size, &spec.augment, &mut rng)?;
            let vb = &batches[0];
            let (z, _) = etfcl_core::encoder::forward(&params, &vb.inputs)?;
            let batch = etfcl_core::batch::EmbeddingBatch::new(
                z.clone(),
                vb.labels.clone(),
                vb.view_pair.clone(),
                vb.is_anchor.clone(),
            )?;
            let old = set.gather(&map.vertices_before_task(last.task));
            let (c_rel, r_rel) =
                fnc2_relations(&batch, &old, &map, &set, &spec.train.plasticity)?;
            let o_rel = ird_relation(&z, spec.train.distill.kappa_current);
            let all = set.gather(&map.vertices_through_task(last.task));
            let q_rel = sprd_relation(&z, &all, spec.train.distill.zeta_current);
            for (rel, name) in [(c_rel, "c"), (r_rel, "r"), (o_rel, "o"), (q_rel, "q")] {
                io::dump_relation(&rel, &out_dir.join(format!("relations_{seed}_{name}.csv")))?;
            }
        }

        files.push(file);
    }

    let row = summarize(&files)?;
    write_summary_csv(out_dir, std::slice::from_ref(&row))?;
    Ok(row)
}

/// Runs every cell of the grid over the base config; one summary row per
/// cell, per-seed reports in per-cell subdirectories.
pub fn ablate_command(
    base: &ExperimentConfig,
    grid: &GridSpec,
    out_dir: &Path,
    seeds_override: Option<&[u64]>,
) -> Result<Vec<SummaryRow>> {
    let (cells, duplicates) = grid.expand()?;
    if duplicates > 0 {
        eprintln!("warning: {duplicates} duplicate grid cell(s) ignored");
    }
    io::ensure_dir(out_dir)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (idx, cell) in cells.iter().enumerate() {
        let cfg = apply_cell(base, cell);
        cfg.to_spec().with_context(|| {
            format!(
                "grid cell {idx} ({:?}/{:?}) is not a valid combination",
                cell.plasticity, cell.stability
            )
        })?;
        let cell_dir = out_dir.join(format!("cell_{idx:02}"));
        let row = run_command(&cfg, &cell_dir, seeds_override, false)?;
        rows.push(row);
    }
    write_summary_csv(out_dir, &rows)?;
    Ok(rows)
}

/// Rebuilds the summary from the per-seed report files in a directory,
/// grouping by experiment cell.
pub fn report_command(dir: &Path) -> Result<Vec<SummaryRow>> {
    let reports = crate::reports::collect_reports(dir)?;
    if reports.is_empty() {
        bail!("no report_*.json files under {}", dir.display());
    }
    let mut groups: std::collections::BTreeMap<(String, String, bool, usize), Vec<ReportFile>> =
        std::collections::BTreeMap::new();
    for (_, file) in reports {
        groups
            .entry((
                file.plasticity.clone(),
                file.stability.clone(),
                file.pseudo_replay,
                file.buffer,
            ))
            .or_default()
            .push(file);
    }
    let mut rows = Vec::new();
    for (_, group) in groups {
        rows.push(summarize(&group)?);
    }
    write_summary_csv(dir, &rows)?;
    Ok(rows)
}
