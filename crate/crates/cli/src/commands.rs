use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use textsense_core::dataset::{generate, write_dataset};
use textsense_core::text::{pseudo_cache, write_embedding_cache};

use crate::config::ExperimentConfig;
use crate::experiment::{columns, load_dataset, run_experiment, write_run, RunOutput};
use crate::report::{Table, BASELINE, FUSED};

/// Generates the configured dataset into the output directory.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let data = generate(&cfg.dataset)?;
    write_dataset(&cfg.output_dir, &data)?;
    cfg.write_resolved(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

/// Writes a pseudo-embedding cache for the configured labels and strategy.
pub fn cmd_embed(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let cache = pseudo_cache(&cfg.dataset.labels(), cfg.embedding_dim, cfg.strategy)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let path = cfg.output_dir.join(format!("embeddings_{}.json", cfg.strategy.tag()));
    write_embedding_cache(&path, &cache)?;
    Ok(path)
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    cfg.write_resolved(&cfg.output_dir)?;
    let data = load_dataset(cfg)?;
    let out = run_experiment(cfg, &data)?;
    write_run(&cfg.output_dir, &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub source: String,
    pub strategy: String,
    /// Mean W+T metrics, or the error that stopped the cell.
    pub outcome: std::result::Result<Vec<f64>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub columns: Vec<String>,
    /// Mean W metrics; the baseline does not depend on the text source.
    pub baseline: Option<Vec<f64>>,
    pub cells: Vec<AblationCell>,
    pub table: Table,
}

fn mean_row(report: &Table, model: &str) -> Result<Vec<f64>> {
    let row = report
        .find(&["mean", model])
        .with_context(|| format!("report has no mean {model} row"))?;
    Table::numbers(row, 2)
}

/// Runs every source by strategy cell; a failing cell is recorded and the
/// rest continue.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationOutput> {
    let base = cfg.clone().resolve()?;
    base.write_resolved(&base.output_dir)?;
    let data = load_dataset(&base)?;
    let cols = columns(&base);
    let mut baseline = None;
    let mut cells = Vec::new();
    for named in &base.ablation.sources {
        for &strategy in &base.ablation.strategies {
            let mut cell = base.clone();
            cell.strategy = strategy;
            cell.embedding_source = named.source.resolve(strategy);
            cell.output_dir = base.output_dir.join(format!("{}_{}", named.name, strategy.tag()));
            let outcome = run_experiment(&cell, &data).and_then(|out| {
                write_run(&cell.output_dir, &out)?;
                if baseline.is_none() {
                    baseline = Some(mean_row(&out.report, BASELINE)?);
                }
                mean_row(&out.report, FUSED)
            });
            cells.push(AblationCell {
                source: named.name.clone(),
                strategy: strategy.tag().to_string(),
                outcome: outcome.map_err(|e| format!("{e:#}")),
            });
        }
    }
    let mut header = ["source", "strategy", "status"].map(String::from).to_vec();
    header.extend(cols.iter().cloned());
    let mut rows = Vec::new();
    if let Some(b) = &baseline {
        let mut row = vec!["wireless-only".into(), "-".into(), "ok".into()];
        row.extend(b.iter().map(f64::to_string));
        rows.push(row);
    }
    for c in &cells {
        let mut row = vec![c.source.clone(), c.strategy.clone()];
        match &c.outcome {
            Ok(v) => {
                row.push("ok".into());
                row.extend(v.iter().map(f64::to_string));
            }
            Err(e) => {
                row.push(format!("error: {e}"));
                row.extend(cols.iter().map(|_| String::new()));
            }
        }
        rows.push(row);
    }
    let table = Table { header, rows };
    table.write(&base.output_dir.join("ablation.csv"))?;
    fs::write(base.output_dir.join("ablation.txt"), table.render())?;
    Ok(AblationOutput {
        columns: cols,
        baseline,
        cells,
        table,
    })
}

/// Renders a report CSV as an aligned table.
pub fn cmd_report(path: &Path) -> Result<String> {
    Ok(Table::read(path)?.render())
}
