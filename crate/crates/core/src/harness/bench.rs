//! Multi-variant, multi-seed training with aggregated reporting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ResolvedConfig;
use super::{
    aggregate_runs, boxplot_summary, render_boxplot_svg, render_table, BoxplotSummary,
    HarnessError, MetricsRecord, Report, RunConfig, METRICS,
};
use crate::a2c::{train, TrainOptions};
use crate::policy::Variant;

/// One (variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub variant: Variant,
    pub seed: u64,
    pub dir: PathBuf,
    /// Final greedy evaluation.
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub table: Report,
    /// `metric -> variant -> summary` of the final evaluations.
    pub boxplots: BTreeMap<String, BTreeMap<String, BoxplotSummary>>,
    pub records: Vec<MetricsRecord>,
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Trains every variant over every seed (cells run concurrently, each in its
/// own directory), then aggregates the final evaluations into `out`.
/// `episodes` overrides the configured training length of every variant.
pub fn bench(
    config: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    episodes: Option<usize>,
    out: &Path,
) -> Result<BenchReport, HarnessError> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config(
            "bench needs at least one variant and one seed".into(),
        ));
    }
    let resolved: Vec<(Variant, ResolvedConfig)> = variants
        .iter()
        .map(|&v| {
            let mut r = config.resolve(v)?;
            if let Some(n) = episodes {
                r.train.episodes = n;
                r.train.validate()?;
            }
            Ok((v, r))
        })
        .collect::<Result<_, HarnessError>>()?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;

    let jobs: Vec<(Variant, &ResolvedConfig, u64)> = resolved
        .iter()
        .flat_map(|(v, r)| seeds.iter().map(move |&s| (*v, r, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(variant, r, seed)| -> Result<BenchCell, HarnessError> {
            let dir = out.join(variant.name()).join(format!("seed_{seed}"));
            let text =
                serde_json::to_string_pretty(r).map_err(|e| HarnessError::json("config", e))?;
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            write(&dir.join("config.json"), &text)?;
            let options = TrainOptions {
                out_dir: Some(dir.clone()),
                ..TrainOptions::default()
            };
            let run = train(&r.env, &r.policy, &r.train, seed, &options)?;
            let metrics = run
                .final_evaluation()
                .map(|e| e.metrics.clone())
                .ok_or(HarnessError::Undefined("run produced no evaluation"))?;
            Ok(BenchCell {
                variant,
                seed,
                dir,
                metrics,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let records: Vec<MetricsRecord> = cells.iter().map(|c| c.metrics.clone()).collect();
    let table = aggregate_runs(&records)?;
    let mut boxplots: BTreeMap<String, BTreeMap<String, BoxplotSummary>> = BTreeMap::new();
    for metric in METRICS {
        for v in variants {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.variant == v.name())
                .filter_map(|r| r.metric(metric))
                .collect();
            if let Ok(b) = boxplot_summary(&values) {
                boxplots
                    .entry(metric.to_owned())
                    .or_default()
                    .insert(v.name().to_owned(), b);
            }
        }
    }
    let report = BenchReport {
        table,
        boxplots,
        records,
    };

    let json =
        serde_json::to_string_pretty(&report).map_err(|e| HarnessError::json("report", e))?;
    write(&out.join("report.json"), &json)?;
    let box_json = serde_json::to_string_pretty(&report.boxplots)
        .map_err(|e| HarnessError::json("boxplots", e))?;
    write(&out.join("boxplots.json"), &box_json)?;
    write(&out.join("table.txt"), &render_table(&report.table))?;
    for (metric, per_variant) in &report.boxplots {
        write(
            &out.join(format!("boxplot_{metric}.svg")),
            &render_boxplot_svg(metric, per_variant),
        )?;
    }
    Ok(report)
}
