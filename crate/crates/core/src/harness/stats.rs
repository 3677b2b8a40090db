//! Multi-seed aggregation and boxplot summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{HarnessError, MetricsRecord};

/// Metrics reported per variant, in table order.
pub const METRICS: [&str; 3] = ["distance", "compactness", "crossings"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            avg: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// `variant -> metric -> {avg, min, max}`.
pub type Report = BTreeMap<String, BTreeMap<String, Stat>>;

/// Per-variant mean, minimum and maximum of each metric. Records without a
/// defined value for a metric are left out of that metric.
pub fn aggregate_runs(records: &[MetricsRecord]) -> Result<Report, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Undefined(
            "aggregation needs at least one record",
        ));
    }
    let mut by_variant: BTreeMap<&str, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_variant.entry(&r.variant).or_default().push(r);
    }
    let mut report = Report::new();
    for (variant, rows) in by_variant {
        // sorted so the floating-point sum does not depend on record order
        let mut stats = BTreeMap::new();
        for metric in METRICS {
            let mut values: Vec<f64> = rows.iter().filter_map(|r| r.metric(metric)).collect();
            values.sort_by(f64::total_cmp);
            if let Some(s) = Stat::of(&values) {
                stats.insert(metric.to_owned(), s);
            }
        }
        report.insert(variant.to_owned(), stats);
    }
    Ok(report)
}

/// Plain-text table: one row per (metric, statistic), one column per variant.
pub fn render_table(report: &Report) -> String {
    let variants: Vec<&String> = report.keys().collect();
    let mut out = String::new();
    let _ = write!(out, "{:<12} {:<5}", "metric", "stat");
    for v in &variants {
        let _ = write!(out, " {:>12}", v.to_uppercase());
    }
    out.push('\n');
    for metric in METRICS {
        for (label, pick) in [("avg", 0), ("min", 1), ("max", 2)] {
            let _ = write!(out, "{metric:<12} {label:<5}");
            for v in &variants {
                match report[*v].get(metric) {
                    Some(s) => {
                        let x = [s.avg, s.min, s.max][pick];
                        let _ = write!(out, " {x:>12.2}");
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    /// Lower whisker: smallest value within `q1 - 1.5 IQR`.
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Upper whisker: largest value within `q3 + 1.5 IQR`.
    pub max: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary with linearly interpolated quartiles and 1.5 IQR fences.
pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Undefined("boxplot of an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&x| x < lo || x > hi)
        .collect();
    Ok(BoxplotSummary {
        min: inside[0],
        q1,
        median,
        q3,
        max: inside[inside.len() - 1],
        outliers,
    })
}
