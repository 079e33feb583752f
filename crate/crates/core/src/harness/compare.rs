use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::io::read_metrics;
use crate::harness::records::{MetricsRecord, Split};
use crate::harness::run::METRICS_FILE;

/// Mean and sample standard deviation of one metric across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub split: Split,
    pub n_runs: usize,
    pub step: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
}

/// `mean±std` with four decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4}±{std:.4}")
}

/// Sample mean and (n - 1) standard deviation; zero spread for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates the final logged step of every run, grouped by (mode, split).
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut last_step: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        let e = last_step.entry(&r.run_id).or_insert(r.step);
        *e = (*e).max(r.step);
    }
    let mut groups: BTreeMap<(&str, Split), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| last_step[r.run_id.as_str()] == r.step) {
        groups.entry((&r.mode, r.split)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((mode, split), rows)| {
            let errs: Vec<f64> = rows.iter().map(|r| r.error_rate).collect();
            let losses: Vec<f64> = rows.iter().map(|r| r.task_loss).collect();
            let (error_mean, error_std) = mean_std(&errs);
            let (loss_mean, loss_std) = mean_std(&losses);
            SummaryRow {
                mode: mode.to_string(),
                split,
                n_runs: rows.len(),
                step: rows.iter().map(|r| r.step).max().unwrap_or(0),
                error_mean,
                error_std,
                loss_mean,
                loss_std,
            }
        })
        .collect()
}

/// Every `<dir>/<mode>/<seed>/metrics.csv`, sorted.
pub fn find_metrics(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for mode_dir in fs_entries(dir)? {
        if !mode_dir.is_dir() {
            continue;
        }
        for seed_dir in fs_entries(&mode_dir)? {
            let f = seed_dir.join(METRICS_FILE);
            if f.is_file() {
                out.push(f);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no {METRICS_FILE} files under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn fs_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .map(|e| {
            e.map(|e| e.path())
                .map_err(|e| Error::io(format!("listing {}", dir.display()), e))
        })
        .collect()
}

pub fn compare_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut records = Vec::new();
    for path in find_metrics(dir)? {
        records.extend(read_metrics(&path)?);
    }
    Ok(summarize(&records))
}
