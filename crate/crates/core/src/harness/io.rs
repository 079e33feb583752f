use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::records::{MetricsRecord, SnapshotRow};

pub const METRICS_HEADER: [&str; 8] = [
    "run_id",
    "mode",
    "seed",
    "step",
    "split",
    "task_loss",
    "error_rate",
    "wall_clock_s",
];
pub const SNAPSHOT_HEADER: [&str; 6] = ["run_id", "seed", "step", "y_fixed", "f", "loss"];

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} value {field:?}")))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<&str> = r.headers()?.iter().collect();
    if found != header {
        return Err(Error::Parse(format!("{}: unexpected header {found:?}", path.display())));
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyOutput("metrics"));
    }
    write_rows(
        path,
        &METRICS_HEADER,
        records.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.mode.clone(),
                r.seed.to_string(),
                r.step.to_string(),
                r.split.to_string(),
                fmt_real(r.task_loss),
                fmt_real(r.error_rate),
                fmt_real(r.wall_clock_s),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_rows(path, &METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(MetricsRecord {
                run_id: r[0].to_string(),
                mode: r[1].to_string(),
                seed: parse(&r[2], "seed")?,
                step: parse(&r[3], "step")?,
                split: r[4].parse()?,
                task_loss: parse(&r[5], "task_loss")?,
                error_rate: parse(&r[6], "error_rate")?,
                wall_clock_s: parse(&r[7], "wall_clock_s")?,
            })
        })
        .collect()
}

pub fn write_snapshots(path: &Path, rows: &[SnapshotRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyOutput("snapshots"));
    }
    write_rows(
        path,
        &SNAPSHOT_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.seed.to_string(),
                r.step.to_string(),
                fmt_real(r.y_fixed),
                fmt_real(r.f),
                fmt_real(r.loss),
            ]
        }),
    )
}

pub fn read_snapshots(path: &Path) -> Result<Vec<SnapshotRow>> {
    read_rows(path, &SNAPSHOT_HEADER)?
        .iter()
        .map(|r| {
            Ok(SnapshotRow {
                run_id: r[0].to_string(),
                seed: parse(&r[1], "seed")?,
                step: parse(&r[2], "step")?,
                y_fixed: parse(&r[3], "y_fixed")?,
                f: parse(&r[4], "f")?,
                loss: parse(&r[5], "loss")?,
            })
        })
        .collect()
}
