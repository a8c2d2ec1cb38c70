//! Raw and aggregate CSV output for sweeps.
//!
//! Wall times go to a separate `.timing.csv` so the raw and aggregate files
//! are byte-identical across reruns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{SweepResult, SweepRow};
use crate::error::{KanError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Stat {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Stat { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis_value: usize,
    pub n_ok: usize,
    pub train_loss: Stat,
    pub test_loss: Stat,
    pub train_acc: Stat,
    pub test_acc: Stat,
    pub avg_test_loss: Option<Stat>,
    /// Set on the axis value after which mean test accuracy stops improving
    /// by at least the threshold fraction of its range.
    pub change_point: bool,
}

/// Index `i` of the first step `means[i] → means[i+1]` that improves by less
/// than `threshold · (max − min)`.
pub fn change_point(means: &[f64], threshold: f64) -> Option<usize> {
    let finite: Vec<f64> = means.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return None;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = threshold * (hi - lo);
    means.windows(2).position(|w| !(w[1] - w[0] >= cut))
}

pub fn aggregate(result: &SweepResult) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = result
        .config
        .axis_values
        .iter()
        .map(|&v| {
            let ok: Vec<&SweepRow> = result
                .rows
                .iter()
                .filter(|r| r.axis_value == v && r.ok())
                .collect();
            let col = |f: fn(&SweepRow) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let avg: Vec<f64> = ok.iter().filter_map(|r| r.avg_test_loss).collect();
            AggregateRow {
                axis_value: v,
                n_ok: ok.len(),
                train_loss: col(|r| r.train_loss),
                test_loss: col(|r| r.test_loss),
                train_acc: col(|r| r.train_acc),
                test_acc: col(|r| r.test_acc),
                avg_test_loss: (!avg.is_empty()).then(|| Stat::of(&avg)),
                change_point: false,
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.test_acc.mean).collect();
    if let Some(i) = change_point(&means, result.config.change_threshold) {
        rows[i].change_point = true;
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub raw: PathBuf,
    pub aggregate: PathBuf,
    pub timing: PathBuf,
}

impl ReportPaths {
    /// `out.csv` → `out.csv`, `out.agg.csv`, `out.timing.csv`.
    pub fn for_output(path: &Path) -> ReportPaths {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let with = |suffix: &str| path.with_file_name(format!("{stem}.{suffix}.csv"));
        ReportPaths {
            raw: path.to_path_buf(),
            aggregate: with("agg"),
            timing: with("timing"),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn emit_report(result: &SweepResult, path: &Path) -> Result<ReportPaths> {
    let paths = ReportPaths::for_output(path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| KanError::io(dir, e))?;
    }
    let axis = result.config.sweep_axis.to_string();

    let mut w = csv::Writer::from_path(&paths.raw)?;
    w.write_record([&axis, "seed", "status", "train_loss", "test_loss", "train_acc", "test_acc", "avg_test_loss"])?;
    for r in &result.rows {
        w.write_record([
            r.axis_value.to_string(),
            r.seed.to_string(),
            r.status.clone(),
            r.train_loss.to_string(),
            r.test_loss.to_string(),
            r.train_acc.to_string(),
            r.test_acc.to_string(),
            opt(r.avg_test_loss),
        ])?;
    }
    w.flush().map_err(|e| KanError::io(&paths.raw, e))?;

    let mut w = csv::Writer::from_path(&paths.aggregate)?;
    let mut header = vec![axis.clone(), "n_ok".into()];
    for m in ["train_loss", "test_loss", "train_acc", "test_acc", "avg_test_loss"] {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    header.push("change_point".into());
    w.write_record(&header)?;
    for a in aggregate(result) {
        let mut rec = vec![a.axis_value.to_string(), a.n_ok.to_string()];
        for s in [&a.train_loss, &a.test_loss, &a.train_acc, &a.test_acc] {
            rec.push(s.mean.to_string());
            rec.push(s.stderr.to_string());
        }
        rec.push(opt(a.avg_test_loss.as_ref().map(|s| s.mean)));
        rec.push(opt(a.avg_test_loss.as_ref().map(|s| s.stderr)));
        rec.push(u8::from(a.change_point).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| KanError::io(&paths.aggregate, e))?;

    let mut w = csv::Writer::from_path(&paths.timing)?;
    w.write_record([axis.as_str(), "seed", "wall_time_s"])?;
    for r in &result.rows {
        w.write_record([r.axis_value.to_string(), r.seed.to_string(), format!("{:.3}", r.wall_time_s)])?;
    }
    w.flush().map_err(|e| KanError::io(&paths.timing, e))?;
    Ok(paths)
}
