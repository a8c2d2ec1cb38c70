//! Per-iteration training records and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::sidecar_path;
use crate::error::{KanError, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "iter",
    "train_loss",
    "test_loss",
    "train_acc",
    "test_acc",
    "drift_init",
    "max_c_drift",
    "grad_norm",
    "cum_loss",
    "noise_norm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// `‖Θ(k) − Θ(0)‖₂`.
    pub drift_init: f64,
    /// `max_j ‖c_j(k) − c_j(0)‖₂`.
    pub max_c_drift: f64,
    /// `‖∇L_S(Θ(k))‖₂`.
    pub grad_norm: f64,
    /// `Σ_{t ≤ k} L_S(Θ(t))` over every iteration, recorded or not.
    pub cum_loss: f64,
    /// DP runs only: `√(Σ ‖B(t)‖²)` over the steps since the previous
    /// recorded row, so row `k` holds the noise that produced `Θ(k)`.
    pub noise_norm: Option<f64>,
}

/// Run constants needed to re-analyze a log without the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub eta: f64,
    pub d: usize,
    pub m: usize,
    pub p: usize,
    /// Uniform basis bound `B_b`.
    pub b_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub meta: TrajectoryMeta,
    pub rows: Vec<TrajectoryRow>,
    /// `‖Θ(k) − Θ*‖₂` per row when a reference point was tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_to_ref: Option<Vec<f64>>,
}

impl TrajectoryLog {
    pub fn new(meta: TrajectoryMeta) -> Self {
        TrajectoryLog {
            meta,
            rows: Vec::new(),
            dist_to_ref: None,
        }
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    /// Writes the CSV and a `<path>.meta.json` sidecar with [`TrajectoryMeta`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                r.train_loss.to_string(),
                r.test_loss.to_string(),
                r.train_acc.to_string(),
                r.test_acc.to_string(),
                r.drift_init.to_string(),
                r.max_c_drift.to_string(),
                r.grad_norm.to_string(),
                r.cum_loss.to_string(),
                r.noise_norm.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| KanError::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.meta)?)
            .map_err(|e| KanError::io(&side, e))
    }

    pub fn read_csv(path: &Path) -> Result<TrajectoryLog> {
        let side = sidecar_path(path);
        let meta: TrajectoryMeta = serde_json::from_str(
            &std::fs::read_to_string(&side).map_err(|e| KanError::io(&side, e))?,
        )?;
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().ne(CSV_COLUMNS) {
            return Err(KanError::Format(format!(
                "{}: unexpected trajectory columns",
                path.display()
            )));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| KanError::Format(format!("bad value `{}` in {}", &rec[i], path.display())))
            };
            rows.push(TrajectoryRow {
                iter: rec[0]
                    .parse()
                    .map_err(|_| KanError::Format(format!("bad iteration `{}`", &rec[0])))?,
                train_loss: f(1)?,
                test_loss: f(2)?,
                train_acc: f(3)?,
                test_acc: f(4)?,
                drift_init: f(5)?,
                max_c_drift: f(6)?,
                grad_norm: f(7)?,
                cum_loss: f(8)?,
                noise_norm: if rec[9].is_empty() { None } else { Some(f(9)?) },
            });
        }
        Ok(TrajectoryLog {
            meta,
            rows,
            dist_to_ref: None,
        })
    }
}
