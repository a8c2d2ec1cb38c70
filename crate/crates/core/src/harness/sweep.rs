//! Width and iteration sweeps over seeds.

use std::path::PathBuf;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Activation, BasisFamily};
use crate::data::{gen_synthetic, load_mnist_binary, mnist_paths, Provenance, SampleSet, SyntheticConfig};
use crate::dpgd::{train_dpgd, DPConfig};
use crate::error::{KanError, Result};
use crate::gd::{train_gd, GDConfig};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Synth,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gd,
    Dpgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Width,
    Iters,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Width => "m",
            SweepAxis::Iters => "T",
        })
    }
}

/// The optimizer settings shared by every run. `DPConfig` is tried first
/// since a `GDConfig` document would also accept its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixedConfig {
    Dpgd(DPConfig),
    Gd(GDConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_basis")]
    pub basis: BasisFamily,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_m() -> usize {
    32
}
fn default_p() -> usize {
    8
}
fn default_basis() -> BasisFamily {
    BasisFamily::CubicBspline
}
fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m: default_m(),
            p: default_p(),
            basis: default_basis(),
            activation: default_activation(),
        }
    }
}

/// Synthetic generator settings; the seed comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_sigma_xi2")]
    pub sigma_xi2: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_d() -> usize {
    10
}
fn default_s() -> f64 {
    4.0
}
fn default_sigma_xi2() -> f64 {
    0.1
}
fn default_k() -> usize {
    40
}

impl Default for SynthSource {
    fn default() -> Self {
        SynthSource {
            n_train: 2000,
            n_test: 800,
            d: default_d(),
            s: default_s(),
            sigma_xi2: default_sigma_xi2(),
            k: default_k(),
        }
    }
}

impl SynthSource {
    /// Train and test sets for one seed: one draw of `n_train + n_test`
    /// samples, split in order.
    pub fn generate(&self, seed: u64) -> Result<(SampleSet, SampleSet)> {
        let all = gen_synthetic(&SyntheticConfig {
            n: self.n_train + self.n_test,
            d: self.d,
            s: self.s,
            sigma_xi2: self.sigma_xi2,
            k: self.k,
            seed,
        })?;
        let idx: Vec<usize> = (0..all.len()).collect();
        let part = |p| Provenance::Split {
            parent: Box::new(all.meta.clone()),
            seed,
            fraction: self.n_train as f64 / all.len() as f64,
            part: p,
        };
        Ok((
            all.select(&idx[..self.n_train], part(0)),
            all.select(&idx[self.n_train..], part(1)),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub task: Task,
    pub mode: Mode,
    pub sweep_axis: SweepAxis,
    pub axis_values: Vec<usize>,
    pub fixed: FixedConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub synth: SynthSource,
    /// Falls back to `MNIST_DIR`.
    #[serde(default)]
    pub mnist_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub output_path: PathBuf,
    /// Change-point threshold as a fraction of the observed range.
    #[serde(default = "default_threshold")]
    pub change_threshold: f64,
}

fn default_threshold() -> f64 {
    0.1
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KanError::Config(m.to_string()));
        if self.axis_values.is_empty() {
            return bad("axis_values is empty");
        }
        if self.axis_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("axis_values must be strictly increasing");
        }
        if self.axis_values[0] == 0 {
            return bad("axis values must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty");
        }
        match (&self.fixed, self.mode) {
            (FixedConfig::Gd(c), Mode::Gd) => c.validate()?,
            (FixedConfig::Dpgd(_), Mode::Dpgd) => {}
            _ => return bad("fixed config does not match mode"),
        }
        if !(self.change_threshold > 0.0 && self.change_threshold < 1.0) {
            return bad("change_threshold must lie in (0, 1)");
        }
        Ok(())
    }

    fn spec_for(&self, d: usize, m: usize) -> Result<ModelSpec> {
        ModelSpec::new(d, m, self.model.p, self.model.basis, self.model.activation)
    }

    fn mnist_dir(&self) -> Result<PathBuf> {
        self.mnist_dir
            .clone()
            .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
            .ok_or_else(|| KanError::Config("MNIST task needs mnist_dir or MNIST_DIR".into()))
    }
}

/// One training run's outcome. Metrics are NaN when `status` is not `ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: usize,
    pub seed: u64,
    pub status: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// DP runs: `(1/T) Σ_{k≥1} L_test(Θ(k))`.
    pub avg_test_loss: Option<f64>,
    pub wall_time_s: f64,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(axis_value: usize, seed: u64, e: &dyn std::fmt::Display, wall: f64) -> Self {
        SweepRow {
            axis_value,
            seed,
            status: e.to_string(),
            train_loss: f64::NAN,
            test_loss: f64::NAN,
            train_acc: f64::NAN,
            test_acc: f64::NAN,
            avg_test_loss: None,
            wall_time_s: wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    /// Axis-major, then seeds in configured order.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Axis values for which every run failed.
    pub fn failed_axis_values(&self) -> Vec<usize> {
        self.config
            .axis_values
            .iter()
            .copied()
            .filter(|&v| !self.rows.iter().any(|r| r.axis_value == v && r.ok()))
            .collect()
    }

    /// Mean of `metric` over successful runs per axis value.
    pub fn axis_means(&self, metric: impl Fn(&SweepRow) -> f64) -> Vec<(usize, f64)> {
        self.config
            .axis_values
            .iter()
            .map(|&v| {
                let xs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.axis_value == v && r.ok())
                    .map(&metric)
                    .collect();
                (v, xs.iter().sum::<f64>() / xs.len() as f64)
            })
            .collect()
    }
}

/// Independent 64-bit seeds for the data, init and noise lanes of a run.
pub fn derive_seed(seed: u64, lane: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(lane);
    rng.next_u64()
}

const LANE_INIT: u64 = 1;
const LANE_NOISE: u64 = 2;

struct Job {
    seed_idx: usize,
    /// Several values for a GD iteration sweep, which reads them off one run.
    values: Vec<usize>,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let datasets: Vec<Result<(SampleSet, SampleSet)>> = match cfg.task {
        Task::Synth => cfg.seeds.iter().map(|&s| cfg.synth.generate(s)).collect(),
        Task::Mnist => {
            let dir = cfg.mnist_dir()?;
            let (ti, tl) = mnist_paths(&dir, true);
            let (vi, vl) = mnist_paths(&dir, false);
            let train = load_mnist_binary(&ti, &tl, (0, 1))?;
            let test = load_mnist_binary(&vi, &vl, (0, 1))?;
            cfg.seeds.iter().map(|_| Ok((train.clone(), test.clone()))).collect()
        }
    };

    let gd_iters = cfg.mode == Mode::Gd && cfg.sweep_axis == SweepAxis::Iters;
    let mut jobs = Vec::new();
    if gd_iters {
        for seed_idx in 0..cfg.seeds.len() {
            jobs.push(Job {
                seed_idx,
                values: cfg.axis_values.clone(),
            });
        }
    } else {
        for &v in &cfg.axis_values {
            for seed_idx in 0..cfg.seeds.len() {
                jobs.push(Job {
                    seed_idx,
                    values: vec![v],
                });
            }
        }
    }

    let outputs: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|job| {
            let seed = cfg.seeds[job.seed_idx];
            let t0 = Instant::now();
            let out = match &datasets[job.seed_idx] {
                Ok((train, test)) => run_job(cfg, job, seed, train, test),
                Err(e) => Err(KanError::Input(e.to_string())),
            };
            let wall = t0.elapsed().as_secs_f64();
            match out {
                Ok(mut rows) => {
                    rows.iter_mut().for_each(|r| r.wall_time_s = wall);
                    rows
                }
                Err(e) => job
                    .values
                    .iter()
                    .map(|&v| SweepRow::failed(v, seed, &e, wall))
                    .collect(),
            }
        })
        .collect();

    let mut rows: Vec<SweepRow> = outputs.into_iter().flatten().collect();
    if gd_iters {
        let pos = |v: usize| cfg.axis_values.iter().position(|&a| a == v).unwrap();
        rows.sort_by_key(|r| pos(r.axis_value));
    }
    Ok(SweepResult {
        config: cfg.clone(),
        rows,
    })
}

fn run_job(cfg: &SweepConfig, job: &Job, seed: u64, train: &SampleSet, test: &SampleSet) -> Result<Vec<SweepRow>> {
    let d = train.dim();
    let value = job.values[0];
    let m = match cfg.sweep_axis {
        SweepAxis::Width => value,
        SweepAxis::Iters => cfg.model.m,
    };
    let spec = cfg.spec_for(d, m)?;
    let init_seed = derive_seed(seed, LANE_INIT);
    match &cfg.fixed {
        FixedConfig::Gd(base) => {
            let mut gc = base.clone();
            gc.seed = init_seed;
            if cfg.sweep_axis == SweepAxis::Iters {
                gc.iters = *job.values.last().unwrap();
                gc.record_every = job.values.iter().copied().fold(0, gcd);
            } else {
                gc.record_every = gc.iters.max(1);
            }
            let (_, log) = train_gd(&spec, train, test, &gc).map_err(KanError::from)?;
            job.values
                .iter()
                .map(|&v| {
                    let t = if cfg.sweep_axis == SweepAxis::Iters { v } else { gc.iters };
                    let r = log
                        .rows
                        .iter()
                        .find(|r| r.iter == t)
                        .ok_or_else(|| KanError::Input(format!("iteration {t} was not recorded")))?;
                    Ok(SweepRow {
                        axis_value: v,
                        seed,
                        status: "ok".into(),
                        train_loss: r.train_loss,
                        test_loss: r.test_loss,
                        train_acc: r.train_acc,
                        test_acc: r.test_acc,
                        avg_test_loss: None,
                        wall_time_s: 0.0,
                    })
                })
                .collect()
        }
        FixedConfig::Dpgd(base) => {
            let mut dc = base.clone();
            dc.seed_init = init_seed;
            dc.seed_noise = derive_seed(seed ^ base.seed_noise, LANE_NOISE);
            if cfg.sweep_axis == SweepAxis::Iters {
                dc.iters = value;
            }
            dc.record_every = dc.iters;
            let run = train_dpgd(&spec, train, test, &dc).map_err(KanError::from)?;
            let last = run.log.last().expect("a DP run records its final row");
            Ok(vec![SweepRow {
                axis_value: value,
                seed,
                status: "ok".into(),
                train_loss: last.train_loss,
                test_loss: last.test_loss,
                train_acc: last.train_acc,
                test_acc: last.test_acc,
                avg_test_loss: Some(run.avg_test_loss),
                wall_time_s: 0.0,
            }])
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
