//! Full-batch gradient descent and trajectory diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{KanError, Result};
use crate::loss::evaluate;
use crate::model::{init_params, ModelSpec};
use crate::objective::loss_and_grad;
use crate::params::ParamVector;
use crate::trajectory::{TrajectoryLog, TrajectoryMeta, TrajectoryRow};

/// Training loss above this is treated as divergence.
pub const BLOWUP_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GDConfig {
    pub eta: f64,
    #[serde(rename = "T")]
    pub iters: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl GDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(KanError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(KanError::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// A failed run: the error plus every row recorded before it.
#[derive(Debug)]
pub struct TrainError {
    pub source: KanError,
    pub partial: Box<TrajectoryLog>,
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded rows)", self.source, self.partial.rows.len())
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<TrainError> for KanError {
    fn from(e: TrainError) -> Self {
        e.source
    }
}

pub(crate) fn meta_for(spec: &ModelSpec, eta: f64) -> TrajectoryMeta {
    TrajectoryMeta {
        eta,
        d: spec.d,
        m: spec.m,
        p: spec.p(),
        b_b: spec.bounds.b,
    }
}

/// Row bookkeeping shared by the GD and DP-GD loops.
pub(crate) struct Recorder<'a> {
    pub log: TrajectoryLog,
    spec: &'a ModelSpec,
    init: ParamVector,
    test: &'a SampleSet,
    reference: Option<&'a ParamVector>,
    pub cum_loss: f64,
}

impl<'a> Recorder<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        eta: f64,
        init: &ParamVector,
        test: &'a SampleSet,
        reference: Option<&'a ParamVector>,
    ) -> Self {
        let mut log = TrajectoryLog::new(meta_for(spec, eta));
        if reference.is_some() {
            log.dist_to_ref = Some(Vec::new());
        }
        Recorder {
            log,
            spec,
            init: init.clone(),
            test,
            reference,
            cum_loss: 0.0,
        }
    }

    /// Checks the loss at iteration `k` and accumulates it.
    pub fn observe(&mut self, k: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() || loss > BLOWUP_LOSS {
            return Err(KanError::Numerical {
                iteration: k,
                detail: format!("training loss {loss} diverged"),
            });
        }
        self.cum_loss += loss;
        Ok(())
    }

    pub fn record(
        &mut self,
        k: usize,
        params: &ParamVector,
        train_loss: f64,
        train_acc: f64,
        grad_norm: f64,
        noise_norm: Option<f64>,
    ) -> Result<()> {
        let (test_loss, test_acc) = evaluate(self.spec, params, self.test)?;
        self.log.rows.push(TrajectoryRow {
            iter: k,
            train_loss,
            test_loss,
            train_acc,
            test_acc,
            drift_init: params.distance(&self.init),
            max_c_drift: params.max_unit_c_distance(&self.init),
            grad_norm,
            cum_loss: self.cum_loss,
            noise_norm,
        });
        if let (Some(r), Some(d)) = (self.reference, self.log.dist_to_ref.as_mut()) {
            d.push(params.distance(r));
        }
        Ok(())
    }

    pub fn fail(self, source: KanError) -> TrainError {
        TrainError {
            source,
            partial: Box::new(self.log),
        }
    }
}

pub(crate) fn check_finite_grad(k: usize, g: &ParamVector) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(KanError::Numerical {
            iteration: k,
            detail: "non-finite gradient".into(),
        })
    }
}

/// `Θ − η∇L_S(Θ)`.
pub fn gd_step(spec: &ModelSpec, params: &ParamVector, data: &SampleSet, eta: f64) -> Result<ParamVector> {
    let (_, g) = loss_and_grad(spec, params, data)?;
    check_finite_grad(0, &g)?;
    Ok(apply_step(params, &g, eta))
}

fn apply_step(params: &ParamVector, g: &ParamVector, eta: f64) -> ParamVector {
    let mut next = params.clone();
    next.as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .for_each(|(t, gi)| *t -= eta * gi);
    next
}

/// GD from `init_params(spec, cfg.seed)` for `cfg.iters` steps.
pub fn train_gd(
    spec: &ModelSpec,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &GDConfig,
) -> std::result::Result<(ParamVector, TrajectoryLog), TrainError> {
    let init = init_params(spec, cfg.seed);
    train_gd_from(spec, &init, train, test, cfg, None)
}

/// GD from an explicit starting point, optionally tracking `‖Θ(k) − Θ*‖`.
pub fn train_gd_from(
    spec: &ModelSpec,
    init: &ParamVector,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &GDConfig,
    reference: Option<&ParamVector>,
) -> std::result::Result<(ParamVector, TrajectoryLog), TrainError> {
    let mut rec = Recorder::new(spec, cfg.eta, init, test, reference);
    if let Err(e) = cfg.validate().and_then(|_| spec.check_params(init)) {
        return Err(rec.fail(e));
    }
    let mut params = init.clone();
    for k in 0..=cfg.iters {
        let step = (|| -> Result<ParamVector> {
            let (loss, g) = loss_and_grad(spec, &params, train)?;
            rec.observe(k, loss)?;
            check_finite_grad(k, &g)?;
            if k % cfg.record_every == 0 || k == cfg.iters {
                let acc = crate::loss::accuracy(spec, &params, train)?;
                rec.record(k, &params, loss, acc, g.norm(), None)?;
            }
            Ok(g)
        })();
        match step {
            Ok(g) if k < cfg.iters => params = apply_step(&params, &g, cfg.eta),
            Ok(_) => {}
            Err(e) => return Err(rec.fail(e)),
        }
    }
    Ok((params, rec.log))
}

/// Comparator `Θ*` with `Λ = ‖Θ(0) − Θ*‖₂` and `𝔉 = 2ηT·L_S(Θ*) + Λ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub theta_star: ParamVector,
    pub lambda: f64,
    pub complexity: f64,
    /// `ηT` used in `complexity`.
    pub eta_t: f64,
    pub loss_star: f64,
}

impl ReferencePoint {
    pub fn new(theta0: &ParamVector, theta_star: ParamVector, eta_t: f64, loss_star: f64) -> Self {
        let lambda = theta0.distance(&theta_star);
        ReferencePoint {
            complexity: 2.0 * eta_t * loss_star + lambda * lambda,
            theta_star,
            lambda,
            eta_t,
            loss_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Rows whose training loss exceeds the previous row's.
    pub monotonicity_violations: usize,
    pub max_loss_increase: f64,
    pub max_drift: f64,
    /// `max_k [max_j‖c_j(k) − c_j(0)‖ − (ηB_b√p/√m) Σ_{t<k} L_S(Θ(t))]`.
    pub c_drift_residual: f64,
    /// `‖Θ(k) − Θ*‖ ≤ √2Λ` at every row (needs tracked distances).
    pub within_ref_ball: Option<bool>,
    /// `‖Θ(k) − Θ(0)‖ ≤ 3Λ` at every row.
    pub within_init_ball: Option<bool>,
    /// `((1/T) Σ_{k<T} L_S(Θ(k))) / (𝔉/(ηT))`.
    pub bound_ratio: Option<f64>,
}

pub fn diagnose_trajectory(log: &TrajectoryLog, reference: Option<&ReferencePoint>) -> DiagnosticsReport {
    let rows = &log.rows;
    let mut violations = 0;
    let mut max_inc = 0.0f64;
    for w in rows.windows(2) {
        let inc = w[1].train_loss - w[0].train_loss;
        if inc > 0.0 {
            violations += 1;
            max_inc = max_inc.max(inc);
        }
    }
    let meta = &log.meta;
    let coef = meta.eta * meta.b_b * (meta.p as f64).sqrt() / (meta.m as f64).sqrt();
    let c_drift_residual = rows
        .iter()
        .map(|r| r.max_c_drift - coef * (r.cum_loss - r.train_loss))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_drift = rows.iter().map(|r| r.drift_init).fold(0.0, f64::max);
    let (mut within_ref_ball, mut within_init_ball, mut bound_ratio) = (None, None, None);
    if let Some(rp) = reference {
        let lam = rp.lambda;
        within_init_ball = Some(rows.iter().all(|r| r.drift_init <= 3.0 * lam));
        within_ref_ball = log
            .dist_to_ref
            .as_ref()
            .map(|d| d.iter().all(|&v| v <= std::f64::consts::SQRT_2 * lam));
        if let Some(last) = rows.last().filter(|r| r.iter > 0) {
            let t = last.iter as f64;
            let avg = (last.cum_loss - last.train_loss) / t;
            bound_ratio = Some(avg / (rp.complexity / (meta.eta * t)));
        }
    }
    DiagnosticsReport {
        monotonicity_violations: violations,
        max_loss_increase: max_inc,
        max_drift,
        c_drift_residual: if rows.is_empty() { 0.0 } else { c_drift_residual },
        within_ref_ball,
        within_init_ball,
        bound_ratio,
    }
}
