//! Tangent features at initialization and the empirical separability margin.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{KanError, Result};
use crate::gd::ReferencePoint;
use crate::loss::empirical_risk;
use crate::model::{grad_f, ModelSpec};
use crate::params::{l2, ParamVector};

pub const DEFAULT_MARGIN_ITERS: usize = 2000;
pub const DEFAULT_MARGIN_TOL: f64 = 1e-6;

/// Row `i` is `∇f_{Θ(0)}(x_i)` in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct NTKFeatures {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl NTKFeatures {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(KanError::Input("feature rows have different lengths".into()));
        }
        Ok(NTKFeatures {
            n,
            dim,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scaled(&self, s: f64) -> NTKFeatures {
        NTKFeatures {
            n: self.n,
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `min_i y_i⟨φ_i, w⟩`.
    pub fn min_margin(&self, labels: &[i8], w: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| f64::from(labels[i]) * dot(self.row(i), w))
            .fold(f64::INFINITY, f64::min)
    }

    /// `u64` LE row count, `u64` LE column count, then row-major LE `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.data.len());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| KanError::io(path, e))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn ntk_features(spec: &ModelSpec, params0: &ParamVector, data: &SampleSet) -> Result<NTKFeatures> {
    spec.check_params(params0)?;
    let rows = data
        .inputs()
        .par_iter()
        .map(|x| grad_f(spec, params0, x).map(ParamVector::into_vec))
        .collect::<Result<Vec<_>>>()?;
    NTKFeatures::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    /// Achieved `min_i y_i⟨φ_i, θ₀⟩`, recomputed from the features.
    pub gamma_hat: f64,
    pub theta0: Vec<f64>,
    pub separable: bool,
    #[serde(default)]
    pub tau_suggested: Option<f64>,
}

impl MarginResult {
    /// Attaches `τ = (log T + √log(n/δ))/γ̂` when separable.
    pub fn with_tau(mut self, iters: usize, n: usize, delta: f64) -> Self {
        self.tau_suggested = self
            .separable
            .then(|| suggest_tau(self.gamma_hat, iters, n, delta));
        self
    }
}

pub fn suggest_tau(gamma_hat: f64, iters: usize, n: usize, delta: f64) -> f64 {
    ((iters.max(1) as f64).ln() + (n as f64 / delta).ln().max(0.0).sqrt()) / gamma_hat
}

/// Projected subgradient ascent on `w ↦ min_i y_i⟨φ_i, w⟩` over the unit ball,
/// started from the normalized mean of `y_iφ_i`.
pub fn estimate_margin(features: &NTKFeatures, labels: &[i8], iters: usize, tol: f64) -> Result<MarginResult> {
    let n = features.len();
    if labels.len() != n {
        return Err(KanError::Input(format!("{} labels for {n} feature rows", labels.len())));
    }
    if n < 2 || !labels.contains(&1) || !labels.contains(&-1) {
        return Err(KanError::Input("margin estimation needs both labels present".into()));
    }
    let dim = features.dim();
    let signed = |i: usize| -> Vec<f64> {
        let y = f64::from(labels[i]);
        features.row(i).iter().map(|v| y * v).collect()
    };

    let mut w = vec![0.0; dim];
    for i in 0..n {
        for (acc, v) in w.iter_mut().zip(signed(i)) {
            *acc += v;
        }
    }
    if l2(&w) == 0.0 {
        w = (0..n).map(signed).find(|g| l2(g) > 0.0).unwrap_or_else(|| vec![0.0; dim]);
    }
    normalize(&mut w);

    let mut best = w.clone();
    let mut best_gamma = features.min_margin(labels, &w);
    for t in 0..iters {
        let (imin, _) = (0..n)
            .map(|i| (i, f64::from(labels[i]) * dot(features.row(i), &w)))
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        let g = signed(imin);
        let gn = l2(&g);
        if gn == 0.0 {
            break;
        }
        let step = 1.0 / ((t + 1) as f64).sqrt() / gn;
        w.iter_mut().zip(&g).for_each(|(x, gi)| *x += step * gi);
        let nw = l2(&w);
        if nw > 1.0 {
            w.iter_mut().for_each(|x| *x /= nw);
        }
        let mut cand = w.clone();
        normalize(&mut cand);
        let gamma = features.min_margin(labels, &cand);
        if gamma > best_gamma {
            best_gamma = gamma;
            best = cand;
        }
    }
    // exact value for the reported direction
    let gamma_hat = features.min_margin(labels, &best);
    Ok(MarginResult {
        gamma_hat,
        theta0: best,
        separable: gamma_hat > tol,
        tau_suggested: None,
    })
}

fn normalize(w: &mut [f64]) {
    let n = l2(w);
    if n > 0.0 {
        w.iter_mut().for_each(|x| *x /= n);
    }
}

/// `Θ_τ = Θ(0) + τθ₀`, with `𝔉` evaluated at `ηT = eta_t` and `L_S(Θ_τ)`.
pub fn reference_point(
    spec: &ModelSpec,
    params0: &ParamVector,
    data: &SampleSet,
    result: &MarginResult,
    tau: f64,
    eta_t: f64,
) -> Result<ReferencePoint> {
    if !result.separable {
        return Err(KanError::Input("reference point needs a separable margin estimate".into()));
    }
    if !(tau > 0.0) {
        return Err(KanError::Input(format!("tau must be positive, got {tau}")));
    }
    if result.theta0.len() != params0.len() {
        return Err(KanError::Input("margin direction does not match the parameter count".into()));
    }
    let (d, m, p) = params0.dims();
    let star: Vec<f64> = params0
        .as_slice()
        .iter()
        .zip(&result.theta0)
        .map(|(a, b)| a + tau * b)
        .collect();
    let star = ParamVector::from_flat(d, m, p, star)?;
    let loss_star = empirical_risk(spec, &star, data)?;
    let mut r = ReferencePoint::new(params0, star, eta_t, loss_star);
    // ‖θ₀‖ = 1 up to rounding
    r.lambda = tau;
    r.complexity = 2.0 * eta_t * loss_star + tau * tau;
    Ok(r)
}
