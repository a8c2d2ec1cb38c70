//! Logistic loss, empirical risk and accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{KanError, Result};
use crate::model::{forward_with_jets, ModelSpec};
use crate::params::ParamVector;

/// Samples per work unit in batched evaluations. Fixed so that the
/// reduction order, and hence every floating-point sum, is independent of
/// the thread count.
pub(crate) const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    #[default]
    Logistic,
}

/// A loss family with its self-boundedness constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
}

impl LossSpec {
    /// `sup|ℓ'|`.
    pub fn b1(&self) -> f64 {
        1.0
    }

    /// `sup ℓ''`.
    pub fn b2(&self) -> f64 {
        0.25
    }

    /// `α` in `|ℓ'(u)| ≤ α·ℓ(u)`.
    pub fn alpha(&self) -> f64 {
        1.0
    }

    pub fn jet(&self, u: f64) -> (f64, f64, f64) {
        match self.family {
            LossFamily::Logistic => loss_jet(u),
        }
    }
}

/// `(ℓ(u), ℓ'(u), ℓ''(u))` for `ℓ(u) = log(1 + e^{−u})`.
#[inline]
pub fn loss_jet(u: f64) -> (f64, f64, f64) {
    let e = (-u.abs()).exp();
    let value = (-u).max(0.0) + e.ln_1p();
    // s(u) = 1/(1+e^{-u}); ℓ' = -s(-u); ℓ'' = s(u)s(-u)
    let (s_pos, s_neg) = if u >= 0.0 {
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    (value, -s_neg, s_pos * s_neg)
}

pub(crate) fn check_data(spec: &ModelSpec, data: &SampleSet) -> Result<()> {
    if data.is_empty() {
        return Err(KanError::Input("dataset is empty".into()));
    }
    if data.dim() != spec.d {
        return Err(KanError::Input(format!(
            "dataset has d={}, model expects d={}",
            data.dim(),
            spec.d
        )));
    }
    Ok(())
}

/// `y_i·f(x_i)` for every sample.
pub fn margins(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    check_data(spec, data)?;
    let xs = data.inputs();
    let chunks: Vec<Vec<f64>> = (0..xs.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut xj = Vec::with_capacity(spec.d);
            (c * CHUNK..((c + 1) * CHUNK).min(xs.len()))
                .map(|i| {
                    spec.input_jets(&xs[i], &mut xj);
                    data.label(i) * forward_with_jets(spec, params, &xj)
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

/// Mean loss and accuracy of a set of margins.
pub fn summarize_margins(margins: &[f64]) -> (f64, f64) {
    let n = margins.len() as f64;
    let loss = margins.iter().map(|&u| loss_jet(u).0).sum::<f64>() / n;
    let acc = margins.iter().filter(|&&u| u > 0.0).count() as f64 / n;
    (loss, acc)
}

/// `L_S(Θ) = (1/n) Σ ℓ(y_i f(x_i))`.
pub fn empirical_risk(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<f64> {
    Ok(summarize_margins(&margins(spec, params, data)?).0)
}

/// Fraction with `y_i f(x_i) > 0`; ties count as errors.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<f64> {
    Ok(summarize_margins(&margins(spec, params, data)?).1)
}

/// `(L_S, accuracy)` in one pass.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<(f64, f64)> {
    Ok(summarize_margins(&margins(spec, params, data)?))
}
