//! Empirical risk together with its gradient (and, for tiny models, its
//! dense Hessian).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::Result;
use crate::loss::{check_data, loss_jet, CHUNK};
use crate::model::{check_hessian_size, grad_f, hessian_f, scatter_grad, unit_states, ModelSpec};
use crate::params::ParamVector;

/// `(L_S(Θ), ∇L_S(Θ))`.
///
/// Per sample, the unit states give `f(x_i)` first; the same states are then
/// reused to add `ℓ'(y_i f)·y_i/n · ∇f(x_i)` into the gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    check_data(spec, data)?;
    let n = data.len();
    let np = spec.n_params();
    let xs = data.inputs();
    let inv_n = 1.0 / n as f64;
    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; np];
            let mut loss = 0.0;
            let mut xj = Vec::with_capacity(spec.d);
            let mut states = Vec::with_capacity(spec.m);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                spec.input_jets(&xs[i], &mut xj);
                let y = data.label(i);
                let f = unit_states(spec, params, &xj, &mut states);
                let (l, d1, _) = loss_jet(y * f);
                loss += l;
                scatter_grad(spec, params, &xj, &states, d1 * y * inv_n, &mut g);
            }
            (loss, g)
        })
        .collect();
    let mut grad = vec![0.0; np];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let (d, m, p) = params.dims();
    Ok((loss * inv_n, ParamVector::from_flat(d, m, p, grad)?))
}

/// Dense `∇²L_S = (1/n) Σ [ℓ''·∇f∇fᵀ + ℓ'·y·∇²f]` (small models only).
pub fn loss_hessian(spec: &ModelSpec, params: &ParamVector, data: &SampleSet) -> Result<DMatrix<f64>> {
    check_hessian_size(spec)?;
    spec.check_params(params)?;
    check_data(spec, data)?;
    let np = spec.n_params();
    let mut h = DMatrix::zeros(np, np);
    for (i, x) in data.inputs().iter().enumerate() {
        let y = data.label(i);
        let g = grad_f(spec, params, x)?;
        let f = crate::model::forward(spec, params, x)?;
        let (_, d1, d2) = loss_jet(y * f);
        let gv = DVector::from_column_slice(g.as_slice());
        h += &gv * gv.transpose() * d2;
        h += hessian_f(spec, params, x)?.assemble() * (d1 * y);
    }
    Ok(h / data.len() as f64)
}
