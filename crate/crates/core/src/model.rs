//! The two-layer KAN
//!
//! ```text
//! f(x) = 1/√m · Σ_j ⟨c_j, h(σ(z_j(x)))⟩,   z_j(x) = 1/√d · Σ_i ⟨a_{j,i}, h(x_i)⟩
//! ```
//!
//! where `h(v) = (b_1(v), …, b_p(v))`. Gradients and Hessians are closed-form.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{bound_constants, Activation, BasisFamily, BasisSpec, BoundConstants, SpanJet};
use crate::error::{KanError, Result};
use crate::params::{ParamHeader, ParamVector};

/// Largest parameter count for which dense Hessians are built.
pub const HESSIAN_MAX_PARAMS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d: usize,
    pub m: usize,
    /// Shared by both layers; domain `[-1, 1]`.
    pub basis: BasisSpec,
    pub activation: Activation,
    pub bounds: BoundConstants,
}

impl ModelSpec {
    pub fn new(d: usize, m: usize, p: usize, family: BasisFamily, activation: Activation) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(KanError::Config(format!("need d >= 1 and m >= 1, got d={d}, m={m}")));
        }
        let basis = BasisSpec::new(family, p, -1.0, 1.0)?;
        let bounds = bound_constants(&basis, activation);
        Ok(ModelSpec {
            d,
            m,
            basis,
            activation,
            bounds,
        })
    }

    /// Cubic B-spline basis with tanh activation.
    pub fn cubic_tanh(d: usize, m: usize, p: usize) -> Result<Self> {
        Self::new(d, m, p, BasisFamily::CubicBspline, Activation::Tanh)
    }

    pub fn p(&self) -> usize {
        self.basis.len()
    }

    pub fn n_params(&self) -> usize {
        self.m * self.p() * (self.d + 1)
    }

    /// Same architecture with a different width.
    pub fn with_width(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(KanError::Config("width must be positive".into()));
        }
        let mut s = self.clone();
        s.m = m;
        Ok(s)
    }

    pub fn header(&self) -> ParamHeader {
        ParamHeader {
            d: self.d,
            m: self.m,
            p: self.p(),
            basis: self.basis.family(),
            activation: self.activation,
        }
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dims() != (self.d, self.m, self.p()) {
            return Err(KanError::Input(format!(
                "parameter dims {:?} do not match model (d={}, m={}, p={})",
                params.dims(),
                self.d,
                self.m,
                self.p()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(KanError::Input(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// Basis spans of every input coordinate.
    pub(crate) fn input_jets(&self, x: &[f64], out: &mut Vec<SpanJet>) {
        out.clear();
        out.extend(x.iter().map(|&v| self.basis.span_jet(v)));
    }

    /// `z_j` for unit `j` given precomputed input spans.
    #[inline]
    pub(crate) fn preactivation(&self, a_unit: &[f64], xj: &[SpanJet]) -> f64 {
        let p = self.p();
        let s: f64 = xj
            .iter()
            .enumerate()
            .map(|(i, jet)| jet.dot_values(&a_unit[i * p..(i + 1) * p]))
            .sum();
        s / (self.d as f64).sqrt()
    }

    /// Everything about unit `j` at one input.
    #[inline]
    pub(crate) fn unit_state(&self, a_unit: &[f64], xj: &[SpanJet]) -> UnitState {
        let z = self.preactivation(a_unit, xj);
        let (u, s1, s2) = self.activation.jet(z);
        UnitState {
            z,
            s1,
            s2,
            out: self.basis.span_jet(u),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UnitState {
    #[allow(dead_code)]
    pub z: f64,
    pub s1: f64,
    pub s2: f64,
    pub out: SpanJet,
}

/// Standard normal initialization of every coefficient.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..spec.n_params())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    ParamVector::from_flat(spec.d, spec.m, spec.p(), data).expect("length matches spec")
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<f64> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    let mut xj = Vec::with_capacity(spec.d);
    spec.input_jets(x, &mut xj);
    Ok(forward_with_jets(spec, params, &xj))
}

pub(crate) fn forward_with_jets(spec: &ModelSpec, params: &ParamVector, xj: &[SpanJet]) -> f64 {
    let mut s = 0.0;
    for j in 0..spec.m {
        let z = spec.preactivation(params.a_unit(j), xj);
        let u = spec.activation.jet(z).0;
        s += spec.basis.span_jet(u).dot_values(params.c_unit(j));
    }
    s / (spec.m as f64).sqrt()
}

/// `f` at every row of `xs`.
pub fn forward_batch(spec: &ModelSpec, params: &ParamVector, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    let mut xj = Vec::with_capacity(spec.d);
    xs.iter()
        .map(|x| {
            spec.check_input(x)?;
            spec.input_jets(x, &mut xj);
            Ok(forward_with_jets(spec, params, &xj))
        })
        .collect()
}

/// `∇_Θ f(x)` in the flat parameter layout.
pub fn grad_f(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<ParamVector> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    let mut xj = Vec::with_capacity(spec.d);
    spec.input_jets(x, &mut xj);
    let mut g = ParamVector::zeros(spec.d, spec.m, spec.p());
    accumulate_grad(spec, params, &xj, 1.0, g.as_mut_slice());
    Ok(g)
}

/// `out += w · ∇f(x)`, returning `f(x)`; `out` is a flat parameter buffer.
pub(crate) fn accumulate_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    xj: &[SpanJet],
    w: f64,
    out: &mut [f64],
) -> f64 {
    let mut states = Vec::with_capacity(spec.m);
    let f = unit_states(spec, params, xj, &mut states);
    scatter_grad(spec, params, xj, &states, w, out);
    f
}

/// Fills `states` for every unit and returns `f(x)`.
pub(crate) fn unit_states(
    spec: &ModelSpec,
    params: &ParamVector,
    xj: &[SpanJet],
    states: &mut Vec<UnitState>,
) -> f64 {
    states.clear();
    let mut f = 0.0;
    for j in 0..spec.m {
        let st = spec.unit_state(params.a_unit(j), xj);
        f += st.out.dot_values(params.c_unit(j));
        states.push(st);
    }
    f / (spec.m as f64).sqrt()
}

/// `out += w · ∇f(x)` from precomputed unit states.
pub(crate) fn scatter_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    xj: &[SpanJet],
    states: &[UnitState],
    w: f64,
    out: &mut [f64],
) {
    let (d, m, p) = (spec.d, spec.m, spec.p());
    let inv_sm = 1.0 / (m as f64).sqrt();
    let inv_smd = inv_sm / (d as f64).sqrt();
    let c_off = m * d * p;
    for (j, st) in states.iter().enumerate() {
        let o = &st.out;
        let cj = &mut out[c_off + j * p..c_off + (j + 1) * p];
        for r in 0..o.len {
            cj[o.first + r] += w * inv_sm * o.val[r];
        }
        let coef = w * inv_smd * o.dot_d1(params.c_unit(j)) * st.s1;
        if coef != 0.0 {
            let aj = &mut out[j * d * p..(j + 1) * d * p];
            for (i, jet) in xj.iter().enumerate() {
                let base = i * p + jet.first;
                for r in 0..jet.len {
                    aj[base + r] += coef * jet.val[r];
                }
            }
        }
    }
}

/// Non-zero blocks of `∇²_Θ f(x)`: per unit, the `dp × dp` aa block and the
/// `dp × p` ac block. The cc block is zero and cross-unit blocks vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub d: usize,
    pub m: usize,
    pub p: usize,
    pub aa: Vec<DMatrix<f64>>,
    pub ac: Vec<DMatrix<f64>>,
}

impl HessianBlocks {
    /// The `(dp + p)`-square block of unit `j` in (a_j, c_j) coordinates.
    pub fn unit_block(&self, j: usize) -> DMatrix<f64> {
        let dp = self.d * self.p;
        let mut b = DMatrix::zeros(dp + self.p, dp + self.p);
        b.view_mut((0, 0), (dp, dp)).copy_from(&self.aa[j]);
        b.view_mut((0, dp), (dp, self.p)).copy_from(&self.ac[j]);
        b.view_mut((dp, 0), (self.p, dp)).copy_from(&self.ac[j].transpose());
        b
    }

    /// Dense Hessian in the flat parameter layout.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (d, m, p) = (self.d, self.m, self.p);
        let dp = d * p;
        let n = m * p * (d + 1);
        let mut h = DMatrix::zeros(n, n);
        for j in 0..m {
            let ao = j * dp;
            let co = m * dp + j * p;
            h.view_mut((ao, ao), (dp, dp)).copy_from(&self.aa[j]);
            h.view_mut((ao, co), (dp, p)).copy_from(&self.ac[j]);
            h.view_mut((co, ao), (p, dp)).copy_from(&self.ac[j].transpose());
        }
        h
    }

    /// Spectral norm, taken blockwise since units decouple.
    pub fn spectral_norm(&self) -> f64 {
        (0..self.m)
            .map(|j| {
                nalgebra::SymmetricEigen::new(self.unit_block(j))
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |acc, e| acc.max(e.abs()))
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_hessian_size(spec: &ModelSpec) -> Result<()> {
    if spec.n_params() > HESSIAN_MAX_PARAMS {
        return Err(KanError::Refused(format!(
            "dense Hessian needs m·p·(d+1) <= {HESSIAN_MAX_PARAMS}, got {}",
            spec.n_params()
        )));
    }
    Ok(())
}

pub fn hessian_f(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<HessianBlocks> {
    check_hessian_size(spec)?;
    spec.check_params(params)?;
    spec.check_input(x)?;
    let (d, m, p) = (spec.d, spec.m, spec.p());
    let dp = d * p;
    let mut xj = Vec::with_capacity(d);
    spec.input_jets(x, &mut xj);
    let mut hx = vec![0.0; dp];
    for (i, jet) in xj.iter().enumerate() {
        jet.scatter_values(&mut hx[i * p..(i + 1) * p]);
    }
    let hx = nalgebra::DVector::from_vec(hx);
    let sm = (m as f64).sqrt();
    let sd = (d as f64).sqrt();
    let mut aa = Vec::with_capacity(m);
    let mut ac = Vec::with_capacity(m);
    for j in 0..m {
        let st = spec.unit_state(params.a_unit(j), &xj);
        let c = params.c_unit(j);
        // ⟨c, w⟩ with w = σ''·h'(u) + σ'²·h''(u)
        let cw = st.s2 * st.out.dot_d1(c) + st.s1 * st.s1 * st.out.dot_d2(c);
        aa.push(&hx * hx.transpose() * (cw / (d as f64 * sm)));
        let mut h1 = vec![0.0; p];
        for r in 0..st.out.len {
            h1[st.out.first + r] = st.out.d1[r];
        }
        let h1 = nalgebra::DVector::from_vec(h1);
        ac.push(&hx * h1.transpose() * (st.s1 / (sm * sd)));
    }
    Ok(HessianBlocks { d, m, p, aa, ac })
}
