//! Oracles shared by the integration tests. Nothing here calls the crate's
//! evaluation code: basis values come from the Cox-de Boor recursion and the
//! network output is summed directly from its definition.
#![allow(dead_code)]

use kan_core::basis::{Activation, BasisFamily};
use kan_core::data::{gen_synthetic, SampleSet, SyntheticConfig};

/// Clamped uniform knot vector on `[-1, 1]` for `p` functions of degree `q`.
pub fn knots(q: usize, p: usize) -> Vec<f64> {
    let inner = p - q; // number of knot intervals
    let mut t = vec![-1.0; q];
    for i in 0..=inner {
        t.push(-1.0 + 2.0 * i as f64 / inner as f64);
    }
    t.extend(std::iter::repeat_n(1.0, q));
    t
}

/// All `p` B-spline values at `v` (clamped into the domain) by recursion.
pub fn cox_de_boor(q: usize, p: usize, v: f64) -> Vec<f64> {
    let t = knots(q, p);
    let v = v.clamp(-1.0, 1.0);
    let nk = t.len();
    // degree 0 on half-open intervals, closing the last non-empty one
    let mut b: Vec<f64> = (0..nk - 1)
        .map(|i| {
            let last = t[i + 1] == 1.0 && t[i] < 1.0;
            if (t[i] <= v && v < t[i + 1]) || (last && v == 1.0) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for k in 1..=q {
        b = (0..nk - 1 - k)
            .map(|i| {
                let mut s = 0.0;
                if t[i + k] > t[i] {
                    s += (v - t[i]) / (t[i + k] - t[i]) * b[i];
                }
                if t[i + k + 1] > t[i + 1] {
                    s += (t[i + k + 1] - v) / (t[i + k + 1] - t[i + 1]) * b[i + 1];
                }
                s
            })
            .collect();
    }
    b
}

pub fn degree(f: BasisFamily) -> usize {
    match f {
        BasisFamily::Hat => 1,
        BasisFamily::CubicBspline => 3,
    }
}

pub fn act(a: Activation, u: f64) -> f64 {
    match a {
        Activation::Tanh => u.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
    }
}

/// `f(x) = (1/√m) Σ_j Σ_k c_{jk} b_k(σ((1/√d) Σ_i Σ_k a_{jik} b_k(x_i)))`
/// with the documented flat layout.
#[allow(clippy::too_many_arguments)]
pub fn oracle_forward(
    d: usize,
    m: usize,
    p: usize,
    fam: BasisFamily,
    a: Activation,
    theta: &[f64],
    x: &[f64],
) -> f64 {
    let q = degree(fam);
    let hx: Vec<Vec<f64>> = x.iter().map(|&v| cox_de_boor(q, p, v)).collect();
    let mut out = 0.0;
    for j in 0..m {
        let mut z = 0.0;
        for i in 0..d {
            for k in 0..p {
                z += theta[(j * d + i) * p + k] * hx[i][k];
            }
        }
        let s = act(a, z / (d as f64).sqrt());
        let hs = cox_de_boor(q, p, s);
        for k in 0..p {
            out += theta[m * d * p + j * p + k] * hs[k];
        }
    }
    out / (m as f64).sqrt()
}

/// Central differences of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Logistic loss `log(1 + e^{-u})` straight from the definition, with the
/// usual split to avoid overflow.
pub fn logistic(u: f64) -> f64 {
    if u > 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

pub fn synth(n: usize, d: usize, seed: u64) -> SampleSet {
    gen_synthetic(&SyntheticConfig {
        n,
        d,
        s: 4.0,
        sigma_xi2: 0.1,
        k: 40,
        seed,
    })
    .unwrap()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Noise calibration recomputed from the closed forms, returned as
/// `(σ̃², C₁, C₂)` for a cubic/tanh model with constants `(B_b, B'_b, B'_σ)`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_calibration(
    n: usize,
    t: usize,
    eps: f64,
    delta: f64,
    p: usize,
    m: usize,
    r2: f64,
    consts: (f64, f64, f64),
) -> (f64, f64, f64) {
    let (bb, bb1, bs1) = consts;
    let (n, t, p, m) = (n as f64, t as f64, p as f64, m as f64);
    let st = t * (1.0 + (2.0 * t / delta).ln() / eps) / (n * n * eps);
    let r = 4.0 * p.sqrt() + (2.0 * (2.0 / delta).ln().sqrt() + r2) / m.sqrt();
    let c1 = 8.0 * (bs1 * bb1 * bb).powi(2) * p * p * r * r;
    let c2 = 8.0 * bb * bb * p;
    (st, c1, c2)
}
