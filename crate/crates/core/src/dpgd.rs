//! Differentially private projected gradient descent.
//!
//! Each step perturbs both gradient blocks with isotropic Gaussian noise
//! and projects each block back onto a ball around its initial value:
//!
//! ```text
//! a⁺ = Proj_{B(a(0), R₁)}(a − η(∂_a L_S + b₁)),   b₁ ~ N(0, σ₁² I)
//! c⁺ = Proj_{B(c(0), R₂)}(c − η(∂_c L_S + b₂)),   b₂ ~ N(0, σ₂² I)
//! ```
//!
//! Noise for step `k` comes from its own ChaCha stream (`stream = k`) of the
//! noise seed, so replaying any single step does not depend on the others.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{KanError, Result};
use crate::gd::{check_finite_grad, Recorder, TrainError};
use crate::loss::{evaluate, LossSpec};
use crate::model::{init_params, ModelSpec};
use crate::objective::loss_and_grad;
use crate::params::{l2, ParamVector};
use crate::trajectory::TrajectoryLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DPConfig {
    pub epsilon: f64,
    /// Defaults to `1/n` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(rename = "T")]
    pub iters: usize,
    pub eta: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(default)]
    pub seed_init: u64,
    #[serde(default)]
    pub seed_noise: u64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl DPConfig {
    pub fn resolve_delta(&self, n: usize) -> f64 {
        self.delta.unwrap_or(1.0 / n.max(1) as f64)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(KanError::Config(m));
        let delta = self.resolve_delta(n);
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {delta}"));
        }
        if self.iters == 0 {
            return bad("DP-GD needs T >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.r1 > 0.0 && self.r2 > 0.0) {
            return bad(format!("radii must be positive, got R1={} R2={}", self.r1, self.r2));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        Ok(())
    }
}

/// `4√p + (2√log(2/δ) + R₂)/√m`, the bound on `‖c‖/√m` over `B(c(0), R₂)`
/// on the initialization event.
fn c_scale(p: f64, m: f64, delta: f64, r2: f64) -> f64 {
    4.0 * p.sqrt() + (2.0 * (2.0 / delta).ln().sqrt() + r2) / m.sqrt()
}

/// `(Δ_a, Δ_c)`: ℓ₂-sensitivities of the two gradient blocks.
pub fn sensitivities(spec: &ModelSpec, n: usize, r2: f64, delta: f64) -> (f64, f64) {
    let bc = &spec.bounds;
    let bl = LossSpec::default().b1();
    let p = spec.p() as f64;
    let n = n as f64;
    let delta_c = 2.0 * bl * bc.b * p.sqrt() / n;
    let delta_a = 2.0 * bl * bc.sigma1 * bc.b1 * bc.b * p / n * c_scale(p, spec.m as f64, delta, r2);
    (delta_a, delta_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "T")]
    pub iters: usize,
    pub n: usize,
    pub sigma_tilde2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub sigma1_2: f64,
    pub sigma2_2: f64,
    pub delta_a: f64,
    pub delta_c: f64,
}

/// `σ̃² = T(1 + log(2T/δ)/ε) / (n²ε)`.
pub fn sigma_tilde2(iters: usize, n: usize, epsilon: f64, delta: f64) -> f64 {
    let t = iters as f64;
    let n = n as f64;
    t * (1.0 + (2.0 * t / delta).ln() / epsilon) / (n * n * epsilon)
}

pub fn calibrate_noise(cfg: &DPConfig, spec: &ModelSpec, n: usize) -> NoiseCalibration {
    let delta = cfg.resolve_delta(n);
    let bc = &spec.bounds;
    let bl = LossSpec::default().b1();
    let p = spec.p() as f64;
    let st2 = sigma_tilde2(cfg.iters, n, cfg.epsilon, delta);
    let k = bl * bc.sigma1 * bc.b1 * bc.b;
    let c1 = 8.0 * k * k * p * p * c_scale(p, spec.m as f64, delta, cfg.r2).powi(2);
    let c2 = 8.0 * (bl * bc.b).powi(2) * p;
    let (delta_a, delta_c) = sensitivities(spec, n, cfg.r2, delta);
    NoiseCalibration {
        epsilon: cfg.epsilon,
        delta,
        iters: cfg.iters,
        n,
        sigma_tilde2: st2,
        c1,
        c2,
        sigma1_2: c1 * st2,
        sigma2_2: c2 * st2,
        delta_a,
        delta_c,
    }
}

/// Per-step Gaussian variance for sensitivity `sens` in the privacy proof:
/// `2T(1 + log(2T/δ)/ε)·Δ²/ε`.
pub fn gaussian_step_variance(iters: usize, epsilon: f64, delta: f64, sens: f64) -> f64 {
    let t = iters as f64;
    2.0 * t * (1.0 + (2.0 * t / delta).ln() / epsilon) * sens * sens / epsilon
}

/// The Rényi accounting chain evaluated for a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpAccount {
    /// Order `λ = 1 + 2 log(2/δ)/ε`.
    pub order: f64,
    /// `λΔ²/(2σ²)` for one block at one step (both blocks are equal).
    pub rho_step: f64,
    /// Composition over both blocks and `T` steps.
    pub rho_total: f64,
    /// `ρ_total + log(2/δ)/(λ − 1)`: the ε implied at level `δ/2`.
    pub epsilon_implied: f64,
}

pub fn rdp_account(cal: &NoiseCalibration) -> RdpAccount {
    let order = 1.0 + 2.0 * (2.0 / cal.delta).ln() / cal.epsilon;
    let rho_a = order * cal.delta_a.powi(2) / (2.0 * cal.sigma1_2);
    let rho_c = order * cal.delta_c.powi(2) / (2.0 * cal.sigma2_2);
    let rho_total = cal.iters as f64 * (rho_a + rho_c);
    RdpAccount {
        order,
        rho_step: rho_a,
        rho_total,
        epsilon_implied: rho_total + (2.0 / cal.delta).ln() / (order - 1.0),
    }
}

/// Euclidean projection of `v` onto `B(center, r)`.
pub fn project_ball(v: &[f64], center: &[f64], r: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    project_ball_in_place(&mut out, center, r);
    out
}

pub fn project_ball_in_place(v: &mut [f64], center: &[f64], r: f64) {
    let dist = crate::params::dist(v, center);
    if dist > r {
        let s = r / dist;
        v.iter_mut()
            .zip(center)
            .for_each(|(x, c)| *x = c + s * (*x - c));
    }
}

/// `‖c(0)‖₂ ≤ 4√(pm) + 2√log(2/δ)`, the event the privacy proof conditions on.
pub fn c0_event_holds(spec: &ModelSpec, init: &ParamVector, delta: f64) -> bool {
    let pm = (spec.p() * spec.m) as f64;
    l2(init.c()) <= 4.0 * pm.sqrt() + 2.0 * (2.0 / delta).ln().sqrt()
}

/// Noise of step `k`: `(b₁, b₂)` drawn from stream `k` of `seed`.
pub fn step_noise(seed: u64, k: usize, len_a: usize, len_c: usize, cal: &NoiseCalibration) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let s1 = cal.sigma1_2.sqrt();
    let s2 = cal.sigma2_2.sqrt();
    let b1 = (0..len_a)
        .map(|_| s1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let b2 = (0..len_c)
        .map(|_| s2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    (b1, b2)
}

/// One DP-GD step given the gradient at `params` and the step's noise.
/// Returns the new iterate and `(‖b₁‖, ‖b₂‖)`.
pub fn dpgd_step_with(
    params: &ParamVector,
    init: &ParamVector,
    grad: &ParamVector,
    noise: (&[f64], &[f64]),
    eta: f64,
    r1: f64,
    r2: f64,
) -> (ParamVector, (f64, f64)) {
    let mut next = params.clone();
    let (ga, gc) = grad.as_slice().split_at(grad.a().len());
    {
        let (a, c) = next.split_mut();
        for ((x, g), b) in a.iter_mut().zip(ga).zip(noise.0) {
            *x -= eta * (g + b);
        }
        for ((x, g), b) in c.iter_mut().zip(gc).zip(noise.1) {
            *x -= eta * (g + b);
        }
        project_ball_in_place(a, init.a(), r1);
        project_ball_in_place(c, init.c(), r2);
    }
    (next, (l2(noise.0), l2(noise.1)))
}

/// One DP-GD step at iteration `k`, drawing noise from `cfg.seed_noise`.
pub fn dpgd_step(
    spec: &ModelSpec,
    params: &ParamVector,
    init: &ParamVector,
    data: &SampleSet,
    cfg: &DPConfig,
    cal: &NoiseCalibration,
    k: usize,
) -> Result<(ParamVector, (f64, f64))> {
    let (_, g) = loss_and_grad(spec, params, data)?;
    check_finite_grad(k, &g)?;
    let (b1, b2) = step_noise(cfg.seed_noise, k, g.a().len(), g.c().len(), cal);
    let out = dpgd_step_with(params, init, &g, (&b1, &b2), cfg.eta, cfg.r1, cfg.r2);
    if !out.0.is_finite() {
        return Err(KanError::Numerical {
            iteration: k,
            detail: "non-finite DP-GD iterate".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DpRun {
    /// `Θ_priv`, the last iterate.
    pub params: ParamVector,
    pub log: TrajectoryLog,
    pub calibration: NoiseCalibration,
    /// `(1/T) Σ_{k=1}^{T} L_test(Θ(k))`.
    pub avg_test_loss: f64,
    pub c0_event: bool,
}

/// Noisy projected GD from `init_params(spec, cfg.seed_init)`.
pub fn train_dpgd(
    spec: &ModelSpec,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &DPConfig,
) -> std::result::Result<DpRun, TrainError> {
    run(spec, train, test, cfg, true)
}

/// The same projected iteration with the noise switched off.
pub fn train_projected_gd(
    spec: &ModelSpec,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &DPConfig,
) -> std::result::Result<DpRun, TrainError> {
    run(spec, train, test, cfg, false)
}

fn run(
    spec: &ModelSpec,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &DPConfig,
    noisy: bool,
) -> std::result::Result<DpRun, TrainError> {
    let init = init_params(spec, cfg.seed_init);
    let mut rec = Recorder::new(spec, cfg.eta, &init, test, None);
    if let Err(e) = cfg.validate(train.len()) {
        return Err(rec.fail(e));
    }
    let cal = calibrate_noise(cfg, spec, train.len());
    let delta = cal.delta;
    let mut params = init.clone();
    let mut pending_noise2 = 0.0f64;
    let mut test_loss_sum = 0.0;
    let (la, lc) = (init.a().len(), init.c().len());
    for k in 0..=cfg.iters {
        let step = (|| -> Result<ParamVector> {
            let (loss, g) = loss_and_grad(spec, &params, train)?;
            rec.observe(k, loss)?;
            check_finite_grad(k, &g)?;
            if k > 0 {
                test_loss_sum += evaluate(spec, &params, test)?.0;
            }
            if k % cfg.record_every == 0 || k == cfg.iters {
                let acc = crate::loss::accuracy(spec, &params, train)?;
                let noise = noisy.then_some(pending_noise2.sqrt());
                rec.record(k, &params, loss, acc, g.norm(), noise)?;
                pending_noise2 = 0.0;
            }
            Ok(g)
        })();
        let g = match step {
            Ok(g) => g,
            Err(e) => return Err(rec.fail(e)),
        };
        if k == cfg.iters {
            break;
        }
        let (b1, b2) = if noisy {
            step_noise(cfg.seed_noise, k, la, lc, &cal)
        } else {
            (vec![0.0; la], vec![0.0; lc])
        };
        let (next, (n1, n2)) = dpgd_step_with(&params, &init, &g, (&b1, &b2), cfg.eta, cfg.r1, cfg.r2);
        if !next.is_finite() {
            return Err(rec.fail(KanError::Numerical {
                iteration: k,
                detail: "non-finite DP-GD iterate".into(),
            }));
        }
        pending_noise2 += n1 * n1 + n2 * n2;
        params = next;
    }
    Ok(DpRun {
        params,
        log: rec.log,
        calibration: cal,
        avg_test_loss: test_loss_sum / cfg.iters as f64,
        c0_event: c0_event_holds(spec, &init, delta),
    })
}

/// Explicit smoothness and curvature constants for the logistic loss.
///
/// With `K = 4√p + (2√log(2/δ) + ‖c − c(0)‖)/√m` and
/// `r = max_j ‖c_j − c_j(0)‖`:
///
/// ```text
/// G² = p·B_b² + (B'_σ B_b B'_b p K)²                  ≥ sup_x ‖∇f‖²
/// H  = [2B'_σ B_b B'_b p
///       + B_b²(B''_σ B'_b + B'_σ² B''_b) p^{3/2} (4√p + 2√log(2m/δ) + r)] / √m
///                                                     ≥ sup_x ‖∇²f‖
/// ρ̂ = G² + H,   κ̂ = √m·H
/// ```
///
/// Both hold on the initialization event for `c(0)`; `ρ̂` bounds
/// `λ_max(∇²L_S)` and `2ρ̂L_S` bounds `‖∇L_S‖²`, while
/// `λ_min(∇²L_S) ≥ −κ̂ L_S/√m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub grad_sq: f64,
    pub hess: f64,
    pub rho_bar: f64,
    pub kappa_bar: f64,
}

impl TheoryConstants {
    pub fn assemble(spec: &ModelSpec, delta: f64, c_drift: f64, max_unit_c_drift: f64) -> Result<Self> {
        let bc = &spec.bounds;
        let b2 = bc.b2_checked()?;
        let p = spec.p() as f64;
        let m = spec.m as f64;
        let k = 4.0 * p.sqrt() + (2.0 * (2.0 / delta).ln().sqrt() + c_drift) / m.sqrt();
        let grad_sq = p * bc.b * bc.b + (bc.sigma1 * bc.b * bc.b1 * p * k).powi(2);
        let unit_c = 4.0 * p.sqrt() + 2.0 * (2.0 * m / delta).ln().sqrt() + max_unit_c_drift;
        let hess = (2.0 * bc.sigma1 * bc.b * bc.b1 * p
            + bc.b * bc.b * (bc.sigma2 * bc.b1 + bc.sigma1 * bc.sigma1 * b2) * p.powf(1.5) * unit_c)
            / m.sqrt();
        Ok(TheoryConstants {
            grad_sq,
            hess,
            rho_bar: grad_sq + hess,
            kappa_bar: m.sqrt() * hess,
        })
    }

    /// Largest step size for which the descent lemma applies.
    pub fn eta_max(&self) -> f64 {
        1.0 / self.rho_bar
    }
}

/// `max_j ‖c_j(0)‖ ≤ 4√p + 2√log(2m/δ)`, the per-unit initialization event.
pub fn unit_c0_event_holds(spec: &ModelSpec, init: &ParamVector, delta: f64) -> bool {
    let bound = 4.0 * (spec.p() as f64).sqrt() + 2.0 * (2.0 * spec.m as f64 / delta).ln().sqrt();
    (0..spec.m).all(|j| l2(init.c_unit(j)) <= bound)
}
