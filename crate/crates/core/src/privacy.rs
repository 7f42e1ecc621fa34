//! Privacy-noise power design and the LLMSE privacy error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::datamodel::TaskPrior;
use crate::error::{Error, Result};
use crate::linalg;

/// Default forgetting factor of the adaptive estimator.
pub const DEFAULT_ALPHA: f64 = 0.95;
/// Denominators `γ − δ` below this are treated as non-positive.
pub const GUARD_EPS: f64 = 1e-9;

/// Per-iteration noise powers and privacy thresholds.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    /// `sigma2[i][k]`.
    pub sigma2: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl NoiseSchedule {
    pub fn constant(values: Vec<f64>, delta: Vec<f64>, iterations: usize) -> Self {
        NoiseSchedule {
            sigma2: vec![values; iterations],
            delta,
        }
    }

    pub fn iterations(&self) -> usize {
        self.sigma2.len()
    }
}

/// `δ_k = ρ tr(W_kk)` for every agent.
pub fn thresholds(prior: &TaskPrior, n_agents: usize, rho: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok((0..n_agents).map(|k| rho * prior.w_kk(k).trace()).collect())
}

fn check_threshold(w: &DMatrix<f64>, delta: f64, agent: usize) -> Result<f64> {
    let tr = w.trace();
    if !(delta < tr) || delta < 0.0 {
        return Err(Error::InfeasibleThreshold { agent, delta, trace: tr });
    }
    Ok(tr - delta)
}

/// Sufficient noise power `tr(UᵀU) / (tr W − δ)`.
pub fn sufficient_power(u: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> Result<f64> {
    let gap = check_threshold(w, delta, 0)?;
    Ok(u.norm_squared() / gap)
}

/// Limit power `tr(W²) / (tr W − δ)`.
pub fn steady_state_power(w: &DMatrix<f64>, delta: f64) -> Result<f64> {
    let gap = check_threshold(w, delta, 0)?;
    Ok(w.norm_squared() / gap)
}

/// `tr(W) − tr(U X'⁻¹ Uᵀ)`.
pub fn llmse_mse(u: &DMatrix<f64>, x_prime: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    let sol = linalg::solve(x_prime, &u.transpose())
        .ok_or_else(|| Error::SingularMatrix("observation covariance X'".into()))?;
    Ok(w.trace() - linalg::trace_product(u, &sol))
}

/// True iff `tr(U (X + σ²I)⁻¹ Uᵀ) ≤ tr(W) − δ`.
pub fn verify_constraint(sigma2: f64, u: &DMatrix<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> bool {
    let n = x.nrows();
    let xp = x + DMatrix::identity(n, n) * sigma2;
    match linalg::solve(&xp, &u.transpose()) {
        Some(sol) => linalg::trace_product(u, &sol) <= w.trace() - delta,
        None => false,
    }
}

/// Distributed estimator of the limit power from local intermediate estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveNoiseState {
    pub beta: f64,
    pub gamma: f64,
    pub sigma2: f64,
    pub alpha: f64,
}

impl AdaptiveNoiseState {
    pub fn new(delta: f64, alpha: f64) -> Self {
        AdaptiveNoiseState {
            beta: 0.0,
            gamma: delta,
            sigma2: 0.0,
            alpha,
        }
    }

    pub fn update(&mut self, psi: &DVector<f64>, mean: &DVector<f64>, delta: f64) {
        let c = psi - mean;
        let tr_r = c.norm_squared();
        let tr_r2 = tr_r * tr_r;
        let a = self.alpha;
        self.beta = a * self.beta + (1.0 - a) * tr_r2;
        self.gamma = a * self.gamma + (1.0 - a) * tr_r;
        let den = self.gamma - delta;
        if den > GUARD_EPS {
            let ratio = self.beta / den;
            if ratio > 0.0 {
                self.sigma2 = a * self.sigma2 + (1.0 - a) * ratio;
            }
        }
    }
}

pub fn adaptive_update(
    state: &AdaptiveNoiseState,
    psi: &DVector<f64>,
    mean: &DVector<f64>,
    delta: f64,
) -> AdaptiveNoiseState {
    let mut next = state.clone();
    next.update(psi, mean, delta);
    next
}

pub fn sample_noise<R: Rng + ?Sized>(sigma2: f64, dim: usize, rng: &mut R) -> DVector<f64> {
    let s = sigma2.max(0.0).sqrt();
    DVector::from_fn(dim, |_, _| s * rng.sample::<f64, _>(StandardNormal))
}

/// Smallest `σ²` satisfying the privacy inequality, found by bisection.
///
/// Returns `None` when the constraint cannot be met for any finite power.
pub fn minimal_power_bisection(
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    delta: f64,
    rel_tol: f64,
) -> Option<f64> {
    if verify_constraint(0.0, u, x, w, delta) {
        return Some(0.0);
    }
    let mut hi = 1.0;
    let mut n = 0;
    while !verify_constraint(hi, u, x, w, delta) {
        hi *= 2.0;
        n += 1;
        if n > 2000 {
            return None;
        }
    }
    let mut lo = 0.0;
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if verify_constraint(mid, u, x, w, delta) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
