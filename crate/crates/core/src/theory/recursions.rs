use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::GlobalModel;
use crate::datamodel::TaskPrior;
use crate::error::{Error, Result};
use crate::linalg;
use crate::projection::ProjectionSet;

/// `Γ = P⁻ R_n P⁻ᵀ` with `P⁻` the global projector with diagonal blocks zeroed.
pub fn gamma_matrix(set: &ProjectionSet, model: &GlobalModel, sigma2: &[f64]) -> DMatrix<f64> {
    let masked = set.masked();
    let mut scaled = masked.clone();
    for k in 0..model.n_agents() {
        let mut cols = scaled.columns_mut(model.offsets[k], model.dims[k]);
        cols *= sigma2[k];
    }
    linalg::symmetrize(&(scaled * masked.transpose()))
}

/// `A = P (I − ℳℛ_u)`.
fn mean_matrix(set: &ProjectionSet, model: &GlobalModel) -> DMatrix<f64> {
    &set.p - &set.p * &model.mr
}

pub fn mean_spectral_radius(set: &ProjectionSet, model: &GlobalModel) -> f64 {
    linalg::spectral_radius(&mean_matrix(set, model))
}

#[derive(Debug, Clone)]
pub struct MeanTrajectory {
    /// `E w̃(i)` for `i = 0..T`.
    pub mean_error: Vec<DVector<f64>>,
    pub norms: Vec<f64>,
    pub spectral_radius: Vec<f64>,
    /// Set when some `ρ(A(i)) > 1`.
    pub divergence_flag: bool,
}

/// Propagate `E w̃(i) = A(i) E w̃(i−1)` from `E w̃(−1) = E w°`.
pub fn mean_recursion(model: &GlobalModel, sets: &[ProjectionSet], prior_mean: &DVector<f64>) -> MeanTrajectory {
    let mut e = prior_mean.clone();
    let mut mean_error = Vec::with_capacity(sets.len());
    let mut norms = Vec::with_capacity(sets.len());
    let mut rho = Vec::with_capacity(sets.len());
    let mut flag = false;
    for set in sets {
        let a = mean_matrix(set, model);
        let r = linalg::spectral_radius(&a);
        flag |= r > 1.0;
        rho.push(r);
        e = a * e;
        norms.push(e.norm());
        mean_error.push(e.clone());
    }
    MeanTrajectory {
        mean_error,
        norms,
        spectral_radius: rho,
        divergence_flag: flag,
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct StabilityBounds {
    pub mu_lo: f64,
    pub mu_hi: f64,
    /// `(1 − 1/‖P‖)/(1 + 1/‖P‖) < λ_min/λ_max`.
    pub hypothesis_holds: bool,
}

impl StabilityBounds {
    pub fn contains(&self, mu: f64) -> bool {
        mu > self.mu_lo && mu < self.mu_hi
    }
}

pub fn stability_bounds(r_u: &DMatrix<f64>, p_norm: f64) -> StabilityBounds {
    let eig = linalg::symmetrize(r_u).symmetric_eigenvalues();
    let (lmin, lmax) = (eig.min(), eig.max());
    let inv = 1.0 / p_norm;
    StabilityBounds {
        mu_lo: (1.0 - inv) / lmin,
        mu_hi: (1.0 + inv) / lmax,
        hypothesis_holds: (1.0 - inv) / (1.0 + inv) < lmin / lmax,
    }
}

/// `V(0) = 𝒲(I − ℳℛ_u)`, `V(i+1) = V(i) B(i)ᵀ` with `B(i) = (I − ℳℛ_u) P(i)`.
pub fn v_recursion(model: &GlobalModel, prior: &TaskPrior, sets: &[ProjectionSet]) -> Vec<DMatrix<f64>> {
    let mut v = &prior.cov - &prior.cov * &model.mr;
    let mut out = Vec::with_capacity(sets.len());
    for set in sets {
        out.push(v.clone());
        let b = &set.p - &model.mr * &set.p;
        v = &v * b.transpose();
    }
    out
}

/// Network MSD from the second moment of `w̃(i)`, starting at `E[w° w°ᵀ]`.
pub fn msd_transient(
    model: &GlobalModel,
    prior: &TaskPrior,
    sets: &[ProjectionSet],
    gammas: &[DMatrix<f64>],
    cap: usize,
) -> Result<Vec<f64>> {
    model.check_cap(cap)?;
    if sets.len() != gammas.len() {
        return Err(Error::Dimension("projection and Γ schedules differ in length".into()));
    }
    let n = model.n_agents() as f64;
    let mut s = prior.second_moment();
    let mut out = Vec::with_capacity(sets.len());
    for (set, gamma) in sets.iter().zip(gammas) {
        let inner = &s - &model.mr * &s - &s * model.mr.transpose() + model.m_ersr_m(&s) + &model.mgm;
        s = linalg::symmetrize(&(&set.p * inner * set.p.transpose() + gamma));
        out.push(s.trace() / n);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub msd_exact: f64,
    pub msd_approx: f64,
    pub rho_exact: f64,
    pub rho_approx: f64,
}

/// `Σ ↦ E[(I − ℛℳ)PᵀΣP(I − ℳℛ)]` for arbitrary `Σ`.
fn weighted_map(model: &GlobalModel, p: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let t = p.transpose() * sigma * p;
    &t - model.mr.transpose() * &t - &t * &model.mr + model.m_ersr_m(&t)
}

fn build_f(model: &GlobalModel, p: &DMatrix<f64>) -> DMatrix<f64> {
    let m = model.total;
    let mut f = DMatrix::zeros(m * m, m * m);
    let mut basis = DMatrix::zeros(m, m);
    for j in 0..m * m {
        let (r, c) = (j % m, j / m);
        basis[(r, c)] = 1.0;
        let img = weighted_map(model, p, &basis);
        f.column_mut(j).copy_from_slice(img.as_slice());
        basis[(r, c)] = 0.0;
    }
    f
}

fn radius_of(f: &DMatrix<f64>, apply: impl Fn(&DMatrix<f64>) -> DMatrix<f64>, m: usize) -> f64 {
    if m <= 16 {
        return linalg::spectral_radius(f);
    }
    // The map preserves the PSD cone, so power iteration from I converges to
    // the spectral radius.
    let mut x = DMatrix::identity(m, m);
    let mut est = 0.0;
    for _ in 0..5000 {
        let y = apply(&x);
        let nrm = y.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let next = nrm / x.norm();
        x = y / nrm;
        if (next - est).abs() <= 1e-12 * next {
            return next;
        }
        est = next;
    }
    est
}

fn solve_steady(f: &DMatrix<f64>, forcing: &DMatrix<f64>, n: f64, m: usize) -> Result<(f64, DMatrix<f64>)> {
    let lhs = DMatrix::identity(m * m, m * m) - f;
    let rhs = linalg::vec(&DMatrix::identity(m, m)) / n;
    let sigma = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularMatrix("I − F".into()))?;
    let msd = linalg::vec(forcing).dot(&sigma);
    Ok((msd, linalg::unvec(&sigma, m, m)))
}

/// Steady-state network MSD with the exact Gaussian `F` and the small-step
/// approximation `F ≈ Aᵀ ⊗ Aᵀ`.
pub fn steady_state_msd(
    model: &GlobalModel,
    set: &ProjectionSet,
    gamma: &DMatrix<f64>,
    cap: usize,
) -> Result<SteadyState> {
    model.check_cap(cap)?;
    let m = model.total;
    let n = model.n_agents() as f64;
    let p = &set.p;
    let forcing = p * &model.mgm * p.transpose() + gamma;

    let f = build_f(model, p);
    let rho_exact = radius_of(&f, |x| weighted_map(model, p, x), m);
    let (msd_exact, sig) = solve_steady(&f, &forcing, n, m)?;
    if rho_exact >= 1.0 || !is_positive_definite(&sig) {
        return Err(Error::Unstable { rho: rho_exact });
    }

    let a = p - p * &model.mr;
    let at = a.transpose();
    let fa = at.kronecker(&at);
    let rho_a = linalg::spectral_radius(&a);
    let rho_approx = rho_a * rho_a;
    if rho_approx >= 1.0 {
        return Err(Error::Unstable { rho: rho_approx });
    }
    let (msd_approx, _) = solve_steady(&fa, &forcing, n, m)?;

    Ok(SteadyState {
        msd_exact,
        msd_approx,
        rho_exact,
        rho_approx,
    })
}

fn is_positive_definite(x: &DMatrix<f64>) -> bool {
    linalg::symmetrize(x).cholesky().is_some()
}
