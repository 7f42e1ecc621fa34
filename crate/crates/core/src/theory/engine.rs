use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{gamma_matrix, GlobalModel};
use crate::datamodel::TaskPrior;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::NetworkSpec;
use crate::privacy;
use crate::projection::{self, ProjectionSet};

/// Ridge added to singular observation covariances in the analytic privacy error.
pub const THEORY_RIDGE: f64 = 1e-10;

/// How the privacy-noise power of each iteration is chosen.
#[derive(Debug, Clone)]
pub enum PowerRule {
    /// Explicit `sigma2[i][k]`.
    Explicit(Vec<Vec<f64>>),
    /// Sufficient power from the exact cross-covariance `U_kk(i)`.
    ClosedForm { delta: Vec<f64> },
    /// Constant limit power `tr(W²)/(tr W − δ)` of the current prior.
    SteadyState { delta: Vec<f64> },
    /// No privacy noise.
    Zero,
    /// No cooperation: `P = I`, `f = 0`, no noise.
    NoCoop,
}

/// Covariance scale-up of the task prior at a given iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrackingChange {
    pub at: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    2.0
}

#[derive(Debug, Clone)]
pub struct TheoryOptions {
    pub iterations: usize,
    pub tracking: Option<TrackingChange>,
    pub record_moments: bool,
    pub record_sets: bool,
    pub dim_cap: usize,
}

impl TheoryOptions {
    pub fn new(iterations: usize) -> Self {
        TheoryOptions {
            iterations,
            tracking: None,
            record_moments: false,
            record_sets: false,
            dim_cap: super::DEFAULT_DIM_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentSnapshot {
    pub mean_psi: DVector<f64>,
    /// `Ψ(i) = E[ψ ψᵀ]`.
    pub psi: DMatrix<f64>,
    /// `V(i) = 𝒲 − cov(w°, ψ(i))`.
    pub v: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct TheoryPoint {
    pub msd: f64,
    pub xi: f64,
    pub sigma2: Vec<f64>,
    /// `tr W_kk − tr(U_kk (X_kk + σ²_k I)⁻¹ U_kkᵀ)`.
    pub single_share_error: Vec<f64>,
    pub p_norm: f64,
    pub ridge: bool,
}

#[derive(Debug, Clone)]
pub struct TheoryTrajectory {
    pub points: Vec<TheoryPoint>,
    pub moments: Vec<MomentSnapshot>,
    pub sets: Vec<ProjectionSet>,
    pub final_set: ProjectionSet,
    pub final_gamma: DMatrix<f64>,
    pub ridge_used: bool,
}

impl TheoryTrajectory {
    pub fn schedule(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.sigma2.clone()).collect()
    }
}

/// Stage-dependent prior moments.
struct Stage {
    cov: DMatrix<f64>,
    second: DMatrix<f64>,
    w_kk: Vec<DMatrix<f64>>,
}

impl Stage {
    fn new(prior: &TaskPrior, model: &GlobalModel, scale: f64) -> Self {
        let cov = &prior.cov * scale;
        let second = &cov + &prior.mean * prior.mean.transpose();
        let w_kk = (0..model.n_agents()).map(|k| model.block(&cov, k, k)).collect();
        Stage { cov, second, w_kk }
    }
}

fn solve_psd(x: &DMatrix<f64>, rhs: &DMatrix<f64>, ridge: &mut bool) -> DMatrix<f64> {
    if let Some(ch) = x.clone().cholesky() {
        return ch.solve(rhs);
    }
    *ridge = true;
    let n = x.nrows();
    let xr = x + DMatrix::identity(n, n) * THEORY_RIDGE;
    match xr.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => xr.lu().solve(rhs).unwrap_or_else(|| DMatrix::zeros(n, rhs.ncols())),
    }
}

/// Joint second-order propagation of `(w°, ψ(i))`.
///
/// Tracks `Eψ(i)`, `Ψ(i)` and `K(i) = E[w° ψ(i)ᵀ]`, from which the network MSD,
/// the exact cross-covariances `U(i) = 𝒲 − V(i)` and the privacy error follow.
pub fn privacy_recursions(
    net: &NetworkSpec,
    model: &GlobalModel,
    prior: &TaskPrior,
    rule: &PowerRule,
    opts: &TheoryOptions,
) -> Result<TheoryTrajectory> {
    model.check_cap(opts.dim_cap)?;
    let n = model.n_agents();
    let m = model.total;
    let t_len = opts.iterations;
    if let PowerRule::Explicit(s) = rule {
        if s.len() < t_len || s.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("explicit schedule too short or malformed".into()));
        }
    }
    let delta = match rule {
        PowerRule::ClosedForm { delta } | PowerRule::SteadyState { delta } => {
            if delta.len() != n {
                return Err(Error::Dimension("one threshold per agent required".into()));
            }
            Some(delta.clone())
        }
        _ => None,
    };
    let mean = &prior.mean;
    let initial_scale = match opts.tracking {
        Some(tc) if tc.at == 0 => tc.scale,
        _ => 1.0,
    };
    let mut stage = Stage::new(prior, model, initial_scale);
    let ident = DMatrix::<f64>::identity(m, m);
    let i_minus_mr = &ident - &model.mr;
    let rm = model.mr.transpose();

    // ψ(0) = ℳ r_du(0) from w(−1) = 0.
    let mut e_psi = &model.mr * mean;
    let mut psi = model.m_ersr_m(&stage.second) + &model.mgm;
    let mut k_mat = &stage.second * &rm;

    let identity = projection::identity_set(net);
    let mut points = Vec::with_capacity(t_len);
    let mut moments = Vec::new();
    let mut sets = Vec::new();
    let mut ridge_any = false;
    let mut last_set = identity.clone();
    let mut last_gamma = DMatrix::zeros(m, m);

    for i in 0..t_len {
        let cov_wpsi = &k_mat - mean * e_psi.transpose();
        let x = linalg::symmetrize(&(&psi - &e_psi * e_psi.transpose()));

        let sigma2: Vec<f64> = match rule {
            PowerRule::Explicit(s) => s[i].clone(),
            PowerRule::Zero | PowerRule::NoCoop => vec![0.0; n],
            PowerRule::SteadyState { .. } => {
                let d = delta.as_ref().expect("thresholds");
                (0..n)
                    .map(|k| privacy::steady_state_power(&stage.w_kk[k], d[k]))
                    .collect::<Result<_>>()?
            }
            PowerRule::ClosedForm { .. } => {
                let d = delta.as_ref().expect("thresholds");
                (0..n)
                    .map(|k| {
                        let u = model.block(&cov_wpsi, k, k);
                        privacy::sufficient_power(&u, &stage.w_kk[k], d[k]).map_err(|e| match e {
                            Error::InfeasibleThreshold { delta, trace, .. } => {
                                Error::InfeasibleThreshold { agent: k, delta, trace }
                            }
                            other => other,
                        })
                    })
                    .collect::<Result<_>>()?
            }
        };

        let set = match rule {
            PowerRule::NoCoop => identity.clone(),
            _ => projection::build_projection_set(net, &sigma2)?,
        };
        let gamma = gamma_matrix(&set, model, &sigma2);
        let p_norm = linalg::spectral_norm(&set.p);

        // Privacy error at iteration i.
        let mut ridge = false;
        let mut single = Vec::with_capacity(n);
        let mut xi_sum = 0.0;
        let mut counted = 0usize;
        for k in 0..n {
            let wkk = &stage.w_kk[k];
            let ckk = model.block(&cov_wpsi, k, k);
            let xkk = model.block(&x, k, k);
            let mk = model.dims[k];
            let xp = &xkk + DMatrix::identity(mk, mk) * sigma2[k];
            let sol = solve_psd(&xp, &ckk.transpose(), &mut ridge);
            single.push(wkk.trace() - linalg::trace_product(&ckk, &sol));

            let neighbors: Vec<usize> = net.neighborhoods[k].iter().copied().filter(|&l| l != k).collect();
            if neighbors.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &l in &neighbors {
                let ckl = model.block(&cov_wpsi, k, l);
                let xll = model.block(&x, l, l);
                let leak = if matches!(rule, PowerRule::NoCoop) {
                    let sol = solve_psd(&xll, &ckl.transpose(), &mut ridge);
                    linalg::trace_product(&ckl, &sol)
                } else {
                    let ml = model.dims[l];
                    let mut u = DMatrix::zeros(mk, mk + ml);
                    u.columns_mut(0, mk).copy_from(&ckk);
                    u.columns_mut(mk, ml).copy_from(&ckl);
                    let mut xb = DMatrix::zeros(mk + ml, mk + ml);
                    xb.view_mut((0, 0), (mk, mk)).copy_from(&xp);
                    xb.view_mut((0, mk), (mk, ml)).copy_from(&model.block(&x, k, l));
                    xb.view_mut((mk, 0), (ml, mk)).copy_from(&model.block(&x, l, k));
                    xb.view_mut((mk, mk), (ml, ml)).copy_from(&xll);
                    let sol = solve_psd(&xb, &u.transpose(), &mut ridge);
                    linalg::trace_product(&u, &sol)
                };
                acc += wkk.trace() - leak;
            }
            xi_sum += acc / neighbors.len() as f64;
            counted += 1;
        }
        let xi = if counted > 0 { xi_sum / n as f64 } else { f64::NAN };
        ridge_any |= ridge;

        if opts.record_moments {
            moments.push(MomentSnapshot {
                mean_psi: e_psi.clone(),
                psi: psi.clone(),
                v: &stage.cov - &cov_wpsi,
                gamma: gamma.clone(),
            });
        }

        // a = w(i) = P ψ'(i) − f.
        let p = &set.p;
        let f = &set.f;
        let p_epsi = p * &e_psi;
        let e_a = &p_epsi - f;
        let e_aa = linalg::symmetrize(
            &(p * &psi * p.transpose() - &p_epsi * f.transpose() - f * p_epsi.transpose()
                + f * f.transpose()
                + &gamma),
        );
        let mut e_wa = &k_mat * p.transpose() - mean * f.transpose();
        let e_ee = linalg::symmetrize(&(&stage.second - &e_wa - e_wa.transpose() + &e_aa));
        points.push(TheoryPoint {
            msd: e_ee.trace() / n as f64,
            xi,
            sigma2: sigma2.clone(),
            single_share_error: single,
            p_norm,
            ridge,
        });
        if opts.record_sets {
            sets.push(set.clone());
        }

        // Prior change takes effect from iteration `at` onward.
        if let Some(tc) = opts.tracking {
            if tc.at > 0 && i + 1 == tc.at {
                let c = tc.scale.sqrt();
                let mean_a = mean * e_a.transpose();
                e_wa = &mean_a + (&e_wa - &mean_a) * c;
                stage = Stage::new(prior, model, tc.scale);
            }
        }

        // ψ(i+1) = a + ℳℛ(w° − a) + ℳg.
        let e_ee = linalg::symmetrize(&(&stage.second - &e_wa - e_wa.transpose() + &e_aa));
        let e_ae = e_wa.transpose() - &e_aa;
        let next_psi = &e_aa + &e_ae * &rm + &model.mr * e_ae.transpose() + model.m_ersr_m(&e_ee) + &model.mgm;
        k_mat = &e_wa + (&stage.second - &e_wa) * &rm;
        e_psi = &i_minus_mr * &e_a + &model.mr * mean;
        psi = linalg::symmetrize(&next_psi);

        last_set = set;
        last_gamma = gamma;
    }

    Ok(TheoryTrajectory {
        points,
        moments,
        sets,
        final_set: last_set,
        final_gamma: last_gamma,
        ridge_used: ridge_any,
    })
}
