//! Constraint-consistent task priors and streaming Gaussian observations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::NetworkSpec;

/// Gaussian prior on the stacked task vector, `w° = w_p + Z ζ` with
/// `ζ ~ N(latent_mean, latent_cov)`.
#[derive(Debug, Clone)]
pub struct TaskPrior {
    pub w_p: DVector<f64>,
    pub z: DMatrix<f64>,
    pub latent_mean: DVector<f64>,
    pub latent_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Task covariance `Z latent_cov Zᵀ`.
    pub cov: DMatrix<f64>,
    latent_sqrt: DMatrix<f64>,
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl TaskPrior {
    pub fn null_dim(&self) -> usize {
        self.z.ncols()
    }

    /// Diagonal block `W_kk`.
    pub fn w_kk(&self, k: usize) -> DMatrix<f64> {
        let (o, m) = (self.offsets[k], self.dims[k]);
        self.cov.view((o, o), (m, m)).into_owned()
    }

    pub fn mean_k(&self, k: usize) -> DVector<f64> {
        self.mean.rows(self.offsets[k], self.dims[k]).into_owned()
    }

    /// `E[w° w°ᵀ]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }

    /// Prior after scaling the latent covariance by `factor` (mean unchanged).
    pub fn scaled(&self, factor: f64) -> TaskPrior {
        let mut out = self.clone();
        out.latent_cov *= factor;
        out.cov *= factor;
        out.latent_sqrt *= factor.sqrt();
        out
    }

    /// Latent standard-normal draw mapped to a task vector.
    pub fn task_from_standard(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.z * (&self.latent_sqrt * xi)
    }

    /// Default latent covariance `(M / r)·I_r`, which keeps `tr 𝒲 = M`.
    pub fn default_latent_cov(total_dim: usize, null_dim: usize) -> DMatrix<f64> {
        if null_dim == 0 {
            return DMatrix::zeros(0, 0);
        }
        DMatrix::identity(null_dim, null_dim) * (total_dim as f64 / null_dim as f64)
    }
}

/// Orthonormal null-space basis of the global constraint matrix (deterministic).
pub fn null_basis(net: &NetworkSpec) -> DMatrix<f64> {
    linalg::null_space(&net.global_d)
}

pub fn make_task_prior(
    net: &NetworkSpec,
    latent_cov: &DMatrix<f64>,
    latent_mean: &DVector<f64>,
) -> Result<TaskPrior> {
    let z = null_basis(net);
    let r = z.ncols();
    if latent_cov.shape() != (r, r) || latent_mean.len() != r {
        return Err(Error::Dimension(format!(
            "latent model must have dimension {r} (null space of the constraints)"
        )));
    }
    let sym_err = (latent_cov - latent_cov.transpose()).amax();
    if sym_err > 1e-12 * (1.0 + latent_cov.amax()) {
        return Err(Error::Config("latent covariance is not symmetric".into()));
    }
    let eig_min = if r > 0 {
        latent_cov.clone().symmetric_eigenvalues().min()
    } else {
        0.0
    };
    if eig_min < -1e-12 * (1.0 + latent_cov.amax()) {
        return Err(Error::Config("latent covariance is not positive semidefinite".into()));
    }
    let w_p = linalg::min_norm_solve(&net.global_d, &(-&net.global_b));
    let residual = (&net.global_d * &w_p + &net.global_b).amax();
    if residual > 1e-9 * (1.0 + net.global_b.amax()) {
        return Err(Error::Infeasible(format!(
            "no particular solution (residual {residual:.3e})"
        )));
    }
    let mean = &w_p + &z * latent_mean;
    let cov = linalg::symmetrize(&(&z * latent_cov * z.transpose()));
    Ok(TaskPrior {
        w_p,
        latent_sqrt: linalg::psd_sqrt(latent_cov),
        z,
        latent_mean: latent_mean.clone(),
        latent_cov: latent_cov.clone(),
        mean,
        cov,
        offsets: net.offsets.clone(),
        dims: net.dims.clone(),
    })
}

pub fn sample_tasks<R: Rng + ?Sized>(prior: &TaskPrior, rng: &mut R) -> DVector<f64> {
    let xi = DVector::from_fn(prior.null_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    prior.task_from_standard(&xi)
}

/// Per-agent regressor statistics and step sizes.
#[derive(Debug, Clone)]
pub struct AgentSignalModel {
    pub r_u: Vec<DMatrix<f64>>,
    pub sigma_v2: Vec<f64>,
    pub mu: Vec<f64>,
    chol: Vec<DMatrix<f64>>,
}

impl AgentSignalModel {
    pub fn new(r_u: Vec<DMatrix<f64>>, sigma_v2: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let n = r_u.len();
        if sigma_v2.len() != n || mu.len() != n {
            return Err(Error::Dimension("signal model vectors differ in length".into()));
        }
        let mut chol = Vec::with_capacity(n);
        for (k, r) in r_u.iter().enumerate() {
            if (r - r.transpose()).amax() > 1e-12 * (1.0 + r.amax()) {
                return Err(Error::Config(format!("R_u of agent {k} is not symmetric")));
            }
            let c = r.clone().cholesky().ok_or_else(|| {
                Error::Config(format!("R_u of agent {k} is not positive definite"))
            })?;
            chol.push(c.l());
        }
        if let Some(k) = mu.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config(format!("step size of agent {k} must be positive")));
        }
        if let Some(k) = sigma_v2.iter().position(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("noise variance of agent {k} must be >= 0")));
        }
        Ok(AgentSignalModel { r_u, sigma_v2, mu, chol })
    }

    pub fn n_agents(&self) -> usize {
        self.r_u.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.r_u.iter().map(|r| r.nrows()).collect()
    }

    /// Lower Cholesky factor of `R_u,k`.
    pub fn chol(&self, k: usize) -> &DMatrix<f64> {
        &self.chol[k]
    }

    fn block_diag(&self, f: impl Fn(usize) -> DMatrix<f64>) -> DMatrix<f64> {
        let dims = self.dims();
        let m: usize = dims.iter().sum();
        let mut out = DMatrix::zeros(m, m);
        let mut o = 0;
        for (k, &d) in dims.iter().enumerate() {
            out.view_mut((o, o), (d, d)).copy_from(&f(k));
            o += d;
        }
        out
    }

    /// `ℳ = diag(μ_k I)`.
    pub fn calm(&self) -> DMatrix<f64> {
        self.block_diag(|k| {
            let d = self.r_u[k].nrows();
            DMatrix::identity(d, d) * self.mu[k]
        })
    }

    /// `ℛ_u = diag(R_u,k)`.
    pub fn calr(&self) -> DMatrix<f64> {
        self.block_diag(|k| self.r_u[k].clone())
    }

    /// `𝒢 = diag(σ²_v,k R_u,k)`.
    pub fn calg(&self) -> DMatrix<f64> {
        self.block_diag(|k| &self.r_u[k] * self.sigma_v2[k])
    }

    /// Same model with every step size replaced.
    pub fn with_step_sizes(&self, mu: Vec<f64>) -> Result<Self> {
        AgentSignalModel::new(self.r_u.clone(), self.sigma_v2.clone(), mu)
    }
}

/// Random SPD covariance `Q Λ Qᵀ` with eigenvalues uniform in `range`.
pub fn random_covariance<R: Rng + ?Sized>(dim: usize, range: (f64, f64), rng: &mut R) -> DMatrix<f64> {
    let q = linalg::random_orthogonal(dim, rng);
    let lam = DVector::from_fn(dim, |_, _| {
        if range.1 > range.0 {
            rng.random_range(range.0..=range.1)
        } else {
            range.0
        }
    });
    linalg::symmetrize(&(&q * DMatrix::from_diagonal(&lam) * q.transpose()))
}

/// Set `σ²_v,k = tr(R_u,k (W_kk + m_k m_kᵀ)) / 10^(SNR_k/10)`.
pub fn calibrate_snr(model: &mut AgentSignalModel, prior: &TaskPrior, snr_db: &[f64]) -> Result<()> {
    if snr_db.len() != model.n_agents() {
        return Err(Error::Dimension("one SNR target per agent required".into()));
    }
    if let Some(k) = snr_db.iter().position(|s| !s.is_finite()) {
        return Err(Error::Config(format!("SNR target of agent {k} is not finite")));
    }
    for (k, &snr) in snr_db.iter().enumerate() {
        let m = prior.mean_k(k);
        let sig = linalg::trace_product(&model.r_u[k], &(prior.w_kk(k) + &m * m.transpose()));
        model.sigma_v2[k] = sig / 10f64.powf(snr / 10.0);
    }
    Ok(())
}

/// One observation of one agent.
#[derive(Debug, Clone)]
pub struct StreamSample {
    pub u: DVector<f64>,
    pub v: f64,
    pub d: f64,
}

pub fn next_sample<R: Rng + ?Sized>(
    model: &AgentSignalModel,
    w_k: &DVector<f64>,
    k: usize,
    rng: &mut R,
) -> StreamSample {
    let m = w_k.len();
    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = model.chol(k) * z;
    let v = model.sigma_v2[k].sqrt() * rng.sample::<f64, _>(StandardNormal);
    let d = u.dot(w_k) + v;
    StreamSample { u, v, d }
}
