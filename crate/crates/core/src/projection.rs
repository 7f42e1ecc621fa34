//! Weighted oblique projection onto local constraint manifolds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::NetworkSpec;

/// Lower bound on the exponential factors of the weight rule.
pub const EXP_FLOOR: f64 = 1e-300;
/// Lower bound on a weight when forming `Ω = diag(1/ω)`.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Largest accepted condition number of `D Ω Dᵀ`.
pub const COND_LIMIT: f64 = 1e12;

/// Combination weights of one agent over its neighborhood (ascending agent id).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub agent: usize,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    /// Diagonal entries `1/ω_ℓ` of `Ω`, one per member.
    pub fn omega(&self) -> Vec<f64> {
        self.weights.iter().map(|w| 1.0 / w.max(WEIGHT_FLOOR)).collect()
    }
}

/// Weights `ω_ℓk ∝ e^{-σ²_ℓ}` for neighbors and `ω_kk ∝ 1`.
///
/// `noise_powers` is indexed by global agent id.
pub fn compute_weights(agent: usize, members: &[usize], noise_powers: &[f64]) -> WeightVector {
    let raw: Vec<f64> = members
        .iter()
        .map(|&l| {
            if l == agent {
                1.0
            } else {
                (-noise_powers[l]).exp().max(EXP_FLOOR)
            }
        })
        .collect();
    let denom: f64 = raw.iter().sum();
    WeightVector {
        agent,
        members: members.to_vec(),
        weights: raw.iter().map(|r| r / denom).collect(),
    }
}

/// Compute `P = I − ΩDᵀ(DΩDᵀ)⁻¹D` and `f = ΩDᵀ(DΩDᵀ)⁻¹b`.
///
/// `block_dims` gives the size of each member block and `omega` the matching
/// diagonal entries of `Ω`. The system is row-equilibrated and factored by QR
/// of `Ω^{1/2}Dᵀ`; `agent` only labels errors.
pub fn build_projector(
    d: &DMatrix<f64>,
    b: &DVector<f64>,
    omega: &[f64],
    block_dims: &[usize],
    agent: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = d.ncols();
    if block_dims.iter().sum::<usize>() != n || omega.len() != block_dims.len() {
        return Err(Error::Dimension(format!(
            "agent {agent}: weights do not match the constraint columns"
        )));
    }
    if d.nrows() != b.len() {
        return Err(Error::Dimension(format!("agent {agent}: D and b row counts differ")));
    }
    let j = d.nrows();
    if j == 0 {
        return Ok((DMatrix::identity(n, n), DVector::zeros(n)));
    }
    let mut sqrt_om = DVector::zeros(n);
    let mut pos = 0;
    for (&m, &o) in block_dims.iter().zip(omega) {
        sqrt_om.rows_mut(pos, m).fill(o.sqrt());
        pos += m;
    }

    // Ã = Ω^{1/2} (ΛD)ᵀ with Λ equilibrating the rows of D Ω^{1/2}.
    let mut a = DMatrix::zeros(n, j);
    let mut bt = DVector::zeros(j);
    for r in 0..j {
        let mut nrm = 0.0;
        for c in 0..n {
            let v = d[(r, c)] * sqrt_om[c];
            a[(c, r)] = v;
            nrm += v * v;
        }
        let nrm = nrm.sqrt();
        if nrm == 0.0 {
            return Err(Error::Singular { agent, cond: f64::INFINITY });
        }
        a.column_mut(r).unscale_mut(nrm);
        bt[r] = b[r] / nrm;
    }
    let qr = a.qr();
    let q = qr.q();
    let rmat = qr.r();
    let cond_r = linalg::condition_number(&rmat);
    let cond = cond_r * cond_r;
    if !(cond <= COND_LIMIT) {
        return Err(Error::Singular { agent, cond });
    }
    // f = Ω^{1/2} Q R^{-T} b̃
    let y = rmat
        .transpose()
        .solve_lower_triangular(&bt)
        .ok_or(Error::Singular { agent, cond })?;
    let mut f = &q * y;
    f.component_mul_assign(&sqrt_om);
    // P = I − Ω^{1/2} Q Qᵀ Ω^{-1/2}
    let qqt = &q * q.transpose();
    let mut p = DMatrix::identity(n, n);
    for c in 0..n {
        for r in 0..n {
            p[(r, c)] -= sqrt_om[r] * qqt[(r, c)] / sqrt_om[c];
        }
    }
    Ok((p, f))
}

/// Projector of one neighborhood.
#[derive(Debug, Clone)]
pub struct LocalProjector {
    pub agent: usize,
    pub weights: WeightVector,
    /// Full `P_{N_k}` over the stacked neighborhood.
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Block row of the agent itself, `M_k × M_{N_k}`.
    pub row: DMatrix<f64>,
    pub f_self: DVector<f64>,
}

/// Projectors of all agents at one iteration plus the global block matrices.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub local: Vec<LocalProjector>,
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl ProjectionSet {
    /// `[P]_{k⁻}`: block row `k` of the global matrix with the diagonal block zeroed.
    pub fn masked_row(&self, k: usize) -> DMatrix<f64> {
        let (o, m) = (self.offsets[k], self.dims[k]);
        let mut row = self.p.rows(o, m).into_owned();
        row.view_mut((0, o), (m, m)).fill(0.0);
        row
    }

    /// Global matrix with all diagonal blocks zeroed.
    pub fn masked(&self) -> DMatrix<f64> {
        let mut p = self.p.clone();
        for (&o, &m) in self.offsets.iter().zip(&self.dims) {
            p.view_mut((o, o), (m, m)).fill(0.0);
        }
        p
    }

    pub fn total_dim(&self) -> usize {
        self.p.nrows()
    }
}

/// Projector of agent `k` under the given per-agent noise powers.
pub fn local_projector(net: &NetworkSpec, k: usize, noise_powers: &[f64]) -> Result<LocalProjector> {
    let members = &net.neighborhoods[k];
    let weights = compute_weights(k, members, noise_powers);
    local_projector_with_weights(net, k, weights)
}

pub fn local_projector_with_weights(
    net: &NetworkSpec,
    k: usize,
    weights: WeightVector,
) -> Result<LocalProjector> {
    let lc = &net.local[k];
    let block_dims: Vec<usize> = net.neighborhoods[k].iter().map(|&l| net.dims[l]).collect();
    let (p, f) = build_projector(&lc.d, &lc.b, &weights.omega(), &block_dims, k)?;
    let off = lc.col_offsets[lc.self_pos];
    let mk = net.dims[k];
    Ok(LocalProjector {
        agent: k,
        row: p.rows(off, mk).into_owned(),
        f_self: f.rows(off, mk).into_owned(),
        weights,
        p,
        f,
    })
}

pub fn assemble_global(local: Vec<LocalProjector>, net: &NetworkSpec) -> ProjectionSet {
    let m = net.total_dim;
    let mut p = DMatrix::zeros(m, m);
    let mut f = DVector::zeros(m);
    for lp in &local {
        let k = lp.agent;
        let ok = net.offsets[k];
        let mk = net.dims[k];
        for (pos, &l) in net.neighborhoods[k].iter().enumerate() {
            let c = net.local[k].col_offsets[pos];
            p.view_mut((ok, net.offsets[l]), (mk, net.dims[l]))
                .copy_from(&lp.row.columns(c, net.dims[l]));
        }
        f.rows_mut(ok, mk).copy_from(&lp.f_self);
    }
    ProjectionSet {
        local,
        p,
        f,
        offsets: net.offsets.clone(),
        dims: net.dims.clone(),
    }
}

/// Build every local projector and assemble the global set.
pub fn build_projection_set(net: &NetworkSpec, noise_powers: &[f64]) -> Result<ProjectionSet> {
    if noise_powers.len() != net.n_agents() {
        return Err(Error::Dimension("one noise power per agent required".into()));
    }
    let local = (0..net.n_agents())
        .map(|k| local_projector(net, k, noise_powers))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_global(local, net))
}

/// The non-cooperative set `P = I`, `f = 0`.
pub fn identity_set(net: &NetworkSpec) -> ProjectionSet {
    let local = (0..net.n_agents())
        .map(|k| {
            let mk = net.dims[k];
            LocalProjector {
                agent: k,
                weights: WeightVector {
                    agent: k,
                    members: vec![k],
                    weights: vec![1.0],
                },
                p: DMatrix::identity(mk, mk),
                f: DVector::zeros(mk),
                row: DMatrix::identity(mk, mk),
                f_self: DVector::zeros(mk),
            }
        })
        .collect();
    let m = net.total_dim;
    ProjectionSet {
        local,
        p: DMatrix::identity(m, m),
        f: DVector::zeros(m),
        offsets: net.offsets.clone(),
        dims: net.dims.clone(),
    }
}

/// Block `k` of `P_{N_k} ψ' − f_{N_k}` for the stacked neighborhood shares.
pub fn project(k: usize, set: &ProjectionSet, shares: &DVector<f64>) -> DVector<f64> {
    let lp = &set.local[k];
    &lp.row * shares - &lp.f_self
}

/// Full local projection `P_{N_k} ψ' − f_{N_k}`.
pub fn project_local(k: usize, set: &ProjectionSet, shares: &DVector<f64>) -> DVector<f64> {
    let lp = &set.local[k];
    &lp.p * shares - &lp.f
}

/// Spectral norm of the global projection matrix.
pub fn operator_norm(set: &ProjectionSet) -> f64 {
    linalg::spectral_norm(&set.p)
}
