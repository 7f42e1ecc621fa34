//! Network topology induced by linear equality constraints among agent tasks.
//!
//! Agent ids are zero-based. Inside every neighborhood the columns of the local
//! constraint matrix follow ascending agent id.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Coefficient block of one participant inside a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientBlock {
    /// `d · I` with the participant's dimension.
    Scalar(f64),
    /// General `j × M_k` block.
    Matrix(DMatrix<f64>),
}

/// Constraint offset: a full vector or a scalar times the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Offset {
    Scalar(f64),
    Vector(DVector<f64>),
}

/// One linear equality constraint `Σ_{k∈I_q} D_qk w_k + b_q = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub id: usize,
    pub participants: Vec<usize>,
    pub blocks: Vec<CoefficientBlock>,
    pub offset: Offset,
}

impl ConstraintSpec {
    pub fn scalar(id: usize, participants: Vec<usize>, coefficients: Vec<f64>, offset: f64) -> Self {
        ConstraintSpec {
            id,
            participants,
            blocks: coefficients.into_iter().map(CoefficientBlock::Scalar).collect(),
            offset: Offset::Scalar(offset),
        }
    }

    /// Number of scalar equations contributed by this constraint.
    fn rows(&self, dims: &[usize]) -> Result<usize> {
        let mut rows: Option<usize> = None;
        let mut set = |r: usize, what: &str| -> Result<()> {
            match rows {
                Some(prev) if prev != r => Err(Error::Dimension(format!(
                    "constraint {}: {what} implies {r} rows but {prev} expected",
                    self.id
                ))),
                _ => {
                    rows = Some(r);
                    Ok(())
                }
            }
        };
        for (blk, &k) in self.blocks.iter().zip(&self.participants) {
            match blk {
                CoefficientBlock::Matrix(m) => {
                    if m.ncols() != dims[k] {
                        return Err(Error::Dimension(format!(
                            "constraint {}: block for agent {k} has {} columns, agent dimension is {}",
                            self.id,
                            m.ncols(),
                            dims[k]
                        )));
                    }
                    set(m.nrows(), "matrix block")?;
                }
                CoefficientBlock::Scalar(_) => set(dims[k], "scalar block")?,
            }
        }
        if let Offset::Vector(v) = &self.offset {
            set(v.len(), "offset vector")?;
        }
        rows.ok_or_else(|| Error::Config(format!("constraint {} has no participants", self.id)))
    }

    fn block_matrix(&self, idx: usize, rows: usize, dim: usize) -> DMatrix<f64> {
        match &self.blocks[idx] {
            CoefficientBlock::Scalar(d) => DMatrix::identity(rows, dim) * *d,
            CoefficientBlock::Matrix(m) => m.clone(),
        }
    }

    fn offset_vector(&self, rows: usize) -> DVector<f64> {
        match &self.offset {
            Offset::Scalar(b) => DVector::from_element(rows, *b),
            Offset::Vector(v) => v.clone(),
        }
    }
}

/// Constraints seen by one agent, restricted to the columns of its neighborhood.
#[derive(Debug, Clone)]
pub struct LocalConstraints {
    /// `j_k`-block-row matrix over the columns of `N_k`.
    pub d: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Indices (into `NetworkSpec::constraints`) of the stacked constraints.
    pub constraint_ids: Vec<usize>,
    /// Column offset of every neighborhood member inside `d`.
    pub col_offsets: Vec<usize>,
    /// Position of the agent itself inside its neighborhood.
    pub self_pos: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub dims: Vec<usize>,
    /// Start of each agent's block in the stacked global vector.
    pub offsets: Vec<usize>,
    pub total_dim: usize,
    pub neighborhoods: Vec<Vec<usize>>,
    pub local: Vec<LocalConstraints>,
    pub global_d: DMatrix<f64>,
    pub global_b: DVector<f64>,
    pub constraints: Vec<ConstraintSpec>,
}

impl NetworkSpec {
    pub fn n_agents(&self) -> usize {
        self.dims.len()
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.dims[k]
    }

    /// Stacked dimension of the neighborhood of `k`.
    pub fn local_dim(&self, k: usize) -> usize {
        self.neighborhoods[k].iter().map(|&l| self.dims[l]).sum()
    }

    /// Network with no constraints: every agent is its own neighborhood.
    pub fn unconstrained(dims: &[usize]) -> Result<Self> {
        assemble(Vec::new(), dims)
    }

    /// Stack `x_ℓ` for `ℓ ∈ N_k` from a global vector.
    pub fn gather(&self, k: usize, global: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.local_dim(k));
        let mut pos = 0;
        for &l in &self.neighborhoods[k] {
            let r = self.range(l);
            out.rows_mut(pos, r.len()).copy_from(&global.rows(r.start, r.len()));
            pos += r.len();
        }
        out
    }

    /// Directed neighbor pairs `(k, ℓ)` with `ℓ ∈ N_k \ {k}`, ordered by `k` then `ℓ`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, nb) in self.neighborhoods.iter().enumerate() {
            for &l in nb {
                if l != k {
                    out.push((k, l));
                }
            }
        }
        out
    }
}

/// Build the network structure from constraints and agent dimensions.
pub fn build_network(constraints: Vec<ConstraintSpec>, dims: &[usize]) -> Result<NetworkSpec> {
    if constraints.is_empty() {
        return Err(Error::Config("empty constraint set".into()));
    }
    assemble(constraints, dims)
}

fn assemble(constraints: Vec<ConstraintSpec>, dims: &[usize]) -> Result<NetworkSpec> {
    let n = dims.len();
    if n == 0 {
        return Err(Error::Config("network needs at least one agent".into()));
    }
    if let Some(k) = dims.iter().position(|&m| m == 0) {
        return Err(Error::Config(format!("agent {k} has dimension 0")));
    }
    let mut row_counts = Vec::with_capacity(constraints.len());
    for c in &constraints {
        if c.participants.is_empty() {
            return Err(Error::Config(format!("constraint {} has no participants", c.id)));
        }
        if c.participants.len() != c.blocks.len() {
            return Err(Error::Dimension(format!(
                "constraint {}: {} participants but {} coefficient blocks",
                c.id,
                c.participants.len(),
                c.blocks.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &k in &c.participants {
            if k >= n {
                return Err(Error::Config(format!(
                    "constraint {} references agent {k}, network has {n} agents",
                    c.id
                )));
            }
            if !seen.insert(k) {
                return Err(Error::Config(format!(
                    "constraint {} lists agent {k} more than once",
                    c.id
                )));
            }
        }
        row_counts.push(c.rows(dims)?);
    }

    let mut offsets = Vec::with_capacity(n);
    let mut acc = 0;
    for &m in dims {
        offsets.push(acc);
        acc += m;
    }
    let total_dim = acc;

    let mut nbr: Vec<BTreeSet<usize>> = (0..n).map(|k| BTreeSet::from([k])).collect();
    for c in &constraints {
        for &a in &c.participants {
            nbr[a].extend(c.participants.iter().copied());
        }
    }
    let neighborhoods: Vec<Vec<usize>> = nbr.into_iter().map(|s| s.into_iter().collect()).collect();

    let total_rows: usize = row_counts.iter().sum();
    let mut global_d = DMatrix::zeros(total_rows, total_dim);
    let mut global_b = DVector::zeros(total_rows);
    let mut row = 0;
    for (c, &rows) in constraints.iter().zip(&row_counts) {
        for (idx, &a) in c.participants.iter().enumerate() {
            global_d
                .view_mut((row, offsets[a]), (rows, dims[a]))
                .copy_from(&c.block_matrix(idx, rows, dims[a]));
        }
        global_b.rows_mut(row, rows).copy_from(&c.offset_vector(rows));
        row += rows;
    }

    let mut local = Vec::with_capacity(n);
    for k in 0..n {
        let members = &neighborhoods[k];
        let mut col_offsets = Vec::with_capacity(members.len());
        let mut cols = 0;
        for &l in members {
            col_offsets.push(cols);
            cols += dims[l];
        }
        let ids: Vec<usize> = constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.participants.contains(&k))
            .map(|(q, _)| q)
            .collect();
        let rows: usize = ids.iter().map(|&q| row_counts[q]).sum();
        let mut d = DMatrix::zeros(rows, cols);
        let mut b = DVector::zeros(rows);
        let mut r = 0;
        for &q in &ids {
            let c = &constraints[q];
            let jq = row_counts[q];
            for (idx, &a) in c.participants.iter().enumerate() {
                let pos = members.binary_search(&a).expect("participant is a neighbor");
                d.view_mut((r, col_offsets[pos]), (jq, dims[a]))
                    .copy_from(&c.block_matrix(idx, jq, dims[a]));
            }
            b.rows_mut(r, jq).copy_from(&c.offset_vector(jq));
            r += jq;
        }
        let self_pos = members.binary_search(&k).expect("k ∈ N_k");
        local.push(LocalConstraints {
            d,
            b,
            constraint_ids: ids,
            col_offsets,
            self_pos,
        });
    }

    Ok(NetworkSpec {
        dims: dims.to_vec(),
        offsets,
        total_dim,
        neighborhoods,
        local,
        global_d,
        global_b,
        constraints,
    })
}

/// Per-agent rank information.
#[derive(Debug, Clone, Serialize)]
pub struct AgentRanks {
    pub agent: usize,
    pub rows: usize,
    pub row_rank: usize,
    pub cols: usize,
    pub col_rank: usize,
    /// Rank of the column block of `D_k` belonging to agent `k` itself.
    pub self_block_rank: usize,
    pub self_block_cols: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Advisory checks are reported but never block an experiment.
    pub required: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub agents: Vec<AgentRanks>,
    pub checks: Vec<CheckResult>,
    pub global_rank: usize,
    pub feasibility_residual: f64,
    /// Agents whose own column block is rank deficient.
    pub deficient_self_blocks: Vec<usize>,
}

impl ValidationReport {
    pub fn required_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.required)
    }

    pub fn self_block_deficiency_holds(&self) -> bool {
        !self.deficient_self_blocks.is_empty()
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

pub fn validate_assumptions(net: &NetworkSpec) -> ValidationReport {
    let n = net.n_agents();
    let mut checks = Vec::new();

    let symmetric = (0..n).all(|k| {
        net.neighborhoods[k]
            .iter()
            .all(|&l| net.neighborhoods[l].binary_search(&k).is_ok())
    });
    let contains_self = (0..n).all(|k| net.neighborhoods[k].binary_search(&k).is_ok());
    checks.push(CheckResult {
        name: "neighborhood_symmetry".into(),
        passed: symmetric && contains_self,
        required: true,
        detail: "k ∈ N_k and ℓ ∈ N_k ⇔ k ∈ N_ℓ".into(),
    });

    let mut agents = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for k in 0..n {
        let lc = &net.local[k];
        let r = linalg::rank(&lc.d);
        let self_block = lc
            .d
            .columns(lc.col_offsets[lc.self_pos], net.dims[k])
            .into_owned();
        let sr = linalg::rank(&self_block);
        if lc.d.nrows() > 0 && sr < net.dims[k] {
            deficient.push(k);
        }
        let ranks = AgentRanks {
            agent: k,
            rows: lc.d.nrows(),
            row_rank: r,
            cols: lc.d.ncols(),
            col_rank: r,
            self_block_rank: sr,
            self_block_cols: net.dims[k],
        };
        checks.push(CheckResult {
            name: format!("full_row_rank[{k}]"),
            passed: r == ranks.rows,
            required: true,
            detail: format!("rank {} of {} rows", r, ranks.rows),
        });
        checks.push(CheckResult {
            name: format!("column_rank_deficient[{k}]"),
            passed: r < ranks.cols,
            required: true,
            detail: format!("rank {} of {} columns", r, ranks.cols),
        });
        agents.push(ranks);
    }

    let global_rank = linalg::rank(&net.global_d);
    let wp = linalg::min_norm_solve(&net.global_d, &(-&net.global_b));
    let residual = (&net.global_d * &wp + &net.global_b).amax();
    let scale = 1.0 + net.global_b.amax();
    checks.push(CheckResult {
        name: "global_feasibility".into(),
        passed: residual <= 1e-9 * scale,
        required: true,
        detail: format!("min-norm residual {residual:.3e}"),
    });
    checks.push(CheckResult {
        name: "self_block_column_deficiency".into(),
        passed: !deficient.is_empty(),
        required: false,
        detail: if deficient.is_empty() {
            "no agent has a column-rank-deficient own block".into()
        } else {
            format!("deficient own blocks at agents {deficient:?}")
        },
    });

    ValidationReport {
        agents,
        checks,
        global_rank,
        feasibility_residual: residual,
        deficient_self_blocks: deficient,
    }
}

/// Draw a magnitude uniformly from `[lo, hi]` with a random sign.
pub fn signed_uniform<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    let mag = if range.1 > range.0 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    };
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Scalar-block constraints over the given participant sets with coefficients
/// and offsets drawn by [`signed_uniform`].
pub fn random_scalar_constraints<R: Rng + ?Sized>(
    sets: &[Vec<usize>],
    coefficient_range: (f64, f64),
    offset_range: (f64, f64),
    rng: &mut R,
) -> Vec<ConstraintSpec> {
    sets.iter()
        .enumerate()
        .map(|(q, set)| {
            let coefs = set.iter().map(|_| signed_uniform(coefficient_range, rng)).collect();
            let b = signed_uniform(offset_range, rng);
            ConstraintSpec::scalar(q, set.clone(), coefs, b)
        })
        .collect()
}

/// Consecutive-pair participant sets `{k, k+1}`.
pub fn line_sets(n: usize) -> Vec<Vec<usize>> {
    (0..n.saturating_sub(1)).map(|k| vec![k, k + 1]).collect()
}

/// Four overlapping sets: first half, second half, even ids, odd ids.
pub fn dense_sets(n: usize) -> Vec<Vec<usize>> {
    let h = n / 2;
    vec![
        (0..h).collect(),
        (h..n).collect(),
        (0..n).step_by(2).collect(),
        (1..n).step_by(2).collect(),
    ]
}

/// Six-agent, five-constraint topology used by the tracking and desk scenarios.
pub fn mesh6_sets() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![1, 2, 3], vec![2, 4], vec![3, 4, 5], vec![0, 5]]
}
