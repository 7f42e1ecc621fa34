//! Exact Gaussian-moment analysis of the adapt-then-project recursions.
//!
//! All stacked quantities use the global ordering of [`NetworkSpec`]: agent
//! blocks in ascending id, each of size `M_k`.

mod engine;
mod mixed;
mod moments;
mod recursions;

pub use engine::{
    privacy_recursions, MomentSnapshot, PowerRule, TheoryOptions, TheoryPoint, TheoryTrajectory,
    TrackingChange,
};
pub use mixed::{mixed_moments, vectorized_psi_step, MixedMomentSet};
pub use moments::{gaussian_fourth_moment, FourthMoment};
pub use recursions::{
    gamma_matrix, mean_recursion, mean_spectral_radius, msd_transient, stability_bounds,
    steady_state_msd, v_recursion, MeanTrajectory, StabilityBounds, SteadyState,
};

use nalgebra::{DMatrix, DVector};

use crate::datamodel::AgentSignalModel;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;

/// Default cap on the stacked dimension `M` for analytic evaluation.
pub const DEFAULT_DIM_CAP: usize = 64;

/// Global block matrices of the data model.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total: usize,
    /// Step size of every coordinate (diagonal of `ℳ`).
    pub mu: DVector<f64>,
    pub r_u: Vec<DMatrix<f64>>,
    /// `ℛ_u`.
    pub calr: DMatrix<f64>,
    /// `ℳ ℛ_u`.
    pub mr: DMatrix<f64>,
    /// `ℳ 𝒢 ℳ`.
    pub mgm: DMatrix<f64>,
}

impl GlobalModel {
    pub fn new(net: &NetworkSpec, signal: &AgentSignalModel) -> Result<Self> {
        if signal.dims() != net.dims {
            return Err(Error::Dimension("signal model and network dimensions differ".into()));
        }
        let total = net.total_dim;
        let mut mu = DVector::zeros(total);
        for k in 0..net.n_agents() {
            mu.rows_mut(net.offsets[k], net.dims[k]).fill(signal.mu[k]);
        }
        let calr = signal.calr();
        let calg = signal.calg();
        let mr = scale_rows(&calr, &mu);
        let mgm = scale_cols(&scale_rows(&calg, &mu), &mu);
        Ok(GlobalModel {
            dims: net.dims.clone(),
            offsets: net.offsets.clone(),
            total,
            mu,
            r_u: signal.r_u.clone(),
            calr,
            mr,
            mgm,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.dims.len()
    }

    /// `ℳ X`.
    pub fn m_left(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        scale_rows(x, &self.mu)
    }

    /// `X ℳ`.
    pub fn m_right(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        scale_cols(x, &self.mu)
    }

    /// `E[ℛ S ℛ]` for Gaussian regressors and arbitrary (not necessarily
    /// symmetric) `S`.
    pub fn ersr(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.calr * s * &self.calr;
        for (k, r) in self.r_u.iter().enumerate() {
            let (o, m) = (self.offsets[k], self.dims[k]);
            let skk = s.view((o, o), (m, m)).into_owned();
            let extra = r * skk.transpose() * r + r * crate::linalg::trace_product(&skk, r);
            let mut blk = out.view_mut((o, o), (m, m));
            blk += extra;
        }
        out
    }

    /// `ℳ E[ℛ S ℛ] ℳ`.
    pub fn m_ersr_m(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.m_right(&self.m_left(&self.ersr(s)))
    }

    pub fn block(&self, x: &DMatrix<f64>, k: usize, l: usize) -> DMatrix<f64> {
        x.view((self.offsets[k], self.offsets[l]), (self.dims[k], self.dims[l]))
            .into_owned()
    }

    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if self.total > cap {
            return Err(Error::DimensionCap { dim: self.total, cap });
        }
        Ok(())
    }
}

fn scale_rows(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (r, &s) in d.iter().enumerate() {
        let mut row = out.row_mut(r);
        row *= s;
    }
    out
}

fn scale_cols(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (c, &s) in d.iter().enumerate() {
        let mut col = out.column_mut(c);
        col *= s;
    }
    out
}
