use nalgebra::DMatrix;

use crate::linalg;

/// Fourth-order moments of `u ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct FourthMoment {
    pub r: DMatrix<f64>,
}

pub fn gaussian_fourth_moment(r: &DMatrix<f64>) -> FourthMoment {
    FourthMoment { r: r.clone() }
}

impl FourthMoment {
    /// `E[u uᵀ S u uᵀ] = R S R + R Sᵀ R + R tr(S R)`.
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let r = &self.r;
        r * s * r + r * s.transpose() * r + r * linalg::trace_product(s, r)
    }

    /// `E[u uᵀ ⊗ u uᵀ]`, entries `E[u_a u_b u_c u_d]` at `(a·m + c, b·m + d)`.
    pub fn kron(&self) -> DMatrix<f64> {
        let m = self.r.nrows();
        let r = &self.r;
        DMatrix::from_fn(m * m, m * m, |row, col| {
            let (a, c) = (row / m, row % m);
            let (b, d) = (col / m, col % m);
            r[(a, b)] * r[(c, d)] + r[(a, c)] * r[(b, d)] + r[(a, d)] * r[(b, c)]
        })
    }
}
