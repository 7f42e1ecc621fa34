use nalgebra::{DMatrix, DVector};

use super::GlobalModel;
use crate::datamodel::TaskPrior;
use crate::linalg::{kron, vec};
use crate::projection::ProjectionSet;

/// Kronecker-form moment operators of one iteration.
///
/// `cross` and `cross_t` carry the dependence between `ψ(i)` and `w°` that the
/// mean-only terms `Y`, `Y'` leave out:
/// `vec Ψ(i+1) = H vec Ψ + Z vec Γ + c + (Y − X − X' + Y') Eψ
///             + cross · vec C + cross_t · vec Cᵀ` with `C = cov(ψ(i), w°)`.
#[derive(Debug, Clone)]
pub struct MixedMomentSet {
    pub h: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub x_prime: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub y_prime: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub c1: DVector<f64>,
    pub c2: DVector<f64>,
    pub c3: DVector<f64>,
    pub c4: DVector<f64>,
    pub c: DVector<f64>,
    pub cross: DMatrix<f64>,
    pub cross_t: DMatrix<f64>,
}

/// `E[ℛ ⊗ ℛ]` for block-diagonal `ℛ = diag(u_k u_kᵀ)`.
fn kron_r(model: &GlobalModel) -> DMatrix<f64> {
    let m = model.total;
    let mut out = kron(&model.calr, &model.calr);
    for (k, r) in model.r_u.iter().enumerate() {
        let (o, d) = (model.offsets[k], model.dims[k]);
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let row = (o + a) * m + (o + c);
                        let col = (o + b) * m + (o + e);
                        out[(row, col)] += r[(a, c)] * r[(b, e)] + r[(a, e)] * r[(b, c)];
                    }
                }
            }
        }
    }
    out
}

pub fn mixed_moments(model: &GlobalModel, set: &ProjectionSet, prior: &TaskPrior) -> MixedMomentSet {
    let m = model.total;
    let ident = DMatrix::<f64>::identity(m, m);
    let p = &set.p;
    let f = DMatrix::from_column_slice(m, 1, set.f.as_slice());
    let mean = DMatrix::from_column_slice(m, 1, prior.mean.as_slice());
    let mr = &model.mr;

    // (ℳ ⊗ ℳ) E[ℛ ⊗ ℛ]
    let mut mm_r4 = kron_r(model);
    for a in 0..m {
        for c in 0..m {
            let s = model.mu[a] * model.mu[c];
            let mut row = mm_r4.row_mut(a * m + c);
            row *= s;
        }
    }
    let i_mr = kron(&ident, mr);
    let mr_i = kron(mr, &ident);
    let z = DMatrix::identity(m * m, m * m) - &i_mr - &mr_i + &mm_r4;
    // E[(ℳℛ) ⊗ (I − ℳℛ)] and E[(I − ℳℛ) ⊗ (ℳℛ)]
    let e_mr_imr = &mr_i - &mm_r4;
    let e_imr_mr = &i_mr - &mm_r4;

    let h = &z * kron(p, p);
    let x = &z * kron(&f, p);
    let x_prime = &z * kron(p, &f);
    let y = &e_mr_imr * kron(&mean, p);
    let y_prime = &e_imr_mr * kron(p, &mean);

    let c1 = &z * vec(&(&f * f.transpose()));
    let c2 = &e_mr_imr * vec(&(&f * mean.transpose()));
    let c3 = &e_imr_mr * vec(&(&mean * f.transpose()));
    let c4 = &mm_r4 * vec(&prior.second_moment()) + vec(&model.mgm);
    let c = &c1 - &c2 - &c3 + &c4;

    let cross = &e_mr_imr * kron(&ident, p);
    let cross_t = &e_imr_mr * kron(p, &ident);

    MixedMomentSet {
        h,
        x,
        x_prime,
        y,
        y_prime,
        z,
        c1,
        c2,
        c3,
        c4,
        c,
        cross,
        cross_t,
    }
}

/// One step of the vectorised second-moment recursion.
pub fn vectorized_psi_step(
    mm: &MixedMomentSet,
    psi: &DMatrix<f64>,
    mean_psi: &DVector<f64>,
    gamma: &DMatrix<f64>,
    cov_psi_w: &DMatrix<f64>,
) -> DVector<f64> {
    &mm.h * vec(psi)
        + &mm.z * vec(gamma)
        + &mm.c
        + (&mm.y - &mm.x - &mm.x_prime + &mm.y_prime) * mean_psi
        + &mm.cross * vec(cov_psi_w)
        + &mm.cross_t * vec(&cov_psi_w.transpose())
}
