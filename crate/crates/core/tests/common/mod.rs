#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use privlms::network::{self, CoefficientBlock, ConstraintSpec, NetworkSpec, Offset};

/// Random network passing the required assumption checks. With `general`,
/// some constraints use full coefficient blocks and vector offsets.
pub fn random_network<R: Rng>(rng: &mut R, general: bool) -> NetworkSpec {
    loop {
        let n = rng.random_range(3..=7);
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let q = rng.random_range(1..=n);
        let mut constraints = Vec::with_capacity(q);
        for id in 0..q {
            let size = rng.random_range(2..=n.min(3));
            let mut parts = sample(rng, n, size).into_vec();
            parts.sort_unstable();
            let min_dim = parts.iter().map(|&k| dims[k]).min().unwrap();
            if general && rng.random_bool(0.4) {
                let j = rng.random_range(1..=min_dim);
                let blocks = parts
                    .iter()
                    .map(|&k| {
                        CoefficientBlock::Matrix(DMatrix::from_fn(j, dims[k], |_, _| {
                            network::signed_uniform((1.0, 3.0), rng)
                        }))
                    })
                    .collect();
                let offset = Offset::Vector(DVector::from_fn(j, |_, _| network::signed_uniform((1.0, 3.0), rng)));
                constraints.push(ConstraintSpec {
                    id,
                    participants: parts,
                    blocks,
                    offset,
                });
            } else {
                let coefs = parts.iter().map(|_| network::signed_uniform((1.0, 3.0), rng)).collect();
                let b = network::signed_uniform((1.0, 3.0), rng);
                constraints.push(ConstraintSpec::scalar(id, parts, coefs, b));
            }
        }
        let Ok(net) = network::build_network(constraints, &dims) else {
            continue;
        };
        if network::validate_assumptions(&net).required_pass() {
            return net;
        }
    }
}

pub fn random_powers<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..3.0)).collect()
}

/// Random PSD joint covariance of `(w, ψ)` split into `(W, U, X)`.
pub fn random_joint<R: Rng>(rng: &mut R, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(2 * m, 2 * m, |_, _| rng.random_range(-1.0..1.0));
    let j = &a * a.transpose() + DMatrix::identity(2 * m, 2 * m) * 1e-3;
    let w = j.view((0, 0), (m, m)).into_owned();
    let u = j.view((0, m), (m, m)).into_owned();
    let x = j.view((m, m), (m, m)).into_owned();
    (w, u, x)
}

/// Minimiser of `(x − ψ)ᵀ Ω⁻¹ (x − ψ)` subject to `D x + b = 0` from the full KKT system.
pub fn kkt_projection(d: &DMatrix<f64>, b: &DVector<f64>, omega: &DVector<f64>, psi: &DVector<f64>) -> DVector<f64> {
    let n = psi.len();
    let r = d.nrows();
    let mut k = DMatrix::zeros(n + r, n + r);
    let mut rhs = DVector::zeros(n + r);
    for i in 0..n {
        k[(i, i)] = 1.0 / omega[i];
        rhs[i] = psi[i] / omega[i];
    }
    k.view_mut((0, n), (n, r)).copy_from(&d.transpose());
    k.view_mut((n, 0), (r, n)).copy_from(d);
    rhs.rows_mut(n, r).copy_from(&(-b));
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, n).into_owned()
}

/// Per-coordinate `Ω` diagonal of agent `k`'s neighborhood.
pub fn omega_diag(net: &NetworkSpec, k: usize, omega: &[f64]) -> DVector<f64> {
    let mut v = Vec::new();
    for (pos, &l) in net.neighborhoods[k].iter().enumerate() {
        v.extend(std::iter::repeat_n(omega[pos], net.dims[l]));
    }
    DVector::from_vec(v)
}
