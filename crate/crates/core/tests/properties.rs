mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use privlms::harness::{self, gain_to_loss, to_db};
use privlms::linalg;
use privlms::privacy::{self, AdaptiveNoiseState};
use privlms::projection;
use privlms::simulate::MomentAccumulator;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, data.iter().copied().cycle().take(rows * cols))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_normalized_and_ordered(powers in prop::collection::vec(0.0f64..20.0, 2..8), agent in 0usize..8) {
        let n = powers.len();
        let k = agent % n;
        let members: Vec<usize> = (0..n).collect();
        let w = projection::compute_weights(k, &members, &powers);
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&x| x > 0.0));
        for a in 0..n {
            prop_assert!(w.weights[k] >= w.weights[a]);
            for b in 0..n {
                if a != k && b != k && powers[a] < powers[b] {
                    prop_assert!(w.weights[a] >= w.weights[b]);
                }
            }
        }
    }

    #[test]
    fn projector_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = common::random_network(&mut rng, true);
        let sig = common::random_powers(&mut rng, net.n_agents());
        let set = projection::build_projection_set(&net, &sig).unwrap();
        for (k, lp) in set.local.iter().enumerate() {
            let d = &net.local[k].d;
            let b = &net.local[k].b;
            let tol = 1e-9 * (1.0 + d.amax());
            prop_assert!((&lp.p * &lp.p - &lp.p).amax() < tol);
            prop_assert!((d * &lp.p).amax() < tol);
            prop_assert!((d * &lp.f - b).amax() < tol);
            let psi = DVector::from_fn(lp.p.nrows(), |i, _| (i as f64).sin());
            let w = projection::project_local(k, &set, &psi);
            prop_assert!((d * &w + b).amax() < 1e-8 * (1.0 + psi.amax()));
        }
    }

    #[test]
    fn sufficient_power_is_monotone_and_verified(seed in any::<u64>(), m in 1usize..5, r1 in 0.0f64..0.95, r2 in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, u, x) = common::random_joint(&mut rng, m);
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        let tr = w.trace();
        let s_lo = privacy::sufficient_power(&u, &w, lo * tr).unwrap();
        let s_hi = privacy::sufficient_power(&u, &w, hi * tr).unwrap();
        prop_assert!(s_lo <= s_hi * (1.0 + 1e-12));
        prop_assert!(privacy::verify_constraint(s_hi, &u, &x, &w, hi * tr));
        prop_assert!(privacy::sufficient_power(&u, &w, tr).is_err());
    }

    #[test]
    fn steady_state_power_matches_formula(data in prop::collection::vec(-2.0f64..2.0, 16), m in 1usize..5, rho in 0.0f64..0.99) {
        let a = matrix(m, m, &data);
        let w = &a * a.transpose() + DMatrix::identity(m, m);
        let delta = rho * w.trace();
        let expect = (&w * &w).trace() / (w.trace() - delta);
        let got = privacy::steady_state_power(&w, delta).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn accumulator_merge_equals_sequential(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40), split in 1usize..39) {
        let cut = split.min(rows.len() - 1);
        let mut all = MomentAccumulator::new(3);
        let mut left = MomentAccumulator::new(3);
        let mut right = MomentAccumulator::new(3);
        for (i, r) in rows.iter().enumerate() {
            all.push(r);
            if i < cut { left.push(r) } else { right.push(r) }
        }
        left.merge(&right);
        prop_assert_eq!(left.count, all.count);
        for (a, b) in left.sum.iter().zip(&all.sum) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in left.outer.iter().zip(&all.outer) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gain_to_loss_is_symmetric(a in -40.0f64..10.0, b in -40.0f64..10.0, c in -40.0f64..10.0, d in -40.0f64..10.0) {
        let g1 = gain_to_loss(a, b, c, d);
        let g2 = gain_to_loss(c, d, a, b);
        prop_assert!(g1.ratio >= 0.0 || g1.degenerate);
        prop_assert_eq!(g1.infinite, g2.infinite);
        if !g1.degenerate {
            prop_assert_eq!(g1.ratio, g2.ratio);
        }
        prop_assert_eq!(g1.gain_db, -g2.gain_db);
    }

    #[test]
    fn db_conversion_inverts(x in 1e-12f64..1e12) {
        prop_assert!((10f64.powf(to_db(x) / 10.0) - x).abs() <= 1e-12 * x);
    }

    #[test]
    fn seed_override_roundtrips(seed in any::<u64>(), runs in 1usize..500) {
        let cfg = harness::preset("line", Some(&json!({"seed": seed, "runs": runs}))).unwrap();
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.runs, runs);
        let back = harness::ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn vec_kron_identity(data in prop::collection::vec(-3.0f64..3.0, 27), m in 1usize..4) {
        let a = matrix(m, m, &data);
        let x = matrix(m, m, &data[9..]);
        let b = matrix(m, m, &data[18..]);
        let lhs = linalg::vec(&(&a * &x * &b));
        let rhs = linalg::kron(&b.transpose(), &a) * linalg::vec(&x);
        prop_assert!((lhs - rhs).amax() < 1e-10);
        prop_assert_eq!(linalg::unvec(&linalg::vec(&x), m, m), x);
    }

    #[test]
    fn adaptive_state_stays_nonnegative(steps in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 1..200), delta in 0.0f64..5.0) {
        let mut st = AdaptiveNoiseState::new(delta, 0.95);
        let mean = DVector::zeros(2);
        for s in &steps {
            st.update(&DVector::from_column_slice(s), &mean, delta);
            prop_assert!(st.beta >= 0.0);
            prop_assert!(st.gamma >= 0.0);
            prop_assert!(st.sigma2 >= 0.0 && st.sigma2.is_finite());
        }
    }
}
