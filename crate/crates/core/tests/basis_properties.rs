use proptest::prelude::*;
use shiftmpc_core::basis::{BasisFamily, ParamVector};
use shiftmpc_core::{Matrix, Vector};

/// Sum of `τ(k)τ(k)ᵀ` until the terms drop below `1e-18` of the running total.
fn truncated_gram(f: &BasisFamily) -> Matrix {
    let s = f.dim();
    let mut acc = Matrix::zeros(s, s);
    let mut t = f.tau0().clone();
    for _ in 0..200_000 {
        let term = &t * t.transpose();
        acc += &term;
        if term.amax() <= 1e-18 * acc.amax() {
            break;
        }
        t = f.shift_matrix() * t;
    }
    acc
}

fn family_strategy() -> impl Strategy<Value = BasisFamily> {
    prop_oneof![
        (1usize..=12).prop_map(|s| BasisFamily::classic(s).unwrap()),
        (1usize..=12, 0.2f64..5.0, 0.005f64..0.1).prop_map(|(s, nu, ts)| BasisFamily::laguerre(s, nu, ts).unwrap()),
        (0usize..=4, 0.5f64..4.0, 1.0f64..8.0).prop_map(|(h, nu, w)| {
            BasisFamily::damped_fourier(2 * h + 1, nu, w, 0.05).unwrap()
        }),
        (1usize..=8, 1usize..=8, 1.0f64..10.0).prop_map(|(h, s, nu)| {
            BasisFamily::cascade(h, &BasisFamily::laguerre(s, nu, 0.02).unwrap()).unwrap()
        }),
        (1usize..=5, 1usize..=5, 0.5f64..3.0).prop_map(|(a, b, nu)| {
            BasisFamily::block_union(&[
                BasisFamily::classic(a).unwrap(),
                BasisFamily::laguerre(b, nu, 0.05).unwrap(),
            ])
            .unwrap()
        }),
    ]
}

fn random_eta(seed: &[f64], channels: usize, s: usize) -> ParamVector {
    let v = Vector::from_fn(channels * s, |i, _| seed[i % seed.len()] * (1.0 + i as f64).sin());
    ParamVector::new(v, channels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_then_eval_is_next_sample(
        f in family_strategy(),
        channels in 1usize..=3,
        seed in prop::collection::vec(-3.0f64..3.0, 1..8),
    ) {
        let eta = random_eta(&seed, channels, f.dim());
        let shifted = f.shift(&eta).unwrap();
        for k in 0..60 {
            let a = f.eval(&shifted, k).unwrap();
            let b = f.eval(&eta, k + 1).unwrap();
            prop_assert!((a - b).amax() <= 1e-10);
        }
    }

    #[test]
    fn gram_solves_lyapunov_and_matches_sum(f in family_strategy()) {
        let j = f.gram().unwrap().into_matrix();
        let m = f.shift_matrix();
        let lyap = m * &j * m.transpose() + f.tau0() * f.tau0().transpose() - &j;
        prop_assert!(lyap.amax() <= 1e-9 * j.amax());
        let oracle = truncated_gram(&f);
        prop_assert!((&j - &oracle).norm() <= 1e-8 * oracle.norm());
        prop_assert!((&j - j.transpose()).amax() <= 1e-12 * j.amax());
    }

    #[test]
    fn orthonormalized_family_has_identity_gram_and_same_span(
        f in family_strategy(),
        seed in prop::collection::vec(-2.0f64..2.0, 1..6),
    ) {
        let o = f.orthonormalize().unwrap();
        let j = o.gram().unwrap().into_matrix();
        prop_assert!((j - Matrix::identity(f.dim(), f.dim())).amax() <= 1e-8);
        // η' = Lᵀη reproduces the same trajectory
        let eta = random_eta(&seed, 1, f.dim());
        let l = f.gram_factor().unwrap();
        let eta_o = ParamVector::new(l.transpose() * eta.as_vector(), 1).unwrap();
        let a = f.trajectory(&eta, 40).unwrap();
        let b = o.trajectory(&eta_o, 40).unwrap();
        prop_assert!((a - b).amax() <= 1e-9 * (1.0 + eta.as_vector().amax()));
    }

    #[test]
    fn shift_is_linear(
        f in family_strategy(),
        a in prop::collection::vec(-2.0f64..2.0, 1..6),
        b in prop::collection::vec(-2.0f64..2.0, 1..6),
        c in -3.0f64..3.0,
    ) {
        let ea = random_eta(&a, 2, f.dim());
        let eb = random_eta(&b, 2, f.dim());
        let sum = ParamVector::new(ea.as_vector() * c + eb.as_vector(), 2).unwrap();
        let lhs = f.shift(&sum).unwrap();
        let rhs = f.shift(&ea).unwrap().as_vector() * c + f.shift(&eb).unwrap().as_vector();
        prop_assert!((lhs.as_vector() - rhs).amax() <= 1e-12 * (1.0 + sum.as_vector().amax()));
    }
}

#[test]
fn closed_loop_family_traces_state_trajectories() {
    // τ(k) = (A+BK)^k τ(0): the first coordinate of a unit vector follows the state
    let a = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let b = Matrix::from_row_slice(2, 1, &[0.005, 0.1]);
    let k = Matrix::from_row_slice(1, 2, &[-3.0, -2.5]);
    let tau0 = Vector::from_vec(vec![1.0, -0.5]);
    let f = BasisFamily::lqr(&a, &b, &k, tau0.clone()).unwrap();
    let mcl = &a + &b * &k;
    let mut x = tau0;
    for step in 0..50 {
        assert!((f.tau(step) - &x).amax() < 1e-12);
        x = &mcl * x;
    }
}
