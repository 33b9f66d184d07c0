use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftmpc_core::admissible::AffineConstraintSet;
use shiftmpc_core::basis::{BasisFamily, ParamVector};
use shiftmpc_core::linalg::kron;
use shiftmpc_core::lti::{assemble, quadruple_integrator};
use shiftmpc_core::nonlinear::{
    galerkin_residual, project_trajectory, residual_jacobian, solve_nlp, swing_up_guess, CartPendulum,
    GuessOptions, NlpProblem, NlpStatus, NonlinearPlant, PendulumParams, SqpOptions,
};
use shiftmpc_core::{Matrix, Vector};

fn small_family() -> BasisFamily {
    BasisFamily::cascade(3, &BasisFamily::laguerre(3, 14.0, 0.02).unwrap())
        .unwrap()
        .orthonormalize()
        .unwrap()
}

fn pendulum_family() -> BasisFamily {
    BasisFamily::cascade(12, &BasisFamily::laguerre(7, 14.0, 0.02).unwrap())
        .unwrap()
        .orthonormalize()
        .unwrap()
}

fn plant() -> CartPendulum {
    CartPendulum::new(PendulumParams::default(), 0.02).unwrap()
}

fn pendulum_weights() -> (Matrix, Matrix) {
    (
        Matrix::from_diagonal(&Vector::from_vec(vec![20.0, 2.0, 50.0, 2.0])),
        Matrix::from_element(1, 1, 10.0),
    )
}

fn pendulum_constraints() -> AffineConstraintSet {
    AffineConstraintSet::boxes(4, 1, &[(0, 0.45)], &[(0, 24.0)]).unwrap()
}

#[test]
fn jacobian_matches_finite_differences_at_random_iterates() {
    let p = plant();
    let fam = small_family();
    let s = fam.dim();
    let k = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let ex = ParamVector::new(Vector::from_fn(4 * s, |_, _| rng.random_range(-0.5..0.5)), 4).unwrap();
        let eu = ParamVector::new(Vector::from_fn(s, |_, _| rng.random_range(-3.0..3.0)), 1).unwrap();
        let (jx, ju) = residual_jacobian(&p, &fam, &ex, &eu, k).unwrap();
        let mut z = Vector::zeros(5 * s);
        z.rows_mut(0, 4 * s).copy_from(ex.as_vector());
        z.rows_mut(4 * s, s).copy_from(eu.as_vector());
        let res = |z: &Vector| {
            let ex = ParamVector::new(z.rows(0, 4 * s).into_owned(), 4).unwrap();
            let eu = ParamVector::new(z.rows(4 * s, s).into_owned(), 1).unwrap();
            galerkin_residual(&p, &fam, &ex, &eu, k).unwrap()
        };
        let h = 1e-6;
        for c in 0..5 * s {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let fd = (res(&zp) - res(&zm)) / (2.0 * h);
            let col = if c < 4 * s { jx.column(c).into_owned() } else { ju.column(c - 4 * s).into_owned() };
            assert!((&fd - &col).amax() <= 1e-5 * (1.0 + col.amax()), "column {c}");
        }
    }
}

#[test]
fn jacobian_at_the_upright_equilibrium_is_the_linear_encoding() {
    let p = plant();
    let fam = small_family();
    let s = fam.dim();
    let k = 150;
    let (_, a, b) = p.linearize(0, &Vector::zeros(4), &Vector::zeros(1));
    let (jx, ju) = residual_jacobian(&p, &fam, &ParamVector::zeros(4, s), &ParamVector::zeros(1, s), k).unwrap();
    // oracle sums over the same truncated horizon
    let table = fam.tau_table(k + 2);
    let mut cross = Matrix::zeros(s, s);
    let mut gram = Matrix::zeros(s, s);
    for i in 0..=k {
        cross += table.column(i) * table.column(i + 1).transpose();
        gram += table.column(i) * table.column(i).transpose();
    }
    let jx_ref = kron(&Matrix::identity(4, 4), &cross) - kron(&a, &gram);
    let ju_ref = -kron(&b, &gram);
    assert!((jx - jx_ref).amax() < 1e-10);
    assert!((ju - ju_ref).amax() < 1e-10);
}

#[test]
fn linear_plant_residual_vanishes_on_the_qp_equalities() {
    let p = quadruple_integrator(0.05, 0.5, 0.02).unwrap();
    let fam = BasisFamily::laguerre(5, 4.0, 0.02).unwrap();
    let s = fam.dim();
    let qp = assemble(&p, &fam, 0).unwrap();
    // a point on the dynamics rows: least-norm solution for a random x0
    let mut beq = qp.beq.clone();
    for i in 0..4 {
        beq[4 * s + i] = 0.1 * (i as f64 + 1.0);
    }
    let z = qp.aeq.clone().svd(true, true).solve(&beq, 1e-12).unwrap();
    let ex = ParamVector::new(z.rows(0, 4 * s).into_owned(), 4).unwrap();
    let eu = ParamVector::new(z.rows(4 * s, s).into_owned(), 1).unwrap();
    let k = 3000;
    assert!(fam.spectral_radius().powi(k as i32) < 1e-14);
    let r = galerkin_residual(&p, &fam, &ex, &eu, k).unwrap();
    assert!(r.amax() < 1e-9, "{:e}", r.amax());
}

#[test]
fn projection_is_least_squares_optimal() {
    let fam = small_family();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let count = 80;
    let samples = Matrix::from_fn(2, count, |_, k| (0.1 * k as f64).sin() + rng.random_range(-0.1..0.1));
    let eta = project_trajectory(&samples, &fam).unwrap();
    let err = |e: &ParamVector| (fam.trajectory(e, count).unwrap() - &samples).norm_squared();
    let best = err(&eta);
    for _ in 0..50 {
        let d = Vector::from_fn(eta.as_vector().len(), |_, _| rng.random_range(-1e-3..1e-3));
        let other = ParamVector::new(eta.as_vector() + d, 2).unwrap();
        assert!(err(&other) >= best);
    }
    // exact for signals in the span
    let inside = fam.trajectory(&eta, count).unwrap();
    let again = project_trajectory(&inside, &fam).unwrap();
    assert!((again.as_vector() - eta.as_vector()).amax() < 1e-9);
}

#[test]
fn swing_up_solve_decreases_the_merit_at_every_step() {
    let p = plant();
    let fam = pendulum_family();
    let (q, r) = pendulum_weights();
    let x0 = CartPendulum::hanging();
    let guess = swing_up_guess(&p, &x0, &GuessOptions::default()).unwrap();
    let (gx, gu) = guess.project(&fam).unwrap();
    let nlp = NlpProblem::new(p, fam.clone(), q, r, pendulum_constraints(), 34).unwrap();
    let res = solve_nlp(&nlp, &x0, &gx, &gu, &[], &SqpOptions::default()).unwrap();
    assert_eq!(res.status, NlpStatus::Converged);
    assert!(!res.merit_history.is_empty());
    for step in &res.merit_history {
        assert!(step.after <= step.before, "{step:?}");
        assert!(step.alpha > 0.0 && step.alpha <= 1.0);
    }
    // the penalty never decreases
    for w in res.merit_history.windows(2) {
        assert!(w[1].penalty >= w[0].penalty);
    }
    let us = fam.trajectory(&res.eta_u, 35).unwrap();
    assert!(us.amax() <= 24.0 + 1e-6);
    let xs = fam.trajectory(&res.eta_x, 35).unwrap();
    assert!(xs.row(0).amax() <= 0.45 + 1e-6);
    assert!((fam.eval(&res.eta_x, 0).unwrap() - &x0).amax() < 1e-6);
}

#[test]
fn restoration_relaxes_state_rows_only_when_enabled() {
    // cart next to the rail and moving into it: the rail rows beyond k = 0
    // cannot be met
    let p = plant();
    let fam = pendulum_family();
    let (q, r) = pendulum_weights();
    let nlp = NlpProblem::new(p, fam.clone(), q, r, pendulum_constraints(), 34).unwrap();
    let x0 = Vector::from_vec(vec![0.449, 3.0, 0.0, 0.0]);
    let zero = (ParamVector::zeros(4, fam.dim()), ParamVector::zeros(1, fam.dim()));
    let strict = solve_nlp(&nlp, &x0, &zero.0, &zero.1, &[], &SqpOptions::default()).unwrap();
    assert_eq!(strict.status, NlpStatus::QpInfeasible);
    assert_eq!(strict.restorations, 0);
    let opts = SqpOptions {
        restore: true,
        ..SqpOptions::default()
    };
    let relaxed = solve_nlp(&nlp, &x0, &zero.0, &zero.1, &[], &opts).unwrap();
    assert!(relaxed.restorations > 0);
    // input rows are never relaxed
    assert!(relaxed.u0[0].abs() <= 24.0 + 1e-6);
}
