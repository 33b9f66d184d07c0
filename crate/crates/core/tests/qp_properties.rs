use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftmpc_core::qp::{solve_lp, solve_qp, QpProblem, QpSolution, QpStatus, QpSolver, Tolerances};
use shiftmpc_core::{Matrix, Vector};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Feasible random problem: the inequalities hold with slack at a random point.
fn random_problem(rng: &mut ChaCha8Rng, linear: bool) -> QpProblem {
    let n = rng.random_range(2..=12);
    let p = rng.random_range(0..n / 2 + 1);
    let q = rng.random_range(1..=3 * n);
    let z0 = rand_vec(rng, n);
    let aeq = rand_mat(rng, p, n);
    let beq = &aeq * &z0;
    let mut ain = rand_mat(rng, q, n);
    let mut bin = &ain * &z0 + Vector::from_fn(q, |_, _| rng.random_range(0.0..1.0));
    let h = if linear {
        // box rows keep the LP bounded
        let boxes = Matrix::identity(n, n);
        let mut stacked = Matrix::zeros(q + 2 * n, n);
        stacked.view_mut((0, 0), (q, n)).copy_from(&ain);
        stacked.view_mut((q, 0), (n, n)).copy_from(&boxes);
        stacked.view_mut((q + n, 0), (n, n)).copy_from(&(-boxes));
        let mut b = Vector::from_element(q + 2 * n, 3.0);
        b.rows_mut(0, q).copy_from(&bin);
        ain = stacked;
        bin = b;
        Matrix::zeros(n, n)
    } else {
        let l = rand_mat(rng, n, n);
        &l * l.transpose() + Matrix::identity(n, n) * 0.1
    };
    QpProblem::new(h, rand_vec(rng, n) * 3.0, aeq, beq, ain, bin).unwrap()
}

/// Stationarity, primal and dual feasibility and complementarity, computed here.
fn assert_kkt(p: &QpProblem, sol: &QpSolution, tol: f64) {
    let z = &sol.z;
    let grad = &p.h * z + &p.f + p.aeq.transpose() * &sol.eq_multipliers + p.ain.transpose() * &sol.in_multipliers;
    let scale = 1.0 + p.f.amax() + sol.in_multipliers.amax() + sol.eq_multipliers.amax();
    assert!(grad.amax() <= tol * scale, "stationarity {:e}", grad.amax());
    if p.aeq.nrows() > 0 {
        assert!((&p.aeq * z - &p.beq).amax() <= tol * (1.0 + p.beq.amax()));
    }
    let slack = &p.bin - &p.ain * z;
    for i in 0..slack.len() {
        let lam = sol.in_multipliers[i];
        assert!(slack[i] >= -tol * (1.0 + p.bin.amax()), "primal {i}: {:e}", slack[i]);
        assert!(lam >= -tol * scale, "dual sign {i}: {lam:e}");
        assert!((lam * slack[i]).abs() <= tol * scale * (1.0 + p.bin.amax()), "complementarity {i}");
    }
}

#[test]
fn random_qps_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tol = Tolerances::default();
    for _ in 0..60 {
        let p = random_problem(&mut rng, false);
        let sol = solve_qp(&p, None, &tol).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_kkt(&p, &sol, 1e-7);
    }
}

#[test]
fn random_lps_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tol = Tolerances::default();
    for _ in 0..60 {
        let p = random_problem(&mut rng, true);
        let sol = solve_lp(&p.f, &p.aeq, &p.beq, &p.ain, &p.bin, &tol).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_kkt(&p, &sol, 1e-7);
    }
}

#[test]
fn constructed_unbounded_lps_are_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = Tolerances::default();
    for _ in 0..40 {
        let n = rng.random_range(2..=8);
        let q = rng.random_range(1..=2 * n);
        // every row has a nonpositive coefficient on z₀, and z₀ has cost −1
        let mut ain = rand_mat(&mut rng, q, n);
        for i in 0..q {
            ain[(i, 0)] = -ain[(i, 0)].abs();
        }
        let bin = Vector::from_fn(q, |_, _| rng.random_range(0.0..1.0));
        let mut f = Vector::zeros(n);
        f[0] = -1.0;
        let sol = solve_lp(&f, &Matrix::zeros(0, n), &Vector::zeros(0), &ain, &bin, &tol).unwrap();
        assert_eq!(sol.status, QpStatus::Unbounded);
    }
}

#[test]
fn infeasible_problems_are_reported() {
    let tol = Tolerances::default();
    let ain = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let bin = Vector::from_vec(vec![-1.0, -1.0]);
    let h = Matrix::identity(1, 1);
    let p = QpProblem::new(h, Vector::zeros(1), Matrix::zeros(0, 1), Vector::zeros(0), ain.clone(), bin.clone()).unwrap();
    assert_eq!(solve_qp(&p, None, &tol).unwrap().status, QpStatus::Infeasible);
    let lp = solve_lp(&Vector::zeros(1), &Matrix::zeros(0, 1), &Vector::zeros(0), &ain, &bin, &tol).unwrap();
    assert_eq!(lp.status, QpStatus::Infeasible);
}

#[test]
fn warm_started_resolves_match_cold() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = Tolerances::default();
    for _ in 0..40 {
        let p = random_problem(&mut rng, false);
        let solver = QpSolver::new(&p, tol).unwrap();
        let first = solver.solve(&p.beq, &[]).unwrap();
        let mut moved = p.clone();
        moved.beq += rand_vec(&mut rng, p.beq.len()) * 0.01;
        let cold = solve_qp(&moved, None, &tol).unwrap();
        let warm = solver.solve(&moved.beq, &first.active_set).unwrap();
        assert_eq!(cold.status, warm.status);
        if cold.status == QpStatus::Optimal {
            assert!((&cold.z - &warm.z).amax() <= 1e-6);
        }
        // a garbage working set must not change the answer
        let noisy: Vec<usize> = (0..p.bin.len()).filter(|i| i % 2 == 0).collect();
        let odd = solver.solve(&moved.beq, &noisy).unwrap();
        assert_eq!(cold.status, odd.status);
        if cold.status == QpStatus::Optimal {
            assert!((&cold.z - &odd.z).amax() <= 1e-6);
        }
    }
}
