use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftmpc_core::admissible::{compute_nmax, stacked_constraints, AffineConstraintSet, NmaxOptions, StartIndex};
use shiftmpc_core::basis::BasisFamily;
use shiftmpc_core::qp::{solve_lp, QpStatus, Tolerances};
use shiftmpc_core::{Matrix, Vector};

/// Scales random coefficient vectors onto the boundary of the constraints
/// for `k ≤ nmax` and checks that they hold far beyond. Half of the draws are
/// built from `τ(k)` with `k` near `nmax`, which load the late samples.
fn check_sound(family: &BasisFamily, cons: &AffineConstraintSet, nmax: usize, seed: u64, draws: usize) {
    let (g, h) = stacked_constraints(family, cons, nmax + 1);
    let (g_long, h_long) = stacked_constraints(family, cons, 3000);
    let nv = g.ncols();
    let s = family.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 0..draws {
        let mut z = if draw % 2 == 0 {
            Vector::from_fn(nv, |_, _| rng.random_range(-1.0..1.0))
        } else {
            let mut z = Vector::zeros(nv);
            for _ in 0..3 {
                let k = rng.random_range(nmax.saturating_sub(s)..=nmax);
                let tau = family.tau(k);
                let w = rng.random_range(-1.0..1.0);
                for ch in 0..nv / s {
                    z.rows_mut(ch * s, s).axpy(w * rng.random_range(-1.0..1.0), &tau, 1.0);
                }
            }
            z
        };
        let gz = &g * &z;
        let t = (0..h.len())
            .filter(|&i| gz[i] > 0.0)
            .map(|i| h[i] / gz[i])
            .fold(f64::INFINITY, f64::min);
        assert!(t.is_finite());
        z *= t;
        let worst = (&g_long * &z - &h_long).max();
        assert!(worst <= 1e-9 * (1.0 + h.amax()), "violation {worst:e} beyond N_max = {nmax}");
    }
}

#[test]
fn laguerre_input_bound_is_sound() {
    let cons = AffineConstraintSet::boxes(4, 1, &[], &[(0, 0.5)]).unwrap();
    for (s, nu) in [(4, 1.0), (6, 0.8), (8, 1.5)] {
        let family = BasisFamily::laguerre(s, nu, 0.02).unwrap();
        let opts = NmaxOptions {
            start: StartIndex::Zero,
            ..NmaxOptions::default()
        };
        let res = compute_nmax(&family, &cons, &opts).unwrap();
        assert!(res.certificates.iter().all(|&v| v <= res.tol));
        check_sound(&family, &cons, res.nmax, s as u64, 200);
    }
}

#[test]
fn verbatim_start_is_never_below_zero_start() {
    let cons = AffineConstraintSet::boxes(2, 1, &[(0, 1.0)], &[(0, 2.0)]).unwrap();
    let family = BasisFamily::laguerre(5, 2.0, 0.05).unwrap();
    let zero = compute_nmax(&family, &cons, &NmaxOptions { start: StartIndex::Zero, ..NmaxOptions::default() }).unwrap();
    let verbatim = compute_nmax(&family, &cons, &NmaxOptions::default()).unwrap();
    assert!(zero.nmax <= verbatim.nmax);
    assert_eq!(verbatim.start, 3 * 5);
    check_sound(&family, &cons, zero.nmax, 9, 20);
}

#[test]
fn classic_basis_is_certified_at_its_length() {
    let cons = AffineConstraintSet::boxes(3, 1, &[(0, 1.0)], &[(0, 1.0)]).unwrap();
    let family = BasisFamily::classic(6).unwrap();
    let verbatim = compute_nmax(&family, &cons, &NmaxOptions::default()).unwrap();
    assert_eq!(verbatim.nmax, 4 * 6);
    assert_eq!(verbatim.iterations, 1);
    let zero = compute_nmax(&family, &cons, &NmaxOptions { start: StartIndex::Zero, ..NmaxOptions::default() }).unwrap();
    // samples 6, 7, ... vanish, so sample 6 is implied by anything
    assert_eq!(zero.nmax, 5);
    check_sound(&family, &cons, zero.nmax, 3, 20);
}

/// Extreme points from an LP over the `k ≤ N_max` rows: long, nearly parallel
/// row sets that also exercise the simplex reinversion.
#[test]
fn lp_vertices_respect_constraints_beyond_nmax() {
    let cons = AffineConstraintSet::boxes(4, 1, &[], &[(0, 0.5)]).unwrap();
    let family = BasisFamily::laguerre(8, 1.5, 0.02).unwrap();
    let opts = NmaxOptions {
        start: StartIndex::Zero,
        ..NmaxOptions::default()
    };
    let nmax = compute_nmax(&family, &cons, &opts).unwrap().nmax;
    let (g, h) = stacked_constraints(&family, &cons, nmax + 1);
    let (g_long, h_long) = stacked_constraints(&family, &cons, 3000);
    let nv = g.ncols();
    let mut ain = Matrix::zeros(g.nrows() + 2 * nv, nv);
    ain.view_mut((0, 0), g.shape()).copy_from(&g);
    ain.view_mut((g.nrows(), 0), (nv, nv)).copy_from(&Matrix::identity(nv, nv));
    ain.view_mut((g.nrows() + nv, 0), (nv, nv)).copy_from(&(-Matrix::identity(nv, nv)));
    let mut bin = Vector::from_element(ain.nrows(), 1e3);
    bin.rows_mut(0, h.len()).copy_from(&h);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..12 {
        let f = Vector::from_fn(nv, |_, _| rng.random_range(-1.0..1.0));
        let sol = solve_lp(&f, &Matrix::zeros(0, nv), &Vector::zeros(0), &ain, &bin, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&ain * &sol.z - &bin).max() <= 1e-9);
        assert!((&g_long * &sol.z - &h_long).max() <= 1e-9);
    }
}
