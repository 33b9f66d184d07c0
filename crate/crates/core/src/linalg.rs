//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::linalg::{Schur, SymmetricEigen, SVD};

use crate::{Error, Matrix, Result, Vector};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc))
                .zip_apply(b, |o, bv| *o = aij * bv);
        }
    }
    out
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Strictly lower triangular (nilpotent) matrices return exactly zero.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dim("spectral_radius", m.nrows(), m.ncols()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if is_strictly_triangular(m) {
        return Ok(0.0);
    }
    if is_lower_triangular(m) || is_lower_triangular(&m.transpose()) {
        return Ok((0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::NoConvergence("Schur iteration"))?;
    let eig = schur.complex_eigenvalues();
    Ok(eig
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max))
}

fn is_lower_triangular(m: &Matrix) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == 0.0))
}

fn is_strictly_triangular(m: &Matrix) -> bool {
    let diag_zero = (0..m.nrows()).all(|i| m[(i, i)] == 0.0);
    diag_zero && (is_lower_triangular(m) || is_lower_triangular(&m.transpose()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_sym_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Solves the discrete Lyapunov (Stein) equation `X = A X Aᵀ + Q`.
///
/// Dimensions up to 32 use a dense Kronecker solve of
/// `(I − A ⊗ A) vec(X) = vec(Q)`; larger problems use Smith's doubling
/// iteration. Requires `ρ(A) < 1`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::dim("discrete Lyapunov", n, q.nrows()));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::NotStable(rho));
    }
    let x = if n <= 32 {
        let big = Matrix::identity(n * n, n * n) - kron(a, a);
        let rhs = Vector::from_column_slice(q.as_slice());
        let sol = big
            .lu()
            .solve(&rhs)
            .ok_or(Error::NotStable(rho))?;
        Matrix::from_column_slice(n, n, sol.as_slice())
    } else {
        smith_doubling(a, q)
    };
    Ok((&x + x.transpose()) * 0.5)
}

fn smith_doubling(a: &Matrix, q: &Matrix) -> Matrix {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let incr = &ak * &x * ak.transpose();
        let done = incr.norm() <= f64::EPSILON * x.norm();
        x += incr;
        ak = &ak * &ak;
        if done {
            break;
        }
    }
    x
}

/// Stabilizing solution of the discrete algebraic Riccati equation and the
/// associated state-feedback gain `K` (with `u = K x`).
///
/// Uses the structured doubling algorithm, which converges quadratically.
pub fn dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim("dare", n, b.nrows()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R"))?
        .inverse();
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let eye = Matrix::identity(n, n);
    for _ in 0..100 {
        let w = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or(Error::NoConvergence("Riccati doubling"))?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let delta = (&h_next - &hk).norm();
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if delta <= 1e-14 * (1.0 + hk.norm()) {
            break;
        }
    }
    if !is_finite(&hk) {
        return Err(Error::NoConvergence("Riccati doubling"));
    }
    let s = r + b.transpose() * &hk * b;
    let k = -s
        .lu()
        .solve(&(b.transpose() * &hk * a))
        .ok_or(Error::NoConvergence("Riccati doubling"))?;
    Ok((hk, k))
}

/// Zero-order-hold discretization of `ẋ = A x + B u` with sampling time `ts`,
/// via the exponential of the augmented matrix `[[A, B], [0, 0]]·ts`.
pub fn zoh(a: &Matrix, b: &Matrix, ts: f64) -> Result<(Matrix, Matrix)> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::dim("zoh", n, b.nrows()));
    }
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument("sampling time must be positive".into()));
    }
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = expm(&(aug * ts));
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm1 * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a * scale;
    let mut term = Matrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &x / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-3 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Numerical rank with singular-value threshold `tol·σ_max`.
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut sv: Vec<f64> = SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
