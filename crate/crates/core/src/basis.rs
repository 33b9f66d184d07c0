//! Time-shift-invariant basis families `τ(k+1) = M τ(k)`.
//!
//! A [`BasisFamily`] spans `s` scalar sequences. A signal with `d` channels is
//! described by a [`ParamVector`] of length `d·s`, laid out channel by channel,
//! so that channel `i` at sample `k` equals `τ(k)ᵀ η_i`.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg;
use crate::{Error, Matrix, Result, Vector};

/// Relative threshold on the smallest Gram eigenvalue used to accept linear
/// independence of the basis functions.
const INDEPENDENCE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisFamily {
    m: Matrix,
    tau0: Vector,
    rho: f64,
}

/// `J̄ = Σ_{k≥0} τ(k) τ(k)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Matrix);

impl GramMatrix {
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_sym_eigenvalue(&self.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        linalg::max_sym_eigenvalue(&self.0)
    }

    /// Spectral condition number (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let lo = self.min_eigenvalue();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            self.max_eigenvalue() / lo
        }
    }
}

/// Stacked coefficients of a multi-channel parametrized trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vector,
    channels: usize,
}

impl ParamVector {
    pub fn new(data: Vector, channels: usize) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 || data.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector of length {} cannot hold {} channels",
                data.len(),
                channels
            )));
        }
        Ok(ParamVector { data, channels })
    }

    pub fn zeros(channels: usize, s: usize) -> Self {
        ParamVector {
            data: Vector::zeros(channels * s),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of coefficients per channel.
    pub fn basis_dim(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn as_vector(&self) -> &Vector {
        &self.data
    }

    pub fn into_vector(self) -> Vector {
        self.data
    }

    pub fn channel(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        let s = self.basis_dim();
        self.data.rows(i * s, s)
    }
}

impl BasisFamily {
    /// Builds a family from an explicit shift matrix and seed vector, checking
    /// stability (`ρ(M) < 1`) and linear independence (Gram matrix positive definite).
    pub fn new(m: Matrix, tau0: Vector) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::dim("basis shift matrix", m.nrows(), m.ncols()));
        }
        if tau0.len() != m.nrows() {
            return Err(Error::dim("basis seed vector", m.nrows(), tau0.len()));
        }
        if !linalg::is_finite(&m) || tau0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("basis data must be finite".into()));
        }
        let rho = linalg::spectral_radius(&m)?;
        Self::checked(m, tau0, rho)
    }

    fn checked(m: Matrix, tau0: Vector, rho: f64) -> Result<Self> {
        if rho >= 1.0 {
            return Err(Error::NotStable(rho));
        }
        let family = BasisFamily { m, tau0, rho };
        let gram = family.gram()?;
        if gram.min_eigenvalue() <= INDEPENDENCE_TOL * gram.max_eigenvalue().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite("Gram matrix (basis functions are dependent)"));
        }
        Ok(family)
    }

    /// Classic finite-horizon parametrization: `M` is the down-shift matrix and
    /// `τ(0) = e₁`, so the first `s` samples are free and the rest vanish.
    pub fn classic(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("classic basis needs s ≥ 1".into()));
        }
        let m = Matrix::from_fn(s, s, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        let mut tau0 = Vector::zeros(s);
        tau0[0] = 1.0;
        Ok(BasisFamily { m, tau0, rho: 0.0 })
    }

    /// Discrete Laguerre functions with decay rate `nu` (1/s) sampled at `ts` (s).
    pub fn laguerre(s: usize, nu: f64, ts: f64) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("Laguerre basis needs s ≥ 1".into()));
        }
        if !(nu > 0.0 && nu.is_finite()) || !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidArgument(
                "Laguerre decay rate and sampling time must be positive".into(),
            ));
        }
        let m = laguerre_shift(s, nu, ts);
        let tau0 = Vector::from_element(s, libm::sqrt(2.0 * nu));
        let rho = libm::exp(-nu * ts);
        Self::checked(m, tau0, rho)
    }

    /// Exponentially damped Fourier family spanning
    /// `e^{−ν k Ts}·{1, cos(jωkTs), sin(jωkTs)}` for `j = 1..(s−1)/2`.
    pub fn damped_fourier(s: usize, nu: f64, omega: f64, ts: f64) -> Result<Self> {
        if s % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "damped Fourier basis needs an odd dimension, got {s}"
            )));
        }
        if !(nu > 0.0) || !(omega > 0.0) || !(ts > 0.0) {
            return Err(Error::InvalidArgument(
                "damped Fourier parameters must be positive".into(),
            ));
        }
        let decay = libm::exp(-nu * ts);
        let mut m = Matrix::zeros(s, s);
        let mut tau0 = Vector::zeros(s);
        m[(0, 0)] = decay;
        tau0[0] = 1.0;
        for j in 1..=(s - 1) / 2 {
            let theta = j as f64 * omega * ts;
            let (sn, cs) = (libm::sin(theta), libm::cos(theta));
            let r = 2 * j - 1;
            m[(r, r)] = decay * cs;
            m[(r, r + 1)] = -decay * sn;
            m[(r + 1, r)] = decay * sn;
            m[(r + 1, r + 1)] = decay * cs;
            tau0[r] = 1.0;
        }
        Self::checked(m, tau0, decay)
    }

    /// Family generated by a closed loop `M = A + B K`. The seed `tau0` is a free
    /// choice; it must make the resulting sequences linearly independent.
    pub fn lqr(a: &Matrix, b: &Matrix, k: &Matrix, tau0: Vector) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || k.shape() != (b.ncols(), n) {
            return Err(Error::dim("closed-loop family", n, k.ncols()));
        }
        let m = a + b * k;
        Self::new(m, tau0)
    }

    /// Superposition of families: block-diagonal `M`, concatenated `τ(0)`.
    pub fn block_union(families: &[BasisFamily]) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::InvalidArgument("block union of no families".into()));
        }
        let blocks: Vec<&Matrix> = families.iter().map(|f| &f.m).collect();
        let m = linalg::block_diag(&blocks);
        let tau0 = Vector::from_iterator(
            m.nrows(),
            families.iter().flat_map(|f| f.tau0.iter().copied()),
        );
        let rho = families.iter().map(|f| f.rho).fold(0.0, f64::max);
        if families.len() == 1 {
            return Ok(families[0].clone());
        }
        Self::checked(m, tau0, rho)
    }

    /// A classic head of length `head` followed by `tail`, which starts at
    /// sample `head`: the last head function feeds `τ_tail(0)` into the tail
    /// block, so `M = [[M_head, 0], [τ_tail(0)·e_headᵀ, M_tail]]`.
    ///
    /// Spans the same sequences as the block union of `classic(head)` and
    /// `tail`, with Gram matrix `blockdiag(I, J̄_tail)`.
    pub fn cascade(head: usize, tail: &BasisFamily) -> Result<Self> {
        if head == 0 {
            return Ok(tail.clone());
        }
        let st = tail.dim();
        let s = head + st;
        let mut m = Matrix::zeros(s, s);
        for i in 1..head {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..st {
            m[(head + i, head - 1)] = tail.tau0[i];
        }
        m.view_mut((head, head), (st, st)).copy_from(&tail.m);
        let mut tau0 = Vector::zeros(s);
        tau0[0] = 1.0;
        Self::checked(m, tau0, tail.rho)
    }

    pub fn dim(&self) -> usize {
        self.tau0.len()
    }

    pub fn shift_matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn tau0(&self) -> &Vector {
        &self.tau0
    }

    pub fn spectral_radius(&self) -> f64 {
        self.rho
    }

    /// `τ(k) = M^k τ(0)`, by repeated multiplication.
    pub fn tau(&self, k: usize) -> Vector {
        let mut t = self.tau0.clone();
        for _ in 0..k {
            t = &self.m * t;
        }
        t
    }

    /// Columns `τ(0), …, τ(count−1)`.
    pub fn tau_table(&self, count: usize) -> Matrix {
        let s = self.dim();
        let mut table = Matrix::zeros(s, count);
        if count == 0 {
            return table;
        }
        table.set_column(0, &self.tau0);
        for k in 1..count {
            let next = &self.m * table.column(k - 1);
            table.set_column(k, &next);
        }
        table
    }

    /// Exact Gram matrix from the discrete Lyapunov equation
    /// `J̄ = M J̄ Mᵀ + τ(0) τ(0)ᵀ`.
    pub fn gram(&self) -> Result<GramMatrix> {
        if self.rho >= 1.0 {
            return Err(Error::NotStable(self.rho));
        }
        let q = &self.tau0 * self.tau0.transpose();
        if self.rho == 0.0 {
            // Nilpotent: the sum is finite.
            let table = self.tau_table(self.dim() + 1);
            return Ok(GramMatrix(&table * table.transpose()));
        }
        Ok(GramMatrix(linalg::solve_discrete_lyapunov(&self.m, &q)?))
    }

    /// Cholesky factor `L` of the Gram matrix, `J̄ = L Lᵀ`.
    pub fn gram_factor(&self) -> Result<Matrix> {
        let gram = self.gram()?;
        gram.0
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite("Gram matrix"))
    }

    /// Equivalent family with `Σ τ'(k) τ'(k)ᵀ = I`, via `τ'(k) = L⁻¹ τ(k)`.
    /// Coefficients transform as `η' = Lᵀ η` (see [`BasisFamily::gram_factor`]).
    pub fn orthonormalize(&self) -> Result<Self> {
        let l = self.gram_factor()?;
        let lu = l.clone().lu();
        let m = lu
            .solve(&(&self.m * &l))
            .ok_or(Error::NotPositiveDefinite("Gram matrix"))?;
        let tau0 = lu
            .solve(&self.tau0)
            .ok_or(Error::NotPositiveDefinite("Gram matrix"))?;
        Ok(BasisFamily {
            m,
            tau0,
            rho: self.rho,
        })
    }

    fn check_param(&self, eta: &ParamVector) -> Result<()> {
        if eta.basis_dim() != self.dim() {
            return Err(Error::dim("parameter vector basis dimension", self.dim(), eta.basis_dim()));
        }
        Ok(())
    }

    /// One-sample time shift of a parametrized trajectory: `η̂ = (I_d ⊗ Mᵀ) η`.
    pub fn shift(&self, eta: &ParamVector) -> Result<ParamVector> {
        self.check_param(eta)?;
        let s = self.dim();
        let mt = self.m.transpose();
        let mut out = Vector::zeros(eta.data.len());
        for i in 0..eta.channels {
            let block = &mt * eta.channel(i);
            out.rows_mut(i * s, s).copy_from(&block);
        }
        Ok(ParamVector {
            data: out,
            channels: eta.channels,
        })
    }

    /// Trajectory value `(I_d ⊗ τ(k))ᵀ η` at sample `k`.
    pub fn eval(&self, eta: &ParamVector, k: usize) -> Result<Vector> {
        self.check_param(eta)?;
        Ok(eval_with_tau(eta, &self.tau(k)))
    }

    /// Samples `0..count` of a trajectory, one column per sample (`d × count`).
    pub fn trajectory(&self, eta: &ParamVector, count: usize) -> Result<Matrix> {
        self.check_param(eta)?;
        let table = self.tau_table(count);
        let coeffs = Matrix::from_column_slice(self.dim(), eta.channels, eta.data.as_slice());
        Ok(coeffs.transpose() * table)
    }
}

/// `(I_d ⊗ τ)ᵀ η` for a given basis vector.
pub fn eval_with_tau(eta: &ParamVector, tau: &Vector) -> Vector {
    Vector::from_iterator(eta.channels, (0..eta.channels).map(|i| eta.channel(i).dot(tau)))
}

/// `exp(M_c·ts)` for the Laguerre generator `M_c = −νI + N`, with `N` strictly lower
/// triangular with entries `−2ν`. `N` is nilpotent and commutes with `−νI`, so the
/// exponential is `e^{−ν ts}·Σ_{j<s} (N ts)^j / j!`.
fn laguerre_shift(s: usize, nu: f64, ts: f64) -> Matrix {
    let nts = Matrix::from_fn(s, s, |i, j| if i > j { -2.0 * nu * ts } else { 0.0 });
    let mut term = Matrix::identity(s, s);
    let mut sum = term.clone();
    for j in 1..s {
        term = &term * &nts / j as f64;
        sum += &term;
    }
    sum * libm::exp(-nu * ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_eta(rng: &mut ChaCha8Rng, channels: usize, s: usize) -> ParamVector {
        let v = Vector::from_fn(channels * s, |_, _| rng.random_range(-1.0..1.0));
        ParamVector::new(v, channels).unwrap()
    }

    #[test]
    fn classic_three_is_unit_impulses() {
        let f = BasisFamily::classic(3).unwrap();
        assert_eq!(f.tau(0), Vector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(f.tau(1), Vector::from_vec(vec![0.0, 1.0, 0.0]));
        assert_eq!(f.tau(2), Vector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(f.tau(3), Vector::zeros(3));
    }

    #[test]
    fn classic_one_is_single_step() {
        let f = BasisFamily::classic(1).unwrap();
        assert_eq!(f.shift_matrix()[(0, 0)], 0.0);
        assert_eq!(f.tau(1)[0], 0.0);
        assert_eq!(f.tau(7)[0], 0.0);
    }

    #[test]
    fn classic_readout_of_coordinates() {
        let f = BasisFamily::classic(3).unwrap();
        let eta = ParamVector::new(Vector::from_vec(vec![2.0, -1.0, 5.0]), 1).unwrap();
        let traj: Vec<f64> = (0..5).map(|k| f.eval(&eta, k).unwrap()[0]).collect();
        assert_eq!(traj, vec![2.0, -1.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn classic_zero_rejected() {
        assert!(BasisFamily::classic(0).is_err());
    }

    #[test]
    fn laguerre_scalar() {
        let f = BasisFamily::laguerre(1, 0.8, 0.02).unwrap();
        assert!((f.shift_matrix()[(0, 0)] - (-0.016f64).exp()).abs() < 1e-16);
        assert!((f.tau0()[0] - 1.6f64.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn laguerre_two_closed_form_and_series_oracle() {
        let f = BasisFamily::laguerre(2, 1.0, 0.02).unwrap();
        let e = (-0.02f64).exp();
        let expected = Matrix::from_row_slice(2, 2, &[e, 0.0, -0.04 * e, e]);
        assert!((f.shift_matrix() - &expected).amax() < 1e-15);

        // Truncated Taylor series of exp(M_c Ts) as an independent oracle.
        for s in [2usize, 5, 7] {
            let (nu, ts) = (1.3, 0.05);
            let mc = Matrix::from_fn(s, s, |i, j| {
                if i == j {
                    -nu
                } else if i > j {
                    -2.0 * nu
                } else {
                    0.0
                }
            }) * ts;
            let mut term = Matrix::identity(s, s);
            let mut series = term.clone();
            for j in 1..40 {
                term = &term * &mc / j as f64;
                series += &term;
            }
            let fam = BasisFamily::laguerre(s, nu, ts).unwrap();
            assert!((fam.shift_matrix() - series).amax() < 1e-12, "s={s}");
        }
    }

    #[test]
    fn laguerre_spectral_radius() {
        for s in [1usize, 4, 7] {
            let f = BasisFamily::laguerre(s, 14.0, 0.02).unwrap();
            assert!((f.spectral_radius() - (-0.28f64).exp()).abs() < 1e-15);
            assert!((f.spectral_radius() - 0.7558).abs() < 1e-4);
        }
    }

    #[test]
    fn laguerre_rejects_bad_parameters() {
        assert!(BasisFamily::laguerre(3, 0.0, 0.02).is_err());
        assert!(BasisFamily::laguerre(3, 1.0, -0.02).is_err());
    }

    #[test]
    fn damped_fourier_closed_form() {
        let (nu, omega, ts) = (1.0, 2.0 * core::f64::consts::PI, 0.25);
        let f = BasisFamily::damped_fourier(3, nu, omega, ts).unwrap();
        let t4 = f.tau(4);
        let e = (-1.0f64).exp();
        assert!((t4[0] - e).abs() < 1e-14);
        for k in 0..12 {
            let tk = f.tau(k);
            let damp = (-nu * k as f64 * ts).exp();
            let th = omega * k as f64 * ts;
            assert!((tk[0] - damp).abs() < 1e-13);
            assert!((tk[1] - damp * th.cos()).abs() < 1e-13);
            assert!((tk[2] - damp * th.sin()).abs() < 1e-13);
        }
    }

    #[test]
    fn damped_fourier_scalar_is_exponential() {
        let f = BasisFamily::damped_fourier(1, 0.5, 3.0, 0.1).unwrap();
        for k in 0..10 {
            assert!((f.tau(k)[0] - (-0.05 * k as f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn damped_fourier_rejects_even() {
        assert!(BasisFamily::damped_fourier(4, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn damped_fourier_shift_regression() {
        let f = BasisFamily::damped_fourier(5, 0.7, 3.0, 0.05).unwrap();
        let mut t = f.tau0().clone();
        for _ in 0..=100 {
            let next = f.shift_matrix() * &t;
            let err = (&next - f.shift_matrix() * &t).amax();
            assert!(err <= 1e-13);
            t = next;
        }
    }

    #[test]
    fn lqr_family_scalar() {
        let one = Matrix::from_element(1, 1, 1.0);
        let k = Matrix::from_element(1, 1, -0.5);
        let f = BasisFamily::lqr(&one, &one, &k, Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(f.shift_matrix()[(0, 0)], 0.5);
    }

    #[test]
    fn lqr_family_rejects_identity_closed_loop() {
        let one = Matrix::from_element(1, 1, 1.0);
        let k = Matrix::zeros(1, 1);
        match BasisFamily::lqr(&one, &one, &k, Vector::from_element(1, 1.0)) {
            Err(Error::NotStable(rho)) => assert!((rho - 1.0).abs() < 1e-15),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn union_dimensions_and_single_member() {
        let a = BasisFamily::classic(12).unwrap();
        let b = BasisFamily::laguerre(7, 14.0, 0.02).unwrap();
        let u = BasisFamily::block_union(&[a.clone(), b]).unwrap();
        assert_eq!(u.dim(), 19);
        assert_eq!(BasisFamily::block_union(&[a.clone()]).unwrap(), a);
        assert!(BasisFamily::block_union(&[]).is_err());
    }

    #[test]
    fn union_order_is_a_permutation() {
        let a = BasisFamily::laguerre(3, 0.8, 0.02).unwrap();
        let b = BasisFamily::damped_fourier(3, 0.5, 2.0, 0.02).unwrap();
        let ab = BasisFamily::block_union(&[a.clone(), b.clone()]).unwrap();
        let ba = BasisFamily::block_union(&[b, a]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eta = random_eta(&mut rng, 1, 6);
        let v = eta.as_vector();
        let permuted = Vector::from_vec(vec![v[3], v[4], v[5], v[0], v[1], v[2]]);
        let eta_p = ParamVector::new(permuted, 1).unwrap();
        for k in 0..60 {
            let x = ab.eval(&eta, k).unwrap()[0];
            let y = ba.eval(&eta_p, k).unwrap()[0];
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn cascade_gram_is_block_diagonal_and_span_matches_union() {
        let tail = BasisFamily::laguerre(7, 14.0, 0.02).unwrap();
        let c = BasisFamily::cascade(12, &tail).unwrap();
        assert_eq!(c.dim(), 19);
        let g = c.gram().unwrap();
        let gt = tail.gram().unwrap();
        let expected = linalg::block_diag(&[&Matrix::identity(12, 12), gt.as_matrix()]);
        assert!((g.as_matrix() - &expected).norm() < 1e-10 * expected.norm());

        let u = BasisFamily::block_union(&[BasisFamily::classic(12).unwrap(), tail]).unwrap();
        let tc = c.tau_table(300).transpose();
        let tu = u.tau_table(300).transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let eta = random_eta(&mut rng, 1, 19);
            let target = &tu * eta.as_vector();
            let fit = tc.clone().svd(true, true).solve(&target, 1e-14).unwrap();
            let resid = (&tc * fit - &target).amax();
            assert!(resid < 1e-9 * (1.0 + target.amax()), "{resid}");
        }
    }

    #[test]
    fn gram_of_classic_is_identity() {
        for s in [1usize, 3, 12] {
            let g = BasisFamily::classic(s).unwrap().gram().unwrap();
            assert_eq!(g.as_matrix(), &Matrix::identity(s, s));
        }
    }

    #[test]
    fn gram_scalar_laguerre_geometric_series() {
        let (nu, ts) = (0.8, 0.02);
        let g = BasisFamily::laguerre(1, nu, ts).unwrap().gram().unwrap();
        let expected = 2.0 * nu / (1.0 - (-2.0 * nu * ts).exp());
        assert!((g.as_matrix()[(0, 0)] - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn orthonormalize_classic_unchanged() {
        let f = BasisFamily::classic(4).unwrap();
        assert_eq!(f.orthonormalize().unwrap(), f);
    }

    #[test]
    fn orthonormalize_laguerre_gives_identity_gram() {
        let f = BasisFamily::laguerre(4, 0.8, 0.02).unwrap().orthonormalize().unwrap();
        let g = f.gram().unwrap();
        assert!((g.as_matrix() - Matrix::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn orthonormalize_preserves_trajectory_space() {
        let f = BasisFamily::laguerre(5, 1.1, 0.05).unwrap();
        let g = f.orthonormalize().unwrap();
        let l = f.gram_factor().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let eta = random_eta(&mut rng, 1, 5);
            let eta2 = ParamVector::new(l.transpose() * eta.as_vector(), 1).unwrap();
            for k in 0..200 {
                let d = f.eval(&eta, k).unwrap()[0] - g.eval(&eta2, k).unwrap()[0];
                assert!(d.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn shift_classic_and_zero() {
        let f = BasisFamily::classic(3).unwrap();
        let eta = ParamVector::new(Vector::from_vec(vec![1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(
            f.shift(&eta).unwrap().into_vector(),
            Vector::from_vec(vec![2.0, 3.0, 0.0])
        );
        let z = ParamVector::zeros(2, 3);
        assert_eq!(f.shift(&z).unwrap(), z);
    }

    #[test]
    fn shift_rejects_mismatch() {
        let f = BasisFamily::classic(3).unwrap();
        let eta = ParamVector::zeros(1, 4);
        assert!(f.shift(&eta).is_err());
        assert!(ParamVector::new(Vector::zeros(5), 2).is_err());
    }

    #[test]
    fn eval_first_coordinate_for_classic() {
        let f = BasisFamily::classic(3).unwrap();
        let eta =
            ParamVector::new(Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 2).unwrap();
        assert_eq!(f.eval(&eta, 0).unwrap(), Vector::from_vec(vec![1.0, 4.0]));
        assert_eq!(f.eval(&ParamVector::zeros(2, 3), 5).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn eval_decay_envelope() {
        let f = BasisFamily::laguerre(4, 2.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eta = random_eta(&mut rng, 1, 4);
        // ‖M^k‖ envelope, computed by brute force powers.
        let mut mk = Matrix::identity(4, 4);
        for k in 0..300 {
            let bound = mk.norm() * f.tau0().norm() * eta.as_vector().norm();
            assert!(f.eval(&eta, k).unwrap()[0].abs() <= bound * (1.0 + 1e-12));
            mk = f.shift_matrix() * mk;
        }
        // the envelope itself decays like ρ^k up to polynomial factors
        assert!(mk.norm() < 1e-4);
    }

    #[test]
    fn trajectory_matches_eval() {
        let f = BasisFamily::laguerre(3, 1.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta = random_eta(&mut rng, 2, 3);
        let traj = f.trajectory(&eta, 20).unwrap();
        for k in 0..20 {
            assert!((traj.column(k) - f.eval(&eta, k).unwrap()).amax() < 1e-14);
        }
    }
}
