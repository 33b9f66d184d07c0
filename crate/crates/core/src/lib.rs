//! Model predictive control with shift-invariant basis-function parametrizations.
//!
//! Input and state trajectories are written as `x(k) = (I_n ⊗ τ(k))ᵀ η_x` and
//! `u(k) = (I_m ⊗ τ(k))ᵀ η_u`, where the basis vectors obey `τ(k+1) = M τ(k)`
//! for a Schur-stable `M`. Shifting a trajectory by one sample is then the
//! linear map `η ↦ (I ⊗ Mᵀ) η`, which gives warm starts for free and, for linear
//! plants, recursive feasibility and stability without terminal ingredients.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. It contains:
//!
//! * [`basis`]: basis families, Gram matrices, shifting and evaluation.
//! * [`qp`]: a dense dual active-set QP solver and a two-phase simplex LP solver.
//! * [`admissible`]: the finite constraint horizon `N_max`.
//! * [`lti`]: QP assembly and receding-horizon stepping for linear plants.
//! * [`nonlinear`]: Galerkin-encoded dynamics, an SQP solver and the cart-pendulum model.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod admissible;
pub mod basis;
mod error;
pub mod linalg;
pub mod lti;
pub mod nonlinear;
pub mod qp;

pub use admissible::{compute_nmax, AffineConstraintSet, NmaxError, NmaxOptions, NmaxResult};
pub use basis::{BasisFamily, GramMatrix, ParamVector};
pub use error::Error;
pub use lti::{LtiController, LtiProblem, MpcStepResult};
pub use qp::{QpProblem, QpSolution, QpStatus, Tolerances};

/// Dynamically sized matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dynamically sized column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;

pub type Result<T, E = Error> = core::result::Result<T, E>;
