//! Construction of solutions to degenerate Ornstein-Uhlenbeck Cauchy problems
//! perturbed by bounded, merely measurable-in-time second order diffusions,
//! together with the instruments needed to check that the classical a priori
//! estimates survive the perturbation.
//!
//! The equation treated here is
//!
//! ```text
//!   du/dt = L u + <Ax, Du> + Tr(S(t) D^2 u) + f(t, x),     u(0, .) = 0,
//! ```
//!
//! where `L` is either `Tr(B D^2)` (Gaussian case, `alpha = 2`) or the
//! generator of a possibly anisotropic alpha-stable process pushed through a
//! degenerate diffusion matrix `B = diag(B0, 0)`, and `S(t)` is a
//! positive-semidefinite matrix-valued function of time with no smoothness
//! whatsoever (piecewise-constant in this implementation). The pair `(A, B)`
//! must satisfy the Kalman rank condition; that condition induces the block
//! structure, the anisotropic dilations and the parabolic distance that every
//! module below builds on.
//!
//! The solution is constructed stochastically: the unperturbed part rides the
//! explicit OU semigroup, and the `Tr(S(t) D^2)` perturbation is replaced by a
//! compound-Poisson jump system whose averaged generator is a symmetric second
//! difference. As the spatial jump size shrinks the randomized solutions
//! converge to the solution of the perturbed equation, with all the constants
//! (maximum principle, Schauder, Sobolev) untouched along the way. The
//! `harness` module turns those statements into reproducible experiments.
//!
//! Module map:
//! - [`structure`]: Kalman condition, block dimensions, dilations, parabolic
//!   distance.
//! - [`levy`]: spectral measures, non-degeneracy, Levy exponents, stable
//!   increment sampling.
//! - [`semigroup`]: OU covariance, stochastic convolution, unperturbed solve.
//! - [`perturb`]: PSD square roots, jump systems, perturbed solve, epsilon
//!   sweeps, drift/potential transforms, elliptic embedding.
//! - [`norms`]: directional fractional Laplacians, anisotropic Zygmund-Holder
//!   and Sobolev seminorms.
//! - [`oracle`]: closed-form Gaussian reference solution and a finite
//!   difference reference solver for the kinetic benchmark.
//! - [`harness`]: config ingestion, experiment registry, CSV reports.

pub mod error;
pub mod harness;
pub mod levy;
pub mod linalg;
mod mc;
pub mod norms;
pub mod oracle;
pub mod perturb;
pub mod quad;
mod rng;
pub mod semigroup;
pub mod source;
pub mod structure;

pub use error::{Error, Result};
pub use mc::Estimate;
