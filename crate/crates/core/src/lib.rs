//! Randomly shifted rank-1 lattice rules for Bayesian shape inversion of the
//! Poisson problem on randomly deformed domains.
//!
//! The crate is organised bottom-up:
//!
//! - [`field`]: the parametric domain map `V(x, y) = a(x, y) x`, its Jacobian and
//!   the pulled-back diffusion coefficient and source term.
//! - [`mesh`]: structured triangulations of the unit disk and point location.
//! - [`fem`]: a P1 finite element solver for the pulled-back Poisson problem.
//! - [`lattice`]: POD weights, fast component-by-component construction of
//!   generating vectors, random shifts and the worst-case error bound.
//! - [`bayes`]: synthetic data, Gaussian likelihood and the ratio estimator for
//!   the posterior mean of the domain map.
//! - [`cli`]: the experiment driver behind the `shape-qmc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod cli;
pub mod fem;
pub mod field;
pub mod lattice;
pub mod mesh;
pub mod random;
pub mod summation;

pub use field::{Mat2, Point2};
