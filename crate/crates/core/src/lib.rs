//! Numerical equilibria of continuum-of-alleles mutation–selection models.
//!
//! The equilibrium density `p` and mean fitness `λ` solve
//! `(T − U + λ) p = 0`, where `T` multiplies by the loss function
//! `w = u₁ − r − c` and `U` integrates against the mutation kernel. The crate
//! discretizes this problem on partitions of the type space, solves the
//! resulting Perron eigenproblem and studies convergence under refinement.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod cli;
pub mod config;
pub mod convergence;
pub mod discretize;
pub mod eigensolver;
pub mod matrix;
pub mod maxprinciple;
pub mod model;
pub mod quadrature;
