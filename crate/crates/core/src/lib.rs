//! Structure-preserving particle-in-cell simulation of 1D1V ion dynamics with
//! Maxwell–Boltzmann electrons.
//!
//! Ions are weighted particles; electrons are slaved to the potential through
//! the nonlinear Poisson–Boltzmann equation. The coupled system is a
//! Hamiltonian ODE in particle phase space, integrated here either by exact
//! kick/drift splitting or by an energy-conserving discrete gradient.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop, clippy::approx_constant))]

pub mod config;
pub mod diagnostics;
pub mod dispersion;
pub mod dynamics;
pub mod experiments;
pub mod error;
pub mod fem;
pub mod field;
pub mod linalg;
pub mod mesh;
pub mod output;

pub use error::{Error, Result};
