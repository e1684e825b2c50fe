//! Finite-dimensional reductions of adiabatic families of nonlinear maps.
//!
//! The crate builds, for a parametrized family `F_ε` with ε-dependent norms,
//! the stabilized linearization and its inverse, the contraction whose fixed
//! point is the solution map `σ_ε`, and the reduced finite-dimensional
//! equation `f_ε` on the kernel of the base-point linearization — and it
//! numerically audits every defining estimate of the construction on a set
//! of built-in model families.

pub mod diagnostics;
pub mod error;
pub mod family;
pub mod fredholm;
pub mod models;
pub mod reduction;
pub mod report;
pub mod sample;
pub mod solver;
pub mod spaces;

pub use error::{AfredError, Result};
pub use family::{AdiabaticFamily, FamilyConstants, FamilySpec, ModulusTable};
pub use fredholm::{InverseOperator, KernelCokernel, Stabilization};
pub use spaces::{NormFamily, ParameterBox, TangentVector, WeightMatrix};
