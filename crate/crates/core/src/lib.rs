//! Block-operator calculus and reduction pipeline for periodically driven
//! Hamiltonians whose spectral gaps shrink like `n^{α−1}`.

extern crate blas_src;
extern crate openblas_src;

pub mod antiadiabatic;
pub mod bounds;
pub mod diagonalization;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod models;
pub mod operator_classes;
pub mod spectral_basis;
pub mod time_periodic;

pub use bounds::{BoundCheck, CheckStatus, Mode};
pub use error::{Error, Result};
pub use operator_classes::{BlockOperator, ClassParams};
pub use spectral_basis::{GapCertificate, MultiplicityRule, SpectralBasis};
