//! Numerical toolkit for conformally covariant operators: discretized
//! operators on the flat torus and circle, the conjugated deformation family
//! `A_f(ε) = e^{ηεf} P e^{ηεf}`, eigenvalue branch tracking, rigidity
//! detection, a finite-step degeneracy-splitting loop and spectral window
//! diagnostics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod domains;
pub mod eigensolve;
pub mod error;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod perturb;
pub mod splitter;
pub mod verify;
pub mod windows;

pub use error::{Error, Result};
