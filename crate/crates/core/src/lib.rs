//! Renormalization of the coupling constant of `H(g) = H0 + g * V` under
//! step-by-step truncation of the basis, at zero and finite temperature,
//! together with exceptional-point and level-crossing analysis.

// `!(x > 0.0)` is used on purpose so that NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
mod ddouble;
pub mod eigen;
pub mod error;
pub mod exceptional;
pub mod feshbach;
pub mod flow;
pub mod model;
pub mod rng;
pub mod thermal;

pub use error::{Error, Result};
