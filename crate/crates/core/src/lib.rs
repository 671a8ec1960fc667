//! Multilevel local dependence toolkit.
//!
//! Gaussian calculus, smoothed Stein solutions, Wasserstein-type distance
//! estimators, multilevel dependence structures with an explicit error-bound
//! calculator, random field generators and concentration bounds.
//!
//! Logarithms of the system size `L` are taken in base 2 throughout.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod concentration;
pub mod distance;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod gaussian;
pub mod linalg;
pub mod multilevel;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;
pub mod stein;

pub use error::{Error, Result};
pub use gaussian::GaussianLaw;
pub use linalg::{SpdMatrix, Tensor};
