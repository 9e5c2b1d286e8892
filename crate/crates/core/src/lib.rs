//! Tree-aggregated sparse log-contrast regression for compositional
//! covariates observed with measurement error.
//!
//! The pipeline runs leaf-level count data through an additive log-ratio
//! transform, aggregates the design along a prespecified taxonomy, removes
//! the measurement-error bias from the Gram matrix, stabilizes it with a
//! leaf-count weighted positive-semidefinite projection and solves a
//! sum-to-zero constrained, tree-penalized quadratic program.
//!
//! Module map:
//! - [`tree`]: Newick parsing, aggregation matrix, coefficient aggregation.
//! - [`compdata`]: pseudocounts, closure and ALR transforms.
//! - [`mecov`]: error covariance estimation and aggregation.
//! - [`correction`]: naive/corrected quadratics and the weighted PSD projection.
//! - [`solver`]: constrained lasso solver with KKT certification and regularization paths.
//! - [`cv`]: K-fold selection of the penalty level.
//! - [`baselines`]: naive tree aggregation and flat corrected lasso.
//! - [`simulate`]: synthetic regimes and the evaluation metrics.
//! - [`bench`]: Monte Carlo comparison of the estimators.
//! - [`pipeline`]: designs shared by the estimators.
//! - [`cli`]: the command-line front end.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod compdata;
pub mod correction;
pub mod cv;
mod error;
pub mod io;
pub(crate) mod linalg;
pub mod mecov;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod tree;

pub use error::{Result, TarcoError};
