//! Comparison estimators: tree aggregation on the contaminated design with
//! no correction, and a corrected lasso that ignores the tree.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::compdata::LogRatioMatrix;
use crate::correction::ProjectionOptions;
use crate::error::Result;
use crate::mecov::ErrorCov;
use crate::pipeline::{coordinate_labels, expand_flat, Design, Method};
use crate::solver::{FitResult, PenaltyKind, PenaltySpec, SolverOptions};
use crate::tree::TaxTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineSpec {
    TracNaive { alpha: f64 },
    FlatCorrected,
}

/// Same program as the corrected fit but on the naive Gram matrix, which is
/// positive semidefinite so no projection is applied.
pub fn fit_trac_naive(
    z_tilde: &LogRatioMatrix,
    y: &DVector<f64>,
    tree: &TaxTree,
    alpha: f64,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let agg = tree.aggregation();
    let design = Design::naive(z_tilde, y, &agg)?;
    let spec = PenaltySpec::new(PenaltyKind::WeightedL1 { alpha }, tree);
    let (problem, _) = design.problem(None, &ProjectionOptions::default())?;
    let sol = problem.solve(&spec.weight_vector(), lambda, None, opts)?;
    FitResult::from_tree(&Method::TracNaive.name(), &sol, &spec, tree, &agg)
}

/// Corrected, projected lasso on the non-reference ALR columns, solved
/// without the constraint; the reference coefficient closes the sum.
pub fn fit_flat_corrected(
    z_tilde: &LogRatioMatrix,
    y: &DVector<f64>,
    sigma: &ErrorCov,
    leaf_labels: &[String],
    lambda: f64,
    proj: &ProjectionOptions,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let design = Design::flat(z_tilde, y, sigma)?;
    let spec = PenaltySpec::flat(design.dim());
    let (problem, _) = design.problem(None, proj)?;
    let sol = problem.solve(&spec.weight_vector(), lambda, None, opts)?;
    let reference = z_tilde.reference();
    let beta = expand_flat(&sol.gamma, reference)?;
    let star = TaxTree::star(leaf_labels)?;
    let labels = coordinate_labels(Method::FlatCorrected, &star, reference);
    Ok(FitResult::from_parts(
        &Method::FlatCorrected.name(),
        &sol,
        &spec,
        &labels,
        star.leaf_labels(),
        &beta,
    ))
}
