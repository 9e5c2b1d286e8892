//! Shared fitting pipeline: a working design with an optional error
//! correction, restricted to a subset of rows, turned into a solver problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compdata::LogRatioMatrix;
use crate::correction::{
    corrected_quadratic, naive_quadratic, project_pieces, ProjectionOptions, ProjectionReport,
    QuadraticPieces,
};
use crate::error::{dim_err, Result, TarcoError};
use crate::linalg::{select_entries, select_rows};
use crate::mecov::{aggregate_sigma, AggregatedErrorCov, ErrorCov};
use crate::solver::{PenaltyKind, PenaltySpec, Problem, Solution};
use crate::tree::{AggregationMatrix, TaxTree};

/// Estimators compared in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Tarco(PenaltyKind),
    TracNaive,
    FlatCorrected,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Self::Tarco(PenaltyKind::Descendant) => "tarco-des".into(),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha }) if *alpha == 0.0 => "tarco".into(),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha }) if *alpha == 0.5 => "tarco-05".into(),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha }) if *alpha == -0.5 => "tarco-n05".into(),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha }) => format!("tarco-a{alpha}"),
            Self::Tarco(PenaltyKind::Flat) => "tarco-flat".into(),
            Self::TracNaive => "trac-naive".into(),
            Self::FlatCorrected => "flat-corrected".into(),
        }
    }

    /// The six estimators of the benchmark table, in column order.
    pub fn benchmark_set() -> Vec<Method> {
        vec![
            Self::Tarco(PenaltyKind::WeightedL1 { alpha: 0.0 }),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha: 0.5 }),
            Self::Tarco(PenaltyKind::WeightedL1 { alpha: -0.5 }),
            Self::Tarco(PenaltyKind::Descendant),
            Self::TracNaive,
            Self::FlatCorrected,
        ]
    }
}

/// A working design `n×d` with response, optional Gram correction, the
/// projection weights and optional sum-to-zero constraint.
#[derive(Debug, Clone)]
pub struct Design {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub correction: Option<AggregatedErrorCov>,
    pub proj_weights: DVector<f64>,
    pub constraint: Option<DVector<f64>>,
}

fn check_rows(z: &LogRatioMatrix, y: &DVector<f64>) -> Result<()> {
    if z.nrows() != y.len() {
        return Err(dim_err("design rows vs response", z.nrows(), y.len()));
    }
    Ok(())
}

fn check_sigma(z: &LogRatioMatrix, sigma: &ErrorCov) -> Result<()> {
    if sigma.n_parts() != z.ncols() {
        return Err(dim_err(
            "error covariance parts",
            z.ncols(),
            sigma.n_parts(),
        ));
    }
    if sigma.reference() != z.reference() {
        return Err(TarcoError::Validation(format!(
            "error covariance uses reference part {} but the design uses {}",
            sigma.reference() + 1,
            z.reference() + 1
        )));
    }
    Ok(())
}

impl Design {
    /// Tree-aggregated, bias-corrected design.
    pub fn tarco(
        z_tilde: &LogRatioMatrix,
        y: &DVector<f64>,
        agg: &AggregationMatrix,
        sigma: &ErrorCov,
    ) -> Result<Self> {
        check_rows(z_tilde, y)?;
        check_sigma(z_tilde, sigma)?;
        Ok(Self {
            z: agg.aggregate_design(z_tilde.values())?,
            y: y.clone(),
            correction: Some(aggregate_sigma(sigma, agg)?),
            proj_weights: agg.weights(),
            constraint: Some(agg.constraint()),
        })
    }

    /// Tree-aggregated design without correction.
    pub fn naive(
        z_tilde: &LogRatioMatrix,
        y: &DVector<f64>,
        agg: &AggregationMatrix,
    ) -> Result<Self> {
        check_rows(z_tilde, y)?;
        Ok(Self {
            z: agg.aggregate_design(z_tilde.values())?,
            y: y.clone(),
            correction: None,
            proj_weights: agg.weights(),
            constraint: Some(agg.constraint()),
        })
    }

    /// The `p−1` non-reference ALR columns, corrected, unconstrained.
    pub fn flat(z_tilde: &LogRatioMatrix, y: &DVector<f64>, sigma: &ErrorCov) -> Result<Self> {
        check_rows(z_tilde, y)?;
        check_sigma(z_tilde, sigma)?;
        let d = z_tilde.ncols() - 1;
        Ok(Self {
            z: z_tilde.reduced(),
            y: y.clone(),
            correction: Some(AggregatedErrorCov::from_matrix(sigma.matrix().clone())?),
            proj_weights: DVector::from_element(d, 1.0),
            constraint: None,
        })
    }

    pub fn for_method(
        method: Method,
        z_tilde: &LogRatioMatrix,
        y: &DVector<f64>,
        agg: &AggregationMatrix,
        sigma: &ErrorCov,
    ) -> Result<Self> {
        match method {
            Method::Tarco(_) => Self::tarco(z_tilde, y, agg, sigma),
            Method::TracNaive => Self::naive(z_tilde, y, agg),
            Method::FlatCorrected => Self::flat(z_tilde, y, sigma),
        }
    }

    pub fn nrows(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Unprojected quadratic pieces on `rows` (all rows if `None`).
    pub fn quadratic(&self, rows: Option<&[usize]>) -> Result<QuadraticPieces> {
        let (z, y) = match rows {
            Some(r) => (select_rows(&self.z, r), select_entries(&self.y, r)),
            None => (self.z.clone(), self.y.clone()),
        };
        match &self.correction {
            Some(s) => corrected_quadratic(&z, &y, s),
            None => naive_quadratic(&z, &y),
        }
    }

    /// Held-out pieces on `rows`, projected like the training problem.
    pub fn held_out(
        &self,
        rows: &[usize],
        proj: &ProjectionOptions,
    ) -> Result<(QuadraticPieces, Option<ProjectionReport>)> {
        let q = self.quadratic(Some(rows))?;
        if self.correction.is_some() {
            let (projected, report) = project_pieces(&q, &self.proj_weights, proj)?;
            Ok((projected, Some(report)))
        } else {
            Ok((q, None))
        }
    }

    /// Solver problem on `rows`; corrected Gram matrices are projected first.
    pub fn problem(
        &self,
        rows: Option<&[usize]>,
        proj: &ProjectionOptions,
    ) -> Result<(Problem, Option<ProjectionReport>)> {
        let q = self.quadratic(rows)?;
        if self.correction.is_some() {
            let (projected, report) = project_pieces(&q, &self.proj_weights, proj)?;
            Ok((
                Problem::new(&projected, self.constraint.as_ref())?,
                Some(report),
            ))
        } else {
            Ok((Problem::new(&q, self.constraint.as_ref())?, None))
        }
    }
}

/// Penalty for `method` on this tree (unit weights for the flat design).
pub fn method_penalty(method: Method, tree: &TaxTree, dim: usize) -> PenaltySpec {
    match method {
        Method::Tarco(kind) => PenaltySpec::new(kind, tree),
        Method::TracNaive => PenaltySpec::new(PenaltyKind::WeightedL1 { alpha: 0.0 }, tree),
        Method::FlatCorrected => PenaltySpec::flat(dim),
    }
}

/// Leaf-scale coefficients: `Aγ` for tree designs; for the flat design the
/// reference coefficient is minus the sum of the others.
pub fn leaf_coefficients(
    method: Method,
    gamma: &DVector<f64>,
    agg: &AggregationMatrix,
    reference: usize,
) -> Result<DVector<f64>> {
    match method {
        Method::FlatCorrected => expand_flat(gamma, reference),
        _ => agg.expand(gamma),
    }
}

pub fn expand_flat(reduced: &DVector<f64>, reference: usize) -> Result<DVector<f64>> {
    let p = reduced.len() + 1;
    if reference >= p {
        return Err(dim_err(
            "expand_flat reference",
            format!("< {p}"),
            reference,
        ));
    }
    let mut beta = DVector::zeros(p);
    let mut k = 0;
    for j in 0..p {
        if j != reference {
            beta[j] = reduced[k];
            k += 1;
        }
    }
    beta[reference] = -reduced.sum();
    Ok(beta)
}

/// Labels for the working coordinates of `method`.
pub fn coordinate_labels(method: Method, tree: &TaxTree, reference: usize) -> Vec<String> {
    match method {
        Method::FlatCorrected => tree
            .leaf_labels()
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != reference)
            .map(|(_, l)| l.clone())
            .collect(),
        _ => tree.labels().to_vec(),
    }
}

/// Single-λ fit of the full pipeline; returns the solution and the
/// projection report when a projection was needed.
pub fn fit_at(
    design: &Design,
    weights: &DVector<f64>,
    lambda: f64,
    proj: &ProjectionOptions,
    solver: &crate::solver::SolverOptions,
) -> Result<(Solution, Option<ProjectionReport>)> {
    let (problem, report) = design.problem(None, proj)?;
    Ok((problem.solve(weights, lambda, None, solver)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn flat_expansion_sums_to_zero() {
        let b = expand_flat(&dvector![1.0, 2.0, -0.5], 1).unwrap();
        assert_eq!(b, dvector![1.0, -2.5, 2.0, -0.5]);
        assert_eq!(b.sum(), 0.0);
    }

    #[test]
    fn method_names() {
        let names: Vec<String> = Method::benchmark_set().iter().map(Method::name).collect();
        assert_eq!(
            names,
            [
                "tarco",
                "tarco-05",
                "tarco-n05",
                "tarco-des",
                "trac-naive",
                "flat-corrected"
            ]
        );
    }
}
