//! K-fold selection of λ with the corrected, projected held-out quadratic
//! loss, which keeps the criterion bounded below.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{ProjectionOptions, ProjectionReport, QuadraticPieces};
use crate::error::{Result, TarcoError};
use crate::io::fmt_f64;
use crate::pipeline::Design;
use crate::rng::stream;
use crate::solver::{check_grid, solve_path, FitResult, Problem, Solution, SolverOptions};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each sample.
    pub assignment: Vec<usize>,
}

/// Balanced partition of `0..n` into `k` folds from a seeded permutation.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(TarcoError::Validation(format!(
            "need 2 <= K <= n for cross-validation, got K={k}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, "folds", 0));
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.k)
            .map(|f| self.assignment.iter().filter(|&&a| a == f).count())
            .collect()
    }
}

/// Per-fold training problems and held-out pieces, plus the full-data
/// problem, built once and shared by every penalty evaluated on them.
#[derive(Debug, Clone)]
pub struct PreparedFolds {
    pub train: Vec<Problem>,
    pub held_out: Vec<QuadraticPieces>,
    pub full: Problem,
    pub reports: Vec<ProjectionReport>,
}

pub fn prepare_folds(
    design: &Design,
    plan: &FoldPlan,
    proj: &ProjectionOptions,
) -> Result<PreparedFolds> {
    if plan.assignment.len() != design.nrows() {
        return Err(crate::error::dim_err(
            "fold plan",
            design.nrows(),
            plan.assignment.len(),
        ));
    }
    if let Some(f) = plan.sizes().iter().position(|&s| s < 2) {
        return Err(TarcoError::Validation(format!(
            "fold {} has fewer than 2 rows",
            f + 1
        )));
    }
    let parts: Vec<
        Result<(
            Problem,
            QuadraticPieces,
            Option<ProjectionReport>,
            Option<ProjectionReport>,
        )>,
    > = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (problem, report) = design.problem(Some(&plan.train_rows(f)), proj)?;
            let (held, held_report) = design.held_out(&plan.test_rows(f), proj)?;
            Ok((problem, held, report, held_report))
        })
        .collect();
    let (full, full_report) = design.problem(None, proj)?;
    let mut train = Vec::with_capacity(plan.k);
    let mut held_out = Vec::with_capacity(plan.k);
    let mut reports = Vec::new();
    for part in parts {
        let (p, h, r, hr) = part?;
        train.push(p);
        held_out.push(h);
        reports.extend(r);
        reports.extend(hr);
    }
    reports.extend(full_report);
    Ok(PreparedFolds {
        train,
        held_out,
        full,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_loss: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub curve: Vec<CvPoint>,
    pub selected_index: usize,
    pub solution: Solution,
}

impl CvOutcome {
    pub fn selected_lambda(&self) -> f64 {
        self.curve[self.selected_index].lambda
    }
}

/// Runs warm-started paths on every fold, picks the λ with the smallest
/// mean held-out loss (ties toward larger λ) and refits on all rows.
pub fn cv_path(
    prepared: &PreparedFolds,
    weights: &DVector<f64>,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<CvOutcome> {
    check_grid(grid)?;
    let k = prepared.train.len();
    let losses: Vec<Result<(Vec<f64>, usize)>> = prepared
        .train
        .par_iter()
        .zip(prepared.held_out.par_iter())
        .map(|(problem, held)| {
            let path = solve_path(problem, weights, grid, opts)?;
            let uncertified = path.iter().filter(|s| !s.converged && !s.unbounded).count();
            let loss = path
                .iter()
                .map(|s| {
                    if s.unbounded {
                        f64::INFINITY
                    } else {
                        held.loss(&s.gamma)
                    }
                })
                .collect();
            Ok((loss, uncertified))
        })
        .collect();
    let (losses, uncertified): (Vec<Vec<f64>>, Vec<usize>) = losses
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let uncertified: usize = uncertified.iter().sum();
    if uncertified > 0 {
        log::info!("{uncertified} fold solutions left uncertified across the grid");
    }
    let mut curve = Vec::with_capacity(grid.len());
    for (j, &lambda) in grid.iter().enumerate() {
        let vals: Vec<f64> = losses.iter().map(|l| l[j]).collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = if mean.is_finite() {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0)
        } else {
            f64::INFINITY
        };
        curve.push(CvPoint {
            lambda,
            mean_loss: mean,
            se: (var / k as f64).sqrt(),
        });
    }
    let mut best = 0;
    for (j, pt) in curve.iter().enumerate() {
        if pt.mean_loss < curve[best].mean_loss {
            best = j;
        }
    }
    // the full-data objective may be unbounded where every fold was not
    let path = solve_path(&prepared.full, weights, &grid[..=best], opts)?;
    let bounded = path.iter().rposition(|s| !s.unbounded).unwrap_or(0);
    if bounded < best {
        log::warn!(
            "full-data fit unbounded at lambda={:e}; using lambda={:e}",
            grid[best],
            grid[bounded]
        );
        best = bounded;
    }
    let solution = path.into_iter().nth(best).expect("nonempty grid prefix");
    Ok(CvOutcome {
        curve,
        selected_index: best,
        solution,
    })
}

/// Serializable cross-validation summary with the refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub seed: u64,
    pub curve: Vec<CvPoint>,
    pub selected_lambda: f64,
    pub fit: FitResult,
}

impl CvResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("lambda,mean_loss,se\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(p.lambda),
                fmt_f64(p.mean_loss),
                fmt_f64(p.se)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_sizes() {
        let mut a = kfold_split(4, 2, 1).unwrap().sizes();
        a.sort();
        assert_eq!(a, vec![2, 2]);
        let mut b = kfold_split(5, 2, 1).unwrap().sizes();
        b.sort();
        assert_eq!(b, vec![2, 3]);
        assert_eq!(
            kfold_split(10, 3, 8).unwrap(),
            kfold_split(10, 3, 8).unwrap()
        );
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
